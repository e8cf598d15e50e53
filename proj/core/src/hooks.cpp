#include "freeevent/hooks.hpp"

#include <cctype>

#include "freeevent/errors.hpp"

namespace freeevent {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

int parse_index(std::string_view s, std::string_view whole) {
  s = trim(s);
  if (s.empty()) throw AddressError("malformed layer address '" + std::string(whole) + "'");
  int v = 0;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw AddressError("malformed layer address '" + std::string(whole) + "'");
    v = v * 10 + (c - '0');
  }
  return v;
}

// Splits "dec2" into section and block.
std::pair<Section, int> parse_block(std::string_view head, std::string_view whole) {
  head = trim(head);
  std::size_t digits = head.size();
  while (digits > 0 && std::isdigit(static_cast<unsigned char>(head[digits - 1]))) --digits;
  const std::string_view name = head.substr(0, digits);
  const std::string_view num = head.substr(digits);
  Section section;
  if (name == "enc" || name == "encoder") section = Section::encoder;
  else if (name == "mid") section = Section::mid;
  else if (name == "dec" || name == "decoder") section = Section::decoder;
  else throw AddressError("unknown section in layer address '" + std::string(whole) + "'");
  if (num.empty() && section != Section::mid)
    throw AddressError("missing block index in layer address '" + std::string(whole) + "'");
  return {section, num.empty() ? 0 : parse_index(num, whole)};
}

}  // namespace

std::string to_string(const LayerAddress& a) {
  const char* s = a.section == Section::encoder ? "enc" : a.section == Section::mid ? "mid" : "dec";
  return std::string(s) + std::to_string(a.block) + ":" + std::to_string(a.layer);
}

LayerAddress parse_layer_address(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw AddressError("layer address '" + std::string(text) + "' lacks ':'");
  auto [section, block] = parse_block(text.substr(0, colon), text);
  return LayerAddress{section, block, parse_index(text.substr(colon + 1), text)};
}

std::vector<LayerAddress> parse_layer_group(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) throw AddressError("layer group '" + std::string(text) + "' lacks ':'");
  auto [section, block] = parse_block(text.substr(0, colon), text);
  std::string_view rest = trim(text.substr(colon + 1));
  if (!rest.empty() && rest.front() == '[') {
    if (rest.back() != ']') throw AddressError("unterminated layer list in '" + std::string(text) + "'");
    rest = rest.substr(1, rest.size() - 2);
  }
  std::vector<LayerAddress> out;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    out.push_back({section, block, parse_index(rest.substr(0, comma), text)});
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  if (out.empty()) throw AddressError("empty layer list in '" + std::string(text) + "'");
  return out;
}

std::string_view to_string(Quantity q) {
  switch (q) {
    case Quantity::f: return "f";
    case Quantity::sa: return "SA";
    case Quantity::ca: return "CA";
  }
  return "?";
}

const std::map<LayerAddress, Tensor>& AttentionTrace::of(Quantity q) const {
  return q == Quantity::f ? f : q == Quantity::sa ? sa : ca;
}

std::map<LayerAddress, Tensor>& AttentionTrace::of(Quantity q) {
  return q == Quantity::f ? f : q == Quantity::sa ? sa : ca;
}

}  // namespace freeevent
