#include "freeevent/weights_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "freeevent/errors.hpp"

namespace freeevent {

namespace {

constexpr std::array<char, 8> kMagic{'F', 'E', 'V', 'T', 'W', 'G', 'T', '1'};

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) os.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::istream& is) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw DataError("truncated binary file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<T>(v);
}

}  // namespace

namespace binio {
void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { put_le(os, v); }
void write_i32(std::ostream& os, std::int32_t v) { put_le(os, static_cast<std::uint32_t>(v)); }
void write_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v)); }
void write_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }
void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void write_tensor_f64(std::ostream& os, const Tensor& t) {
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) write_i32(os, d);
  for (double v : t.storage()) write_f64(os, v);
}
std::uint32_t read_u32(std::istream& is) { return get_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return get_le<std::uint64_t>(is); }
std::int32_t read_i32(std::istream& is) { return static_cast<std::int32_t>(get_le<std::uint32_t>(is)); }
float read_f32(std::istream& is) { return std::bit_cast<float>(get_le<std::uint32_t>(is)); }
double read_f64(std::istream& is) { return std::bit_cast<double>(get_le<std::uint64_t>(is)); }
std::string read_string(std::istream& is) {
  const std::uint32_t n = read_u32(is);
  if (n > (1u << 20)) throw DataError("implausible string length in binary file");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw DataError("truncated binary file");
  return s;
}
Tensor read_tensor_f64(std::istream& is) {
  const std::uint32_t rank = read_u32(is);
  if (rank > 8) throw DataError("implausible tensor rank in binary file");
  Shape shape(rank);
  for (auto& d : shape) {
    d = read_i32(is);
    if (d < 0) throw DataError("negative dimension in binary file");
  }
  Tensor t(shape);
  for (double& v : t.storage()) v = read_f64(is);
  return t;
}
}  // namespace binio

void save_weights(const std::filesystem::path& path, const Weights& weights) {
  using namespace binio;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write weights " + path.string());
  os.write(kMagic.data(), kMagic.size());
  write_u32(os, kWeightsVersion);
  const UNetConfig& c = weights.config;
  for (int v : {c.latent_channels, c.latent_size, c.channels, c.heads, c.groups, c.d_text, c.vocab_size, c.time_dim})
    write_i32(os, v);
  write_u64(os, c.text_seed);

  write_u32(os, static_cast<std::uint32_t>(weights.tensors.size()));
  for (const auto& [name, t] : weights.tensors) {
    write_string(os, name);
    write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) write_i32(os, d);
  }
  for (const auto& [name, t] : weights.tensors)
    for (double v : t.storage()) write_f32(os, static_cast<float>(v));
  if (!os) throw IoError("failed writing weights " + path.string());
}

Weights load_weights(const std::filesystem::path& path) {
  using namespace binio;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weights " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw DataError(path.string() + " is not a weights file");
  const std::uint32_t version = read_u32(is);
  if (version != kWeightsVersion)
    throw DataError("unsupported weights version " + std::to_string(version) + " in " + path.string());
  Weights w;
  UNetConfig& c = w.config;
  for (int* field : {&c.latent_channels, &c.latent_size, &c.channels, &c.heads, &c.groups, &c.d_text, &c.vocab_size,
                     &c.time_dim})
    *field = read_i32(is);
  c.text_seed = read_u64(is);

  const std::uint32_t count = read_u32(is);
  if (count > 100000) throw DataError("implausible tensor count in " + path.string());
  std::vector<std::pair<std::string, Shape>> manifest;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = read_string(is);
    const std::uint32_t rank = read_u32(is);
    if (rank > 8) throw DataError("implausible tensor rank in " + path.string());
    Shape shape(rank);
    for (auto& d : shape) d = read_i32(is);
    manifest.emplace_back(std::move(name), std::move(shape));
  }
  for (auto& [name, shape] : manifest) {
    Tensor t(shape);
    for (double& v : t.storage()) v = static_cast<double>(read_f32(is));
    w.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in " + path.string());
  return w;
}

Weights quantized_f32(const Weights& weights) {
  Weights out = weights;
  for (auto& [name, t] : out.tensors)
    for (double& v : t.storage()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  std::uint64_t h = seed;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t file_digest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  const std::string bytes = ss.str();
  return fnv1a64(bytes.data(), bytes.size());
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace freeevent
