#include "freeevent/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "freeevent/errors.hpp"

namespace freeevent {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_top_level(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : s) {
    if (c == '[') ++depth;
    if (c == ']') --depth;
    if (c == sep && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string fmt(bool v) { return v ? "on" : "off"; }

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  const std::string v = trim(value);
  T out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("config key '" + std::string(key) + "': '" + v + "' is not a valid number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  const std::string v = trim(value);
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected on/off, got '" + v + "'");
}

std::vector<LayerAddress> parse_layers(std::string_view value) {
  std::vector<LayerAddress> out;
  const std::string v = trim(value);
  if (v.empty() || v == "all") return out;
  for (const std::string& item : split_top_level(v, ',')) {
    const auto part =
        item.find('[') != std::string::npos ? parse_layer_group(item) : std::vector{parse_layer_address(item)};
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::string format_layers(const std::vector<LayerAddress>& layers) {
  if (layers.empty()) return "all";
  std::string out;
  for (const LayerAddress& a : layers) out += (out.empty() ? "" : ",") + to_string(a);
  return out;
}

using Setter = std::function<void(RunConfig&, std::string_view, std::string_view)>;
using Getter = std::function<std::string(const RunConfig&)>;

struct Key {
  std::string name;
  Setter set;
  Getter get;  // empty for write-only aliases
};

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"sampler.T", [](RunConfig& c, auto k, auto v) { c.T = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.T); }},
      {"sampler.beta_start", [](RunConfig& c, auto k, auto v) { c.beta_start = parse_number<double>(k, v); },
       [](const RunConfig& c) { return fmt(c.beta_start); }},
      {"sampler.beta_end", [](RunConfig& c, auto k, auto v) { c.beta_end = parse_number<double>(k, v); },
       [](const RunConfig& c) { return fmt(c.beta_end); }},
      {"sampler.steps", [](RunConfig& c, auto k, auto v) { c.sampling_steps = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.sampling_steps); }},
      {"cfg.scale", [](RunConfig& c, auto k, auto v) { c.cfg_scale = parse_number<double>(k, v); },
       [](const RunConfig& c) { return fmt(c.cfg_scale); }},
      {"guidance.eta", [](RunConfig& c, auto k, auto v) { c.guidance.eta = parse_number<double>(k, v); },
       [](const RunConfig& c) { return fmt(c.guidance.eta); }},
      {"guidance.steps", [](RunConfig& c, auto k, auto v) { c.guidance.guidance_steps = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.guidance.guidance_steps); }},
      {"guidance.layers", [](RunConfig& c, auto, auto v) { c.guidance.energy_layers = parse_layers(v); },
       [](const RunConfig& c) { return format_layers(c.guidance.energy_layers); }},
      {"regulation.all_steps", [](RunConfig& c, auto k, auto v) { c.guidance.regulate_all_steps = parse_bool(k, v); },
       [](const RunConfig& c) { return fmt(c.guidance.regulate_all_steps); }},
      {"regulation.renormalize", [](RunConfig& c, auto k, auto v) { c.renormalize = parse_bool(k, v); },
       [](const RunConfig& c) { return fmt(c.renormalize); }},
      {"injection.features", [](RunConfig& c, auto, auto v) { c.feature_sites = parse_sites(v); },
       [](const RunConfig& c) { return format_sites(c.injection_schedule().features); }},
      {"injection.self_attn", [](RunConfig& c, auto, auto v) { c.self_attn_sites = parse_sites(v); },
       [](const RunConfig& c) { return format_sites(c.injection_schedule().self_attn); }},
      {"injection.both_branches", [](RunConfig& c, auto k, auto v) { c.inject_both_branches = parse_bool(k, v); },
       [](const RunConfig& c) { return fmt(c.inject_both_branches); }},
      {"reference.mode", [](RunConfig& c, auto, auto v) { c.reference_mode = parse_reference_mode(trim(v)); },
       [](const RunConfig& c) { return std::string(to_string(c.reference_mode)); }},
      {"reference.streaming", [](RunConfig& c, auto k, auto v) { c.streaming = parse_bool(k, v); },
       [](const RunConfig& c) { return fmt(c.streaming); }},
      {"reference.image", [](RunConfig& c, auto, auto v) { c.reference_image = trim(v); },
       [](const RunConfig& c) { return c.reference_image; }},
      {"reference.masks",
       [](RunConfig& c, auto, auto v) {
         c.masks.clear();
         for (const std::string& m : split_top_level(v, ','))
           if (!m.empty()) c.masks.push_back(m);
       },
       [](const RunConfig& c) {
         std::string out;
         for (const std::string& m : c.masks) out += (out.empty() ? "" : ",") + m;
         return out;
       }},
      {"seed", [](RunConfig& c, auto k, auto v) { c.seed = parse_number<std::uint64_t>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"toggles.guidance", [](RunConfig& c, auto k, auto v) { c.toggles.guidance = parse_bool(k, v); },
       [](const RunConfig& c) { return fmt(c.toggles.guidance); }},
      {"toggles.regulation", [](RunConfig& c, auto k, auto v) { c.toggles.regulation = parse_bool(k, v); },
       [](const RunConfig& c) { return fmt(c.toggles.regulation); }},
      {"toggles.injection", [](RunConfig& c, auto k, auto v) { c.toggles.injection = parse_bool(k, v); },
       [](const RunConfig& c) { return fmt(c.toggles.injection); }},
      {"toggles.all",
       [](RunConfig& c, auto k, auto v) {
         const bool on = parse_bool(k, v);
         c.toggles = Toggles{on, on, on};
       },
       nullptr},
      {"model.weights", [](RunConfig& c, auto, auto v) { c.weights = trim(v); },
       [](const RunConfig& c) { return c.weights; }},
      {"model.autoencoder_stride",
       [](RunConfig& c, auto k, auto v) { c.autoencoder_stride = parse_number<int>(k, v); },
       [](const RunConfig& c) { return std::to_string(c.autoencoder_stride); }},
      {"prompt", [](RunConfig& c, auto, auto v) { c.prompt = trim(v); }, [](const RunConfig& c) { return c.prompt; }},
  };
  return table;
}

int parse_span_bound(const std::string& s, const std::string& item) {
  int v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ParameterError("binding '" + item + "': malformed token range");
  return v;
}

}  // namespace

Toggles parse_toggle_set(std::string_view name) {
  static const std::map<std::string, Toggles, std::less<>> sets = {
      {"all-on", {true, true, true}},          {"all-off", {false, false, false}},
      {"no-guidance", {false, true, true}},    {"no-regulation", {true, false, true}},
      {"no-injection", {true, true, false}},   {"guidance-only", {true, false, false}},
      {"regulation-only", {false, true, false}}, {"injection-only", {false, false, true}},
  };
  const auto it = sets.find(name);
  if (it == sets.end()) {
    std::string known;
    for (const auto& [k, _] : sets) known += (known.empty() ? "" : ", ") + k;
    throw ParameterError("unknown toggle set '" + std::string(name) + "' (known: " + known + ")");
  }
  return it->second;
}

std::string toggle_set_name(const Toggles& t) {
  if (t.guidance && t.regulation && t.injection) return "all-on";
  if (!t.guidance && !t.regulation && !t.injection) return "all-off";
  if (!t.guidance && t.regulation && t.injection) return "no-guidance";
  if (t.guidance && !t.regulation && t.injection) return "no-regulation";
  if (t.guidance && t.regulation && !t.injection) return "no-injection";
  if (t.guidance) return "guidance-only";
  if (t.regulation) return "regulation-only";
  return "injection-only";
}

InjectionSchedule RunConfig::injection_schedule() const {
  InjectionSchedule s = default_schedule(std::max(1, sampling_steps));
  if (feature_sites) s.features = *feature_sites;
  if (self_attn_sites) s.self_attn = *self_attn_sites;
  return s;
}

NoiseSchedule RunConfig::noise_schedule() const { return build_schedule(T, beta_start, beta_end, sampling_steps); }

void apply_setting(RunConfig& config, std::string_view key, std::string_view value) {
  const std::string k = trim(key);
  for (const Key& entry : keys()) {
    if (entry.name != k) continue;
    try {
      entry.set(config, k, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError("config key '" + k + "': " + e.what());
    }
    return;
  }
  throw ConfigError("unknown config key '" + k + "'");
}

void apply_assignment(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  apply_setting(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    try {
      apply_assignment(base, t);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string serialize_run_config(const RunConfig& config) {
  std::string out;
  for (const Key& k : keys())
    if (k.get) out += k.name + "=" + k.get(config) + "\n";
  return out;
}

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const Key& k : keys()) n.push_back(k.name);
    return n;
  }();
  return names;
}

PromptBinding parse_prompt_binding(std::string_view text, const Vocabulary& vocab) {
  PromptBinding out;
  const auto bar = text.find('|');
  out.token_ids = vocab.tokenize(trim(text.substr(0, bar)));
  if (bar == std::string_view::npos) return out;
  const int n_tokens = static_cast<int>(out.token_ids.size()) + 1;
  for (const std::string& item : split_top_level(text.substr(bar + 1), ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos || item[0] != 'e')
      throw ParameterError("binding '" + item + "' is not of the form eN=[mask:]tokensA-B");
    EntityBinding b;
    b.entity_id = parse_span_bound(trim(item.substr(1, eq - 1)), item);
    std::string rhs = trim(item.substr(eq + 1));
    const auto tpos = rhs.rfind("tokens");
    if (tpos == std::string::npos) throw ParameterError("binding '" + item + "' has no tokensA-B range");
    if (tpos > 0) {
      if (rhs[tpos - 1] != ':') throw ParameterError("binding '" + item + "': expected mask:tokensA-B");
      b.mask = rhs.substr(0, tpos - 1);
    }
    const std::string range = rhs.substr(tpos + 6);
    const auto dash = range.find('-');
    b.span.first = parse_span_bound(range.substr(0, dash), item);
    b.span.last = dash == std::string::npos ? b.span.first : parse_span_bound(range.substr(dash + 1), item);
    if (b.span.first < 1 || b.span.last < b.span.first || b.span.last >= n_tokens)
      throw IndexError("binding '" + item + "': tokens must lie within 1-" + std::to_string(n_tokens - 1));
    for (const EntityBinding& prev : out.entities)
      if (prev.entity_id == b.entity_id) throw ParameterError("entity e" + std::to_string(b.entity_id) + " bound twice");
    out.entities.push_back(std::move(b));
  }
  return out;
}

}  // namespace freeevent
