#include "freeevent/transfer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "freeevent/errors.hpp"
#include "freeevent/weights_io.hpp"

namespace freeevent {

namespace {

constexpr std::array<char, 8> kRefMagic{'F', 'E', 'V', 'T', 'R', 'E', 'F', '1'};
constexpr std::uint32_t kRefVersion = 1;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

int parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ParameterError("malformed " + what + " '" + s + "'");
}

InterventionSet record_only(const InjectionSchedule& schedule, int k) {
  InterventionSet iv;
  for (const InjectionSite& s : schedule.features)
    if (s.steps.contains(k)) iv.record_at(s.address, Quantity::f);
  for (const InjectionSite& s : schedule.self_attn)
    if (s.steps.contains(k)) iv.record_at(s.address, Quantity::sa);
  return iv;
}

LatentTensor draw_noise(std::uint64_t seed, const Shape& shape) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  LatentTensor eps(shape);
  for (double& v : eps.storage()) v = normal(rng);
  return eps;
}

// Reference latent z_t^R for every active step.
std::map<int, LatentTensor> reference_latents(const ReferenceContext& base, const NoiseSchedule& s, const UNet& net,
                                              const InjectionSchedule& schedule, ReferenceMode mode) {
  std::map<int, LatentTensor> out;
  const std::vector<int> steps = schedule.active_steps();
  if (steps.empty()) return out;
  if (mode == ReferenceMode::shared_noise) {
    for (int k : steps) out[k] = forward_noise(base.z0, s.step_indices[static_cast<std::size_t>(k)], base.shared_eps, s);
    return out;
  }
  // Deterministic DDIM inversion, walking the ladder from t = 0 upwards.
  const PromptEmbedding null_prompt = embed_prompt({}, net.text_encoder());
  const std::set<int> wanted(steps.begin(), steps.end());
  LatentTensor z = base.z0;
  for (int k = s.sampling_steps - 1; k >= *wanted.begin(); --k) {
    const int t = s.step_indices[static_cast<std::size_t>(k)];
    const int t_prev = s.previous_timestep(k);
    const LatentTensor eps = denoise_forward(net, z, t, null_prompt).eps;
    const double a_prev = s.alpha_bar_at(t_prev), a = s.alpha_bar_at(t);
    LatentTensor next(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double x0 = (z[i] - std::sqrt(1.0 - a_prev) * eps[i]) / std::sqrt(a_prev);
      next[i] = std::sqrt(a) * x0 + std::sqrt(1.0 - a) * eps[i];
    }
    z = std::move(next);
    if (wanted.count(k)) out[k] = z;
  }
  return out;
}

AttentionTrace extract(const UNet& net, const LatentTensor& z_t, int t, const InjectionSchedule& schedule, int k) {
  const PromptEmbedding null_prompt = embed_prompt({}, net.text_encoder());
  return denoise_forward(net, z_t, t, null_prompt, record_only(schedule, k)).trace;
}

InterventionSet interventions_from(const AttentionTrace& trace, int k, const InjectionSchedule& schedule) {
  InterventionSet iv;
  for (const InjectionSite& s : schedule.features) {
    if (!s.steps.contains(k)) continue;
    const auto it = trace.f.find(s.address);
    if (it == trace.f.end())
      throw ConsistencyError("reference has no feature at " + to_string(s.address) + " for step " + std::to_string(k));
    iv.replace_f[s.address] = it->second;
  }
  for (const InjectionSite& s : schedule.self_attn) {
    if (!s.steps.contains(k)) continue;
    const auto it = trace.sa.find(s.address);
    if (it == trace.sa.end())
      throw ConsistencyError("reference has no self-attention at " + to_string(s.address) + " for step " +
                             std::to_string(k));
    iv.replace_sa[s.address] = it->second;
  }
  return iv;
}

ReferenceContext base_context(const Image& reference, std::uint64_t seed, const NoiseSchedule& s, const UNet& net,
                              const InjectionSchedule& schedule, const ReferenceOptions& options) {
  validate_schedule(schedule, net, s.sampling_steps);
  ReferenceContext ctx;
  ctx.z0 = encode_image(reference, options.autoencoder);
  const Shape want{net.config().latent_channels, net.config().latent_size, net.config().latent_size};
  if (ctx.z0.shape() != want)
    throw ShapeError("reference encodes to " + shape_string(ctx.z0.shape()) + " but the backbone expects " +
                     shape_string(want));
  ctx.shared_eps = draw_noise(seed, ctx.z0.shape());
  ctx.timesteps = s.step_indices;
  return ctx;
}

void write_trace_map(std::ostream& os, const std::map<LayerAddress, Tensor>& m) {
  binio::write_u32(os, static_cast<std::uint32_t>(m.size()));
  for (const auto& [a, t] : m) {
    binio::write_string(os, to_string(a));
    binio::write_tensor_f64(os, t);
  }
}

std::map<LayerAddress, Tensor> read_trace_map(std::istream& is) {
  std::map<LayerAddress, Tensor> m;
  const std::uint32_t n = binio::read_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    const LayerAddress a = parse_layer_address(binio::read_string(is));
    m[a] = binio::read_tensor_f64(is);
  }
  return m;
}

}  // namespace

std::vector<int> InjectionSchedule::active_steps() const {
  std::set<int> steps;
  for (const auto* list : {&features, &self_attn})
    for (const InjectionSite& s : *list)
      for (int k = s.steps.first; k <= s.steps.last; ++k) steps.insert(k);
  return {steps.begin(), steps.end()};
}

InjectionSchedule default_schedule(int sampling_steps) {
  if (sampling_steps < 1) throw ParameterError("default_schedule: sampling_steps must be >= 1");
  InjectionSchedule s;
  s.features.push_back({LayerAddress{Section::decoder, 1, 1}, {0, sampling_steps - 1}});
  const int half = sampling_steps / 2;
  if (half == 0) return s;
  const StepRange early{0, half - 1};
  for (int l : {1, 2}) s.self_attn.push_back({LayerAddress{Section::decoder, 1, l}, early});
  for (int b : {2, 3})
    for (int l : {0, 1, 2}) s.self_attn.push_back({LayerAddress{Section::decoder, b, l}, early});
  return s;
}

void validate_schedule(const InjectionSchedule& schedule, const UNet& net, int sampling_steps) {
  auto check = [&](const InjectionSite& s, bool needs_attention) {
    const LayerInfo& info = net.layer(s.address);
    if (needs_attention && !info.attention)
      throw AddressError("layer " + to_string(s.address) + " has no self-attention to inject");
    if (s.steps.first < 0 || s.steps.last < s.steps.first || s.steps.last >= sampling_steps)
      throw ParameterError("injection range " + std::to_string(s.steps.first) + "-" + std::to_string(s.steps.last) +
                           " at " + to_string(s.address) + " is outside steps 0-" + std::to_string(sampling_steps - 1));
  };
  for (const InjectionSite& s : schedule.features) check(s, false);
  for (const InjectionSite& s : schedule.self_attn) check(s, true);
}

std::vector<InjectionSite> parse_sites(std::string_view text) {
  std::vector<InjectionSite> out;
  const std::string all = trim(text);
  if (all.empty() || all == "none") return out;
  std::vector<std::string> items;
  std::string cur;
  int depth = 0;
  for (char c : all) {
    if (c == '[') ++depth;
    if (c == ']') --depth;
    if (c == ',' && depth == 0) {
      items.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  items.push_back(trim(cur));
  for (const std::string& item : items) {
    const auto at = item.find('@');
    if (at == std::string::npos) throw ParameterError("injection site '" + item + "' lacks an @first-last step range");
    const std::string where = trim(std::string_view(item).substr(0, at));
    const std::string range = trim(std::string_view(item).substr(at + 1));
    StepRange r;
    if (const auto dash = range.find('-'); dash != std::string::npos) {
      r.first = parse_int(range.substr(0, dash), "step range");
      r.last = parse_int(range.substr(dash + 1), "step range");
    } else {
      r.first = r.last = parse_int(range, "step range");
    }
    if (r.first < 0 || r.last < r.first) throw ParameterError("empty step range '" + range + "'");
    const auto addresses =
        where.find('[') != std::string::npos ? parse_layer_group(where) : std::vector{parse_layer_address(where)};
    for (const LayerAddress& a : addresses) out.push_back({a, r});
  }
  return out;
}

std::string format_sites(const std::vector<InjectionSite>& sites) {
  if (sites.empty()) return "none";
  std::string out;
  for (std::size_t i = 0; i < sites.size();) {
    std::size_t j = i + 1;
    while (j < sites.size() && sites[j].address.section == sites[i].address.section &&
           sites[j].address.block == sites[i].address.block && sites[j].steps == sites[i].steps)
      ++j;
    const std::string first = to_string(sites[i].address);
    std::string block = first.substr(0, first.find(':'));
    std::string layers;
    for (std::size_t k = i; k < j; ++k) layers += (k > i ? "," : "") + std::to_string(sites[k].address.layer);
    if (!out.empty()) out += ',';
    out += block + ":[" + layers + "]@" + std::to_string(sites[i].steps.first) + "-" +
           std::to_string(sites[i].steps.last);
    i = j;
  }
  return out;
}

std::uint64_t schedule_hash(const InjectionSchedule& schedule) {
  const std::string s = "f=" + format_sites(schedule.features) + ";sa=" + format_sites(schedule.self_attn);
  return fnv1a64(s.data(), s.size());
}

std::string_view to_string(ReferenceMode mode) {
  return mode == ReferenceMode::shared_noise ? "shared_noise" : "ddim_inversion";
}

ReferenceMode parse_reference_mode(std::string_view text) {
  if (text == "shared_noise") return ReferenceMode::shared_noise;
  if (text == "ddim_inversion") return ReferenceMode::ddim_inversion;
  throw ParameterError("unknown reference mode '" + std::string(text) + "' (shared_noise, ddim_inversion)");
}

ReferenceContext prepare_reference(const Image& reference, std::uint64_t seed, const NoiseSchedule& s,
                                   const UNet& net, const InjectionSchedule& schedule,
                                   const ReferenceOptions& options) {
  ReferenceContext ctx = base_context(reference, seed, s, net, schedule, options);
  for (const auto& [k, z] : reference_latents(ctx, s, net, schedule, options.mode))
    ctx.traces[k] = extract(net, z, s.step_indices[static_cast<std::size_t>(k)], schedule, k);
  return ctx;
}

InterventionSet build_interventions(const ReferenceContext& ctx, int step_index, const InjectionSchedule& schedule) {
  if (schedule.empty()) return {};
  if (step_index < 0 || (!ctx.timesteps.empty() && step_index >= static_cast<int>(ctx.timesteps.size())))
    throw IndexError("step index " + std::to_string(step_index) + " is outside the sampling ladder");
  const auto it = ctx.traces.find(step_index);
  static const AttentionTrace kEmpty;
  return interventions_from(it == ctx.traces.end() ? kEmpty : it->second, step_index, schedule);
}

StreamingReference::StreamingReference(const Image& reference, std::uint64_t seed, const NoiseSchedule& s,
                                       const UNet& net, const InjectionSchedule& schedule,
                                       const ReferenceOptions& options)
    : net_(&net), schedule_(schedule), base_(base_context(reference, seed, s, net, schedule, options)) {
  z_t_ = reference_latents(base_, s, net, schedule, options.mode);
}

InterventionSet StreamingReference::interventions(int step_index) const {
  const auto it = z_t_.find(step_index);
  if (it == z_t_.end()) return {};
  const AttentionTrace trace =
      extract(*net_, it->second, base_.timesteps[static_cast<std::size_t>(step_index)], schedule_, step_index);
  return interventions_from(trace, step_index, schedule_);
}

void save_reference(const std::filesystem::path& path, const ReferenceContext& ctx, std::uint64_t key) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write reference cache " + path.string());
  os.write(kRefMagic.data(), kRefMagic.size());
  binio::write_u32(os, kRefVersion);
  binio::write_u64(os, key);
  binio::write_tensor_f64(os, ctx.z0);
  binio::write_tensor_f64(os, ctx.shared_eps);
  binio::write_u32(os, static_cast<std::uint32_t>(ctx.timesteps.size()));
  for (int t : ctx.timesteps) binio::write_i32(os, t);
  binio::write_u32(os, static_cast<std::uint32_t>(ctx.traces.size()));
  for (const auto& [k, trace] : ctx.traces) {
    binio::write_i32(os, k);
    write_trace_map(os, trace.f);
    write_trace_map(os, trace.sa);
    write_trace_map(os, trace.ca);
  }
  if (!os) throw IoError("failed writing reference cache " + path.string());
}

ReferenceContext load_reference(const std::filesystem::path& path, std::uint64_t expected_key) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open reference cache " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kRefMagic) throw DataError(path.string() + " is not a reference cache");
  if (const auto v = binio::read_u32(is); v != kRefVersion)
    throw DataError("reference cache version " + std::to_string(v) + " is not supported");
  if (const auto key = binio::read_u64(is); key != expected_key)
    throw ConsistencyError("reference cache " + path.string() + " was built for key " + hex64(key) + ", expected " +
                           hex64(expected_key));
  ReferenceContext ctx;
  ctx.z0 = binio::read_tensor_f64(is);
  ctx.shared_eps = binio::read_tensor_f64(is);
  const std::uint32_t n_t = binio::read_u32(is);
  for (std::uint32_t i = 0; i < n_t; ++i) ctx.timesteps.push_back(binio::read_i32(is));
  const std::uint32_t n = binio::read_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    const int k = binio::read_i32(is);
    AttentionTrace& tr = ctx.traces[k];
    tr.f = read_trace_map(is);
    tr.sa = read_trace_map(is);
    tr.ca = read_trace_map(is);
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in reference cache " + path.string());
  return ctx;
}

std::uint64_t reference_cache_key(const Image& reference, std::uint64_t seed, const InjectionSchedule& schedule,
                                  ReferenceMode mode, const Weights& weights) {
  std::uint64_t h = fnv1a64(reference.data.data(), reference.data.size() * sizeof(double));
  h = fnv1a64(&seed, sizeof seed, h);
  const std::uint64_t sh = schedule_hash(schedule);
  h = fnv1a64(&sh, sizeof sh, h);
  const int m = static_cast<int>(mode);
  h = fnv1a64(&m, sizeof m, h);
  for (const auto& [name, t] : weights.tensors) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.storage().data(), t.size() * sizeof(double), h);
  }
  return h;
}

}  // namespace freeevent
