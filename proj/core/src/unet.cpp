#include "freeevent/unet.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "freeevent/errors.hpp"

namespace freeevent {

namespace {

enum class Init { fan_in, ones, zeros };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
};

std::vector<ParamSpec> parameter_manifest(const UNetConfig& cfg, const std::vector<LayerInfo>& layers) {
  const int c = cfg.channels, td = cfg.time_dim;
  std::vector<ParamSpec> specs{
      {"time.l1.w", {td, td}, Init::fan_in},
      {"time.l1.b", {td}, Init::zeros},
      {"time.l2.w", {td, td}, Init::fan_in},
      {"time.l2.b", {td}, Init::zeros},
      {"conv_in.w", {c, cfg.latent_channels, 3, 3}, Init::fan_in},
      {"conv_in.b", {c}, Init::zeros},
  };
  for (const LayerInfo& l : layers) {
    const std::string pre = to_string(l.address) + ".";
    const int in = l.in_channels, out = l.out_channels;
    specs.push_back({pre + "res.gn1.g", {in}, Init::ones});
    specs.push_back({pre + "res.gn1.b", {in}, Init::zeros});
    specs.push_back({pre + "res.conv1.w", {out, in, 3, 3}, Init::fan_in});
    specs.push_back({pre + "res.conv1.b", {out}, Init::zeros});
    specs.push_back({pre + "res.temb.w", {out, td}, Init::fan_in});
    specs.push_back({pre + "res.temb.b", {out}, Init::zeros});
    specs.push_back({pre + "res.gn2.g", {out}, Init::ones});
    specs.push_back({pre + "res.gn2.b", {out}, Init::zeros});
    specs.push_back({pre + "res.conv2.w", {out, out, 3, 3}, Init::fan_in});
    specs.push_back({pre + "res.conv2.b", {out}, Init::zeros});
    if (in != out) {
      specs.push_back({pre + "res.skip.w", {out, in, 1, 1}, Init::fan_in});
      specs.push_back({pre + "res.skip.b", {out}, Init::zeros});
    }
    if (!l.attention) continue;
    for (const char* mod : {"sa", "ca"}) {
      const std::string m = pre + mod + ".";
      const int kv_in = std::string(mod) == "ca" ? cfg.d_text : out;
      specs.push_back({m + "gn.g", {out}, Init::ones});
      specs.push_back({m + "gn.b", {out}, Init::zeros});
      specs.push_back({m + "q.w", {out, out}, Init::fan_in});
      specs.push_back({m + "k.w", {out, kv_in}, Init::fan_in});
      specs.push_back({m + "v.w", {out, kv_in}, Init::fan_in});
      specs.push_back({m + "o.w", {out, out}, Init::fan_in});
      specs.push_back({m + "o.b", {out}, Init::zeros});
    }
  }
  specs.push_back({"out.gn.g", {c}, Init::ones});
  specs.push_back({"out.gn.b", {c}, Init::zeros});
  specs.push_back({"conv_out.w", {cfg.latent_channels, c, 3, 3}, Init::fan_in});
  specs.push_back({"conv_out.b", {cfg.latent_channels}, Init::zeros});
  return specs;
}

void check_config(const UNetConfig& cfg) {
  if (cfg.latent_size < 4 || cfg.latent_size % 4)
    throw ParameterError("latent_size must be a positive multiple of 4");
  if (cfg.channels < 1 || cfg.channels % cfg.heads || (2 * cfg.channels) % cfg.groups || cfg.channels % cfg.groups)
    throw ParameterError("channels must divide into heads and groups");
  if (cfg.latent_channels < 1 || cfg.d_text < 2 || cfg.time_dim < 2 || cfg.time_dim % 2 || cfg.vocab_size < 1)
    throw ParameterError("invalid U-Net dimensions");
}

}  // namespace

const Tensor& Weights::get(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw DataError("weights lack tensor '" + name + "'");
}

std::vector<double> timestep_embedding(int t, int dim) {
  std::vector<double> e(static_cast<std::size_t>(dim));
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[static_cast<std::size_t>(i)] = std::cos(t * freq);
    e[static_cast<std::size_t>(i + half)] = std::sin(t * freq);
  }
  return e;
}

void UNet::build_layout() {
  const int c = config_.channels, L = config_.latent_size;
  layers_.clear();
  auto add = [&](Section s, int block, int layer, int in, int res, bool attn, int skip) {
    layers_.push_back({{s, block, layer}, in, c, res, attn, skip});
  };
  add(Section::encoder, 0, 0, c, L, true, -1);
  add(Section::encoder, 1, 0, c, L / 2, true, -1);
  add(Section::encoder, 2, 0, c, L / 4, true, -1);
  add(Section::mid, 0, 0, c, L / 4, true, -1);
  add(Section::decoder, 0, 0, c, L / 4, false, -1);
  add(Section::decoder, 1, 0, 2 * c, L / 4, false, 2);
  add(Section::decoder, 1, 1, c, L / 4, true, -1);
  add(Section::decoder, 1, 2, c, L / 4, true, -1);
  add(Section::decoder, 2, 0, 2 * c, L / 2, true, 1);
  add(Section::decoder, 2, 1, c, L / 2, true, -1);
  add(Section::decoder, 2, 2, c, L / 2, true, -1);
  add(Section::decoder, 3, 0, 2 * c, L, true, 0);
  add(Section::decoder, 3, 1, c, L, true, -1);
  add(Section::decoder, 3, 2, c, L, true, -1);
}

UNet UNet::initialize(const UNetConfig& config, std::uint64_t seed) {
  check_config(config);
  UNet net;
  net.config_ = config;
  net.text_ = TextEncoder::seeded(config.vocab_size, config.d_text, config.text_seed);
  net.build_layout();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const ParamSpec& spec : parameter_manifest(config, net.layers_)) {
    Tensor t(spec.shape);
    if (spec.init == Init::ones) {
      std::fill(t.storage().begin(), t.storage().end(), 1.0);
    } else if (spec.init == Init::fan_in) {
      int fan_in = 1;
      for (std::size_t i = 1; i < spec.shape.size(); ++i) fan_in *= spec.shape[i];
      const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& v : t.storage()) v = sd * normal(rng);
    }
    net.index_[spec.name] = net.params_.size();
    net.names_.push_back(spec.name);
    net.params_.emplace_back(std::move(t));
  }
  return net;
}

UNet::UNet(const UNet& other)
    : config_(other.config_), text_(other.text_), layers_(other.layers_), names_(other.names_), index_(other.index_) {
  params_.reserve(other.params_.size());
  for (const auto& v : other.params_) params_.emplace_back(v.value());
}

UNet& UNet::operator=(const UNet& other) {
  if (this != &other) *this = UNet(other);
  return *this;
}

UNet UNet::from_weights(const Weights& weights) {
  check_config(weights.config);
  UNet net;
  net.config_ = weights.config;
  net.build_layout();
  net.text_.vocab_size = weights.config.vocab_size;
  net.text_.d_text = weights.config.d_text;
  net.text_.table = weights.get("text.table");
  if (net.text_.table.shape() != Shape{weights.config.vocab_size, weights.config.d_text})
    throw ShapeError("weights: text table shape " + shape_string(net.text_.table.shape()));
  const auto specs = parameter_manifest(weights.config, net.layers_);
  if (weights.tensors.size() != specs.size() + 1)
    throw DataError("weights: expected " + std::to_string(specs.size() + 1) + " tensors, found " +
                    std::to_string(weights.tensors.size()));
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& [name, tensor] = weights.tensors[i];
    if (name != specs[i].name) throw DataError("weights: manifest entry '" + name + "' where '" + specs[i].name + "' expected");
    if (tensor.shape() != specs[i].shape)
      throw ShapeError("weights: tensor '" + name + "' has shape " + shape_string(tensor.shape()));
    net.index_[name] = i;
    net.names_.push_back(name);
    net.params_.emplace_back(tensor);
  }
  return net;
}

Weights UNet::weights() const {
  Weights w;
  w.config = config_;
  w.tensors.reserve(params_.size() + 1);
  for (std::size_t i = 0; i < params_.size(); ++i) w.tensors.emplace_back(names_[i], params_[i].value());
  w.tensors.emplace_back("text.table", text_.table);
  return w;
}

std::size_t UNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& v : params_) n += v.value().size();
  return n;
}

void UNet::set_trainable(bool on) {
  for (auto& v : params_) {
    v.set_requires_grad(on);
    v.zero_grad();
  }
}

const ad::Var& UNet::p(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("missing parameter '" + name + "'");
  return params_[it->second];
}

bool UNet::has_layer(const LayerAddress& address) const {
  return std::any_of(layers_.begin(), layers_.end(), [&](const LayerInfo& l) { return l.address == address; });
}

const LayerInfo& UNet::layer(const LayerAddress& address) const {
  for (const LayerInfo& l : layers_)
    if (l.address == address) return l;
  std::string valid;
  for (const LayerInfo& l : layers_) valid += (valid.empty() ? "" : ", ") + to_string(l.address);
  throw AddressError("unknown layer " + to_string(address) + " (valid: " + valid + ")");
}

std::vector<LayerAddress> UNet::attention_layers() const {
  std::vector<LayerAddress> out;
  for (const LayerInfo& l : layers_)
    if (l.attention) out.push_back(l.address);
  return out;
}

Shape UNet::feature_shape(const LayerAddress& address) const {
  const LayerInfo& l = layer(address);
  return {l.out_channels, l.resolution, l.resolution};
}

Shape UNet::self_attention_shape(const LayerAddress& address) const {
  const LayerInfo& l = layer(address);
  if (!l.attention) throw AddressError("layer " + to_string(address) + " has no attention modules");
  const int p = l.resolution * l.resolution;
  return {config_.heads, p, p};
}

Shape UNet::cross_attention_shape(const LayerAddress& address, int n_tokens) const {
  const LayerInfo& l = layer(address);
  if (!l.attention) throw AddressError("layer " + to_string(address) + " has no attention modules");
  return {config_.heads, l.resolution * l.resolution, n_tokens};
}

void UNet::validate(const InterventionSet& iv, int n_tokens) const {
  for (const auto& [address, q] : iv.record) {
    if (q == Quantity::f) feature_shape(address);
    else if (q == Quantity::sa) self_attention_shape(address);
    else cross_attention_shape(address, n_tokens);
  }
  for (const auto& [address, t] : iv.replace_f)
    if (t.shape() != feature_shape(address))
      throw ShapeError("replace_f at " + to_string(address) + ": got " + shape_string(t.shape()) + ", layer has " +
                       shape_string(feature_shape(address)));
  for (const auto& [address, t] : iv.replace_sa)
    if (t.shape() != self_attention_shape(address))
      throw ShapeError("replace_SA at " + to_string(address) + ": got " + shape_string(t.shape()) + ", layer has " +
                       shape_string(self_attention_shape(address)));
}

ad::Var UNet::forward(const ad::Var& z, const std::vector<int>& timesteps, const ad::Var& text,
                      const InterventionSet* iv, AttentionTrace* trace,
                      std::map<LayerAddress, ad::Var>* ca_capture) const {
  using namespace ad;
  const int n = z.shape()[0];
  const int L = config_.latent_size;
  if (z.value().rank() != 4 || z.shape()[1] != config_.latent_channels || z.shape()[2] != L || z.shape()[3] != L)
    throw ShapeError("denoiser input " + shape_string(z.shape()) + " does not match latent geometry [" +
                     std::to_string(config_.latent_channels) + "x" + std::to_string(L) + "x" + std::to_string(L) + "]");
  if (static_cast<int>(timesteps.size()) != n) throw ShapeError("one timestep per sample required");
  if (text.value().rank() != 3 || text.shape()[0] != n || text.shape()[2] != config_.d_text)
    throw ShapeError("text conditioning " + shape_string(text.shape()) + " is not N x tokens x d_text");
  const bool hooked = (iv && !iv->empty()) || ca_capture;
  if (hooked && n != 1) throw ParameterError("hooks require a single-sample batch");
  const int n_tokens = text.shape()[1];
  if (iv) validate(*iv, n_tokens);

  const int heads = config_.heads, groups = config_.groups;

  Tensor tfeat({n, config_.time_dim});
  for (int s = 0; s < n; ++s) {
    const auto e = timestep_embedding(timesteps[static_cast<std::size_t>(s)], config_.time_dim);
    std::copy(e.begin(), e.end(), tfeat.data() + static_cast<std::size_t>(s) * config_.time_dim);
  }
  Var temb = linear(Var(std::move(tfeat)), p("time.l1.w"), p("time.l1.b"));
  temb = linear(silu(temb), p("time.l2.w"), p("time.l2.b"));
  const Var temb_act = silu(temb);

  auto record = [&](const LayerAddress& a, Quantity q, const Var& v, Shape shape) {
    if (trace && iv && iv->records(a, q)) trace->of(q)[a] = v.value().reshaped(std::move(shape));
  };

  Var h = conv2d(z, p("conv_in.w"), p("conv_in.b"), 1);
  std::vector<Var> skips;
  int res = L;
  for (const LayerInfo& l : layers_) {
    if (l.resolution < res) {
      h = avg_pool2(h);
      res /= 2;
    } else if (l.resolution > res) {
      h = upsample2(h);
      res *= 2;
    }
    const std::string pre = to_string(l.address) + ".";
    const LayerAddress& a = l.address;
    const int c = l.out_channels, pos = res * res;

    Var x = l.skip_from >= 0 ? concat_channels(h, skips[static_cast<std::size_t>(l.skip_from)]) : h;

    // residual module -> spatial feature f
    Var r = conv2d(silu(group_norm(x, p(pre + "res.gn1.g"), p(pre + "res.gn1.b"), groups)), p(pre + "res.conv1.w"),
                   p(pre + "res.conv1.b"), 1);
    r = add_channel_bias(r, linear(temb_act, p(pre + "res.temb.w"), p(pre + "res.temb.b")));
    r = conv2d(silu(group_norm(r, p(pre + "res.gn2.g"), p(pre + "res.gn2.b"), groups)), p(pre + "res.conv2.w"),
               p(pre + "res.conv2.b"), 1);
    Var shortcut = l.in_channels != l.out_channels ? conv2d(x, p(pre + "res.skip.w"), p(pre + "res.skip.b"), 0) : x;
    Var f = add(shortcut, r);
    if (iv) {
      if (auto it = iv->replace_f.find(a); it != iv->replace_f.end()) f = Var(it->second.reshaped({1, c, res, res}));
    }
    record(a, Quantity::f, f, {c, res, res});
    h = f;

    if (l.attention) {
      // self-attention
      Var tok = to_tokens(group_norm(h, p(pre + "sa.gn.g"), p(pre + "sa.gn.b"), groups));
      Var q = linear(tok, p(pre + "sa.q.w"), Var());
      Var k = linear(tok, p(pre + "sa.k.w"), Var());
      Var v = linear(tok, p(pre + "sa.v.w"), Var());
      Var sa = attention_probs(q, k, heads);
      if (iv) {
        if (auto it = iv->replace_sa.find(a); it != iv->replace_sa.end())
          sa = Var(it->second.reshaped({1, heads, pos, pos}));
      }
      record(a, Quantity::sa, sa, {heads, pos, pos});
      Var o = linear(attention_apply(sa, v, heads), p(pre + "sa.o.w"), p(pre + "sa.o.b"));
      h = add(h, from_tokens(o, res, res));

      // cross-attention
      tok = to_tokens(group_norm(h, p(pre + "ca.gn.g"), p(pre + "ca.gn.b"), groups));
      q = linear(tok, p(pre + "ca.q.w"), Var());
      k = linear(text, p(pre + "ca.k.w"), Var());
      v = linear(text, p(pre + "ca.v.w"), Var());
      Var ca = attention_probs(q, k, heads);
      if (ca_capture) (*ca_capture)[a] = ca;
      if (iv && iv->transform_ca) {
        if (ca.requires_grad())
          throw ParameterError("cross-attention transforms are not differentiable; disable them in gradient passes");
        Tensor edited = ca.value().reshaped({heads, pos, n_tokens});
        iv->transform_ca(a, edited);
        if (edited.shape() != Shape{heads, pos, n_tokens})
          throw ShapeError("transform_CA changed the map shape at " + to_string(a));
        ca = Var(edited.reshaped({1, heads, pos, n_tokens}));
      }
      record(a, Quantity::ca, ca, {heads, pos, n_tokens});
      o = linear(attention_apply(ca, v, heads), p(pre + "ca.o.w"), p(pre + "ca.o.b"));
      h = add(h, from_tokens(o, res, res));
    }

    if (a.section == Section::encoder) skips.push_back(h);
  }

  Var out = silu(group_norm(h, p("out.gn.g"), p("out.gn.b"), groups));
  return conv2d(out, p("conv_out.w"), p("conv_out.b"), 1);
}

DenoiseResult denoise_forward(const UNet& net, const LatentTensor& z_t, int t, const PromptEmbedding& prompt,
                              const InterventionSet& interventions) {
  if (z_t.rank() != 3) throw ShapeError("denoise_forward: latent must be C x H x W");
  if (!z_t.all_finite()) throw NumericError("denoise_forward: non-finite latent at t=" + std::to_string(t));
  const ad::Var z(z_t.reshaped({1, z_t.dim(0), z_t.dim(1), z_t.dim(2)}));
  const ad::Var text(prompt.embeddings.reshaped({1, prompt.n_tokens(), prompt.embeddings.dim(1)}));
  DenoiseResult result;
  const ad::Var eps = net.forward(z, {t}, text, &interventions, &result.trace, nullptr);
  result.eps = eps.value().reshaped(z_t.shape());
  return result;
}

}  // namespace freeevent
