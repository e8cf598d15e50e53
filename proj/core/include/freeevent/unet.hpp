#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "freeevent/autodiff.hpp"
#include "freeevent/hooks.hpp"
#include "freeevent/text.hpp"

namespace freeevent {

struct UNetConfig {
  int latent_channels = 3;
  int latent_size = 8;  // square latents, divisible by 4
  int channels = 32;
  int heads = 2;
  int groups = 8;
  int d_text = 32;
  int vocab_size = 25;
  int time_dim = 32;
  std::uint64_t text_seed = 0x7e47;

  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

/// Static description of one layer. A layer is residual module, then (when
/// attention is true) self-attention and cross-attention modules.
struct LayerInfo {
  LayerAddress address;
  int in_channels = 0;
  int out_channels = 0;
  int resolution = 0;
  bool attention = false;
  /// Encoder output concatenated onto the input of this layer, or -1.
  int skip_from = -1;
};

/// Serializable parameter set: architecture plus named tensors in manifest order.
struct Weights {
  UNetConfig config;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(const std::string& name) const;
  friend bool operator==(const Weights&, const Weights&) = default;
};

/// Toy conditional noise predictor eps_theta(z_t; t, P).
///
/// Blocks: enc0 (L), enc1 (L/2), enc2 (L/4), mid0 (L/4), dec0 (L/4, residual
/// only), dec1 (L/4; layer 0 residual only, layers 1-2 attention), dec2 (L/2)
/// and dec3 (L), each decoder attention block with layers 0-2. Skips from
/// enc2/enc1/enc0 feed layer 0 of dec1/dec2/dec3.
class UNet {
public:
  static UNet initialize(const UNetConfig& config, std::uint64_t seed);

  // Copies clone parameter values; two networks never share nodes.
  UNet(const UNet& other);
  UNet& operator=(const UNet& other);
  UNet(UNet&&) noexcept = default;
  UNet& operator=(UNet&&) noexcept = default;

  static UNet from_weights(const Weights& weights);
  Weights weights() const;

  const UNetConfig& config() const noexcept { return config_; }
  const TextEncoder& text_encoder() const noexcept { return text_; }
  const std::vector<LayerInfo>& layers() const noexcept { return layers_; }

  bool has_layer(const LayerAddress& address) const;
  const LayerInfo& layer(const LayerAddress& address) const;  // AddressError when absent
  std::vector<LayerAddress> attention_layers() const;

  Shape feature_shape(const LayerAddress& address) const;
  Shape self_attention_shape(const LayerAddress& address) const;
  Shape cross_attention_shape(const LayerAddress& address, int n_tokens) const;

  /// Validates addresses and replacement shapes against this architecture.
  void validate(const InterventionSet& interventions, int n_tokens) const;

  /// Batched forward on z (N x C x L x L) with per-sample timesteps and text
  /// (N x n_tokens x d_text). Hooks require N == 1. When `ca_capture` is set,
  /// the cross-attention probability nodes of attention layers are stored
  /// into it (pre-transform) for differentiation.
  ad::Var forward(const ad::Var& z, const std::vector<int>& timesteps, const ad::Var& text,
                  const InterventionSet* interventions, AttentionTrace* trace,
                  std::map<LayerAddress, ad::Var>* ca_capture) const;

  std::vector<ad::Var>& parameters() noexcept { return params_; }
  const std::vector<std::string>& parameter_names() const noexcept { return names_; }
  std::size_t parameter_count() const;
  void set_trainable(bool on);

private:
  struct LayerParams;
  UNet() = default;
  void build_layout();
  const ad::Var& p(const std::string& name) const;

  UNetConfig config_;
  TextEncoder text_;
  std::vector<LayerInfo> layers_;
  std::vector<ad::Var> params_;
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

struct DenoiseResult {
  LatentTensor eps;
  AttentionTrace trace;
};

/// Single-sample noise prediction with hooks applied.
DenoiseResult denoise_forward(const UNet& net, const LatentTensor& z_t, int t, const PromptEmbedding& prompt,
                              const InterventionSet& interventions = {});

/// Sinusoidal timestep features, [cos | sin] halves.
std::vector<double> timestep_embedding(int t, int dim);

}  // namespace freeevent
