#pragma once

#include <vector>

#include "freeevent/autodiff.hpp"
#include "freeevent/hooks.hpp"
#include "freeevent/image.hpp"
#include "freeevent/schedule.hpp"
#include "freeevent/text.hpp"
#include "freeevent/unet.hpp"

namespace freeevent {

/// Inclusive range of prompt token positions (position 0 is the start token).
struct TokenSpan {
  int first = 0;
  int last = 0;
  int size() const { return last - first + 1; }
  bool contains(int i) const { return i >= first && i <= last; }
  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct EntitySpec {
  int entity_id = 1;
  TokenSpan span;
  Mask mask;  // reference-image resolution
};

/// Checks disjoint spans inside [1, n_tokens), nonempty masks and mask geometry.
void validate_entities(const std::vector<EntitySpec>& entities, int n_tokens, int height, int width);

enum class ResampleMode { coverage, area };

/// Downsamples a mask (binarized at 0.5) to h x w. Coverage is a binary
/// max-pool, area is the covered fraction. Returns a row-major h*w vector.
std::vector<double> resample_mask(const Mask& mask, int h, int w, ResampleMode mode);

inline constexpr double kEnergyEps = 1e-8;

/// (1 - sum(ca * m) / (sum(ca) + eps))^2 for one entity column.
double attention_energy(const std::vector<double>& ca, const std::vector<double>& mask, double eps = kEnergyEps);

struct GuidanceConfig {
  double eta = 1.0;
  int guidance_steps = 10;
  bool regulate_all_steps = true;
  /// Empty means every cross-attention layer.
  std::vector<LayerAddress> energy_layers;
};

/// Head-mean cross-attention summed over each token of the span; one value
/// per position. `ca` is heads x positions x tokens.
std::vector<double> entity_attention(const Tensor& ca, const TokenSpan& span);

/// Mean over layers of the sum over entities of attention_energy.
double total_energy(const AttentionTrace& trace, const std::vector<EntitySpec>& entities, const GuidanceConfig& cfg);

struct EnergyGradient {
  double energy = 0.0;
  LatentTensor grad;
};

/// Energy of the target-prompt pass at z_t and its exact gradient with
/// respect to z_t. `energy_scale` multiplies the objective.
EnergyGradient energy_and_gradient(const LatentTensor& z_t, int t, const PromptEmbedding& prompt,
                                   const std::vector<EntitySpec>& entities, const GuidanceConfig& cfg,
                                   const UNet& net, double energy_scale = 1.0);

LatentTensor energy_gradient(const LatentTensor& z_t, int t, const PromptEmbedding& prompt,
                             const std::vector<EntitySpec>& entities, const GuidanceConfig& cfg, const UNet& net);

/// z - sigma_t^2 * eta * grad.
LatentTensor guidance_update(const LatentTensor& z_t, const LatentTensor& grad, int t, const GuidanceConfig& cfg,
                             const NoiseSchedule& s);

/// Multiplies every span column of `ca` (heads x h*w x tokens) by the entity's
/// coverage mask at h x w. Rows are renormalized afterwards only on request.
void regulate_cross_attention(Tensor& ca, const std::vector<EntitySpec>& entities, int h, int w,
                              bool renormalize = false);

/// Cross-attention transform for the conditional branch. Coverage masks are
/// precomputed for every attention resolution of `net`.
CrossAttentionTransform make_regulation_transform(const std::vector<EntitySpec>& entities, const UNet& net,
                                                  bool renormalize = false);

/// Mean over layers and entities of the span attention mass that falls
/// outside the entity's coverage mask, relative to the total span mass.
double attention_leakage(const AttentionTrace& trace, const std::vector<EntitySpec>& entities);

}  // namespace freeevent
