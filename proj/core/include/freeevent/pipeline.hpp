#pragma once

#include <functional>
#include <set>
#include <utility>
#include <vector>

#include "freeevent/autoencoder.hpp"
#include "freeevent/image.hpp"
#include "freeevent/run_config.hpp"
#include "freeevent/switching.hpp"
#include "freeevent/transfer.hpp"
#include "freeevent/unet.hpp"

namespace freeevent {

/// Optional callbacks into the sampling loop, used by tests and tools.
struct PipelineObserver {
  /// Latent before and after the guidance update of step k.
  std::function<void(int k, const LatentTensor& before, const LatentTensor& after, double energy)> on_guidance;
  /// Latent fed to the conditional and unconditional denoise of step k.
  std::function<void(int k, const LatentTensor& z)> on_denoise;
  /// Conditional-branch trace of step k (only populated for recorded sites).
  std::function<void(int k, const AttentionTrace& trace)> on_trace;
  /// Sites recorded on the conditional branch; recording never changes outputs.
  std::set<std::pair<LayerAddress, Quantity>> record;
};

struct GenerationResult {
  Image image;
  LatentTensor z0;
  /// Mean over steps of attention_leakage on the conditional branch; only
  /// computed when `track_leakage` is requested.
  double leakage = 0.0;
};

struct GenerationOptions {
  bool track_leakage = false;
  PipelineObserver* observer = nullptr;
};

/// Seed stream for the reference noise, distinct from the initial latent.
std::uint64_t reference_seed(std::uint64_t seed);

/// Reference context for a run, or an empty context when injection is off.
ReferenceContext reference_for(const Image& reference, const RunConfig& config, const UNet& net,
                               const NoiseSchedule& s);

/// Guidance, injection and regulation around a CFG + DDIM loop. `ctx` may be
/// passed to reuse a precomputed reference; otherwise it is built (or
/// streamed) from `reference`.
GenerationResult customize(const Image& reference, const std::vector<EntitySpec>& entities,
                           const PromptEmbedding& prompt, const RunConfig& config, const UNet& net,
                           const NoiseSchedule& s, const ReferenceContext* ctx = nullptr,
                           const GenerationOptions& options = {});

/// Plain CFG sampling.
GenerationResult generate_baseline(const PromptEmbedding& prompt, const RunConfig& config, const UNet& net,
                                   const NoiseSchedule& s);

/// One customize run per toggle set with a shared seed and reference context.
std::vector<GenerationResult> ablate(const Image& reference, const std::vector<EntitySpec>& entities,
                                     const PromptEmbedding& prompt, const RunConfig& config,
                                     const std::vector<Toggles>& toggle_sets, const UNet& net,
                                     const GenerationOptions& options = {});

/// Initial latent z_T ~ N(0, I) from the run seed.
LatentTensor initial_latent(std::uint64_t seed, const Shape& shape);

Autoencoder autoencoder_for(const RunConfig& config);

}  // namespace freeevent
