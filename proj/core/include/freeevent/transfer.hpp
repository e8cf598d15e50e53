#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "freeevent/autoencoder.hpp"
#include "freeevent/hooks.hpp"
#include "freeevent/image.hpp"
#include "freeevent/schedule.hpp"
#include "freeevent/unet.hpp"

namespace freeevent {

/// Inclusive range of 0-based sampling-step indices.
struct StepRange {
  int first = 0;
  int last = 0;
  bool contains(int k) const { return k >= first && k <= last; }
  friend bool operator==(const StepRange&, const StepRange&) = default;
};

struct InjectionSite {
  LayerAddress address;
  StepRange steps;
  friend bool operator==(const InjectionSite&, const InjectionSite&) = default;
};

struct InjectionSchedule {
  std::vector<InjectionSite> features;
  std::vector<InjectionSite> self_attn;
  bool empty() const { return features.empty() && self_attn.empty(); }
  /// Sorted, de-duplicated step indices covered by any site.
  std::vector<int> active_steps() const;
  friend bool operator==(const InjectionSchedule&, const InjectionSchedule&) = default;
};

/// Features at dec1:1 for every step; self-attention at dec1:[1,2],
/// dec2:[0,1,2], dec3:[0,1,2] for the first floor(n/2) steps.
InjectionSchedule default_schedule(int sampling_steps);

/// AddressError for unknown layers or sites without the injected quantity,
/// ParameterError for ranges outside [0, sampling_steps).
void validate_schedule(const InjectionSchedule& schedule, const UNet& net, int sampling_steps);

/// Site lists in the config grammar: "dec1:[1,2]@0-24,dec2:[0,1,2]@0-24".
/// An empty string or "none" is the empty list.
std::vector<InjectionSite> parse_sites(std::string_view text);
std::string format_sites(const std::vector<InjectionSite>& sites);

std::uint64_t schedule_hash(const InjectionSchedule& schedule);

enum class ReferenceMode { shared_noise, ddim_inversion };
std::string_view to_string(ReferenceMode mode);
ReferenceMode parse_reference_mode(std::string_view text);

/// Noised-reference traces consumed by injection. Traces are keyed by
/// sampling-step index; `timesteps[k]` is the timestep of step k.
struct ReferenceContext {
  LatentTensor z0;
  LatentTensor shared_eps;
  std::vector<int> timesteps;
  std::map<int, AttentionTrace> traces;
  friend bool operator==(const ReferenceContext&, const ReferenceContext&) = default;
};

struct ReferenceOptions {
  ReferenceMode mode = ReferenceMode::shared_noise;
  Autoencoder autoencoder;
};

/// Extracts reference traces at every scheduled (site, step) under the null
/// prompt. Noise comes from a generator seeded with `seed`.
ReferenceContext prepare_reference(const Image& reference, std::uint64_t seed, const NoiseSchedule& s,
                                   const UNet& net, const InjectionSchedule& schedule,
                                   const ReferenceOptions& options = {});

/// Replacement maps for step k; ConsistencyError when a scheduled entry is missing.
InterventionSet build_interventions(const ReferenceContext& ctx, int step_index, const InjectionSchedule& schedule);

/// Per-step extraction for low memory: only reference latents are kept and
/// each step's trace is computed when requested. Produces the same
/// interventions as prepare_reference + build_interventions.
class StreamingReference {
public:
  StreamingReference(const Image& reference, std::uint64_t seed, const NoiseSchedule& s, const UNet& net,
                     const InjectionSchedule& schedule, const ReferenceOptions& options = {});
  InterventionSet interventions(int step_index) const;
  const ReferenceContext& latents() const { return base_; }

private:
  const UNet* net_;
  InjectionSchedule schedule_;
  ReferenceContext base_;  // traces left empty
  std::map<int, LatentTensor> z_t_;
};

/// Cache file: magic "FEVTREF1", u32 version, u64 key, then the context.
void save_reference(const std::filesystem::path& path, const ReferenceContext& ctx, std::uint64_t key);
/// ConsistencyError when the stored key differs from `expected_key`.
ReferenceContext load_reference(const std::filesystem::path& path, std::uint64_t expected_key);
std::uint64_t reference_cache_key(const Image& reference, std::uint64_t seed, const InjectionSchedule& schedule,
                                  ReferenceMode mode, const Weights& weights);

}  // namespace freeevent
