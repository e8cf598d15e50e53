#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "freeevent/schedule.hpp"
#include "freeevent/switching.hpp"
#include "freeevent/text.hpp"
#include "freeevent/transfer.hpp"

namespace freeevent {

/// Guidance scale chosen by `freeevent calibrate-eta` on the toy benchmark.
inline constexpr double kDefaultEta = 1e-2;

struct Toggles {
  bool guidance = true;
  bool regulation = true;
  bool injection = true;
  friend bool operator==(const Toggles&, const Toggles&) = default;
};

/// "all-on", "all-off", "no-guidance", "no-regulation", "no-injection",
/// "guidance-only", "regulation-only", "injection-only".
Toggles parse_toggle_set(std::string_view name);
std::string toggle_set_name(const Toggles& toggles);

/// Flat namespaced run configuration. Untouched defaults are the published
/// sampler settings: 50 DDIM steps, CFG 15, guidance on the first 10 steps,
/// features injected at dec1:1 throughout and self-attention at dec1:[1,2],
/// dec2:[0,1,2], dec3:[0,1,2] for the first half.
struct RunConfig {
  int T = 1000;
  double beta_start = 0.00085;
  double beta_end = 0.012;
  int sampling_steps = 50;
  double cfg_scale = 15.0;
  GuidanceConfig guidance{kDefaultEta, 10, true, {}};
  bool renormalize = false;
  /// Unset sites follow default_schedule(sampling_steps).
  std::optional<std::vector<InjectionSite>> feature_sites;
  std::optional<std::vector<InjectionSite>> self_attn_sites;
  bool inject_both_branches = true;
  ReferenceMode reference_mode = ReferenceMode::shared_noise;
  bool streaming = false;
  std::uint64_t seed = 0;
  Toggles toggles;
  int autoencoder_stride = 2;
  std::string weights;
  std::string prompt;
  std::string reference_image;
  std::vector<std::string> masks;

  InjectionSchedule injection_schedule() const;
  NoiseSchedule noise_schedule() const;
};

/// Applies one `key=value` setting; ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);
/// Applies "key=value" (split at the first '=').
void apply_assignment(RunConfig& config, std::string_view assignment);

/// Grammar: one `key = value` per line; blank lines and lines starting with
/// '#' are ignored; values run to the end of the line.
RunConfig parse_run_config(std::string_view text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});
/// Every key with its resolved value, in a fixed order; parse_run_config of
/// the result reproduces the config.
std::string serialize_run_config(const RunConfig& config);
/// Keys accepted by apply_setting.
const std::vector<std::string>& run_config_keys();

/// Prompt with entity bindings:
///   "a photo of red disk and blue bar | e1=m1.png:tokens4-5, e2=m2.png:tokens7-8"
/// Token positions count the start token as 0. The mask path is optional
/// ("e1=tokens4-5") when masks are supplied separately.
struct EntityBinding {
  int entity_id = 0;
  std::string mask;
  TokenSpan span;
};

struct PromptBinding {
  std::vector<int> token_ids;  // without the start token
  std::vector<EntityBinding> entities;
};

PromptBinding parse_prompt_binding(std::string_view text, const Vocabulary& vocab);

}  // namespace freeevent
