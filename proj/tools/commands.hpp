#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "freeevent/run_config.hpp"

namespace freeevent::cli {

struct Context {
  std::ostream& out;
  std::ostream& err;
  /// Files written by the command, recorded in its run manifest.
  std::vector<std::filesystem::path> artifacts;
};

/// Config sources shared by the sampling commands, lowest precedence first:
/// defaults, $FREEEVENT_CONFIG, --config, dedicated flags, --set.
struct ConfigFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::string> weights, ref, masks, prompt;
  std::optional<std::uint64_t> seed;
  bool use_env = true;
};

RunConfig resolve_config(const ConfigFlags& flags);

struct MakeShapesArgs {
  std::filesystem::path out;
  int count = 4000;
  std::uint64_t seed = 0;
};
void cmd_make_shapes(Context& ctx, const MakeShapesArgs& a);

struct TrainArgs {
  std::filesystem::path data, out, loss_csv, init;
  int steps = 20000;
  std::uint64_t seed = 0;
  int batch = 8;
  double lr = 2e-3;
};
void cmd_train_toy(Context& ctx, const TrainArgs& a);

struct GenerateArgs {
  std::filesystem::path out;
};
void cmd_generate(Context& ctx, const RunConfig& config, const GenerateArgs& a);
void cmd_baseline(Context& ctx, const RunConfig& config, const GenerateArgs& a);

struct AblateArgs {
  std::filesystem::path out;
  std::vector<std::string> toggles{"all-on", "no-guidance", "no-regulation", "no-injection"};
  int seeds = 1;
  bool scenario = false;
  int jobs = 1;
};
void cmd_ablate(Context& ctx, RunConfig config, const AblateArgs& a);

struct BenchArgs {
  std::filesystem::path make_toy, generate, evaluate, gen_dir, report;
  int classes = 10;
  int refs = 20;
  std::uint64_t bench_seed = 0;
  bool switch_colors = true;
  std::string encoder = "downsample16";
  std::vector<int> ks{1, 5, 10};
  int jobs = 1;
};
void cmd_bench(Context& ctx, const RunConfig& config, const BenchArgs& a);

struct InspectArgs {
  std::filesystem::path out;
  std::string site;
  std::vector<int> steps;
};
void cmd_inspect_attn(Context& ctx, const RunConfig& config, const InspectArgs& a);

struct CalibrateArgs {
  std::vector<double> etas{1e-5, 3e-5, 1e-4, 2e-4, 3e-4, 1e-3, 3e-3, 1e-2};
  int seeds = 100;
  double clip = 1.0;
  double max_flagged = 0.05;
  int jobs = 1;
};
void cmd_calibrate_eta(Context& ctx, const RunConfig& config, const CalibrateArgs& a);

}  // namespace freeevent::cli
