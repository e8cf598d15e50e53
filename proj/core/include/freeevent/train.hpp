#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "freeevent/autoencoder.hpp"
#include "freeevent/image.hpp"
#include "freeevent/schedule.hpp"
#include "freeevent/unet.hpp"

namespace freeevent {

struct LabeledImage {
  std::string name;
  Image image;
  std::vector<int> token_ids;        // without the start token
  std::vector<std::string> masks;    // optional, relative to the dataset root
};

/// Directory layout: images/*.png plus labels.tsv with rows
/// "filename<TAB>token ids (space separated)[<TAB>mask filenames (space separated)]".
struct ToyDataset {
  std::vector<LabeledImage> samples;
};

ToyDataset load_toy_dataset(const std::filesystem::path& root);
void save_toy_dataset(const std::filesystem::path& root, const ToyDataset& dataset);

struct TrainOptions {
  int steps = 20000;
  std::uint64_t seed = 0;
  int batch_size = 8;
  double learning_rate = 2e-3;
  int warmup_steps = 200;
  double grad_clip = 1.0;
  /// Probability that a whole batch trains on the null prompt (for CFG).
  double null_prompt_rate = 0.1;
  int T = 1000;
  double beta_start = 0.00085;
  double beta_end = 0.012;
  UNetConfig architecture;
  Autoencoder autoencoder;
  /// Called every `report_every` steps with (step, smoothed loss).
  std::function<void(int, double)> on_report;
  int report_every = 500;
};

struct TrainResult {
  Weights weights;                   // float32-representable
  std::vector<double> loss_history;  // one per step
  double heldout_loss_initial = 0.0;
  double heldout_loss_final = 0.0;
};

/// Minimizes E ||eps - eps_theta(z_t; t, P)||^2 with Adam on minibatches that
/// share a prompt length. Deterministic for a fixed seed. When `init` is
/// given, training starts from it instead of a seeded initialization.
TrainResult train_toy(const ToyDataset& dataset, const TrainOptions& options, const Weights* init = nullptr);

/// Seeded initialization rounded to float32, i.e. what train_toy(steps = 0) returns.
Weights initial_weights(const UNetConfig& architecture, std::uint64_t seed);

/// Exponential moving average used for the reported loss curve.
std::vector<double> smooth_losses(const std::vector<double>& losses, double decay = 0.98);

}  // namespace freeevent
