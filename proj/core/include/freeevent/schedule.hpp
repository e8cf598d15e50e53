#pragma once

#include <vector>

#include "freeevent/tensor.hpp"

namespace freeevent {

enum class BetaSchedule { linear };

/// Discrete noise schedule. alpha_bar[t] for t in [0, T], alpha_bar[0] == 1.
/// step_indices holds the sampling ladder, strictly decreasing, starting at T.
struct NoiseSchedule {
  int T = 0;
  std::vector<double> alpha_bar;
  int sampling_steps = 0;
  std::vector<int> step_indices;
  BetaSchedule kind = BetaSchedule::linear;

  double alpha_bar_at(int t) const;
  /// Timestep following sampling step k; 0 after the last step.
  int previous_timestep(int k) const;
};

NoiseSchedule build_schedule(int T, double beta_start, double beta_end, int sampling_steps,
                             BetaSchedule kind = BetaSchedule::linear);

/// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
LatentTensor forward_noise(const LatentTensor& z0, int t, const LatentTensor& eps, const NoiseSchedule& s);

/// sqrt((1 - abar_t) / abar_t); the guidance update scales the gradient by its square.
double sigma_t(int t, const NoiseSchedule& s);

/// Deterministic DDIM update from t to t_prev (no injected noise).
LatentTensor ddim_step(const LatentTensor& z_t, const LatentTensor& eps_hat, int t, int t_prev,
                       const NoiseSchedule& s);

/// eps_uncond + scale * (eps_cond - eps_uncond).
LatentTensor cfg_combine(const LatentTensor& eps_uncond, const LatentTensor& eps_cond, double scale);

}  // namespace freeevent
