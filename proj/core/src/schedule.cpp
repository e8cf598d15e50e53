#include "freeevent/schedule.hpp"

#include <cmath>
#include <string>

#include "freeevent/errors.hpp"

namespace freeevent {

double NoiseSchedule::alpha_bar_at(int t) const {
  if (t < 0 || t > T) throw ParameterError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
  return alpha_bar[static_cast<std::size_t>(t)];
}

int NoiseSchedule::previous_timestep(int k) const {
  if (k < 0 || k >= sampling_steps) throw ParameterError("sampling step " + std::to_string(k) + " out of range");
  return k + 1 < sampling_steps ? step_indices[static_cast<std::size_t>(k) + 1] : 0;
}

NoiseSchedule build_schedule(int T, double beta_start, double beta_end, int sampling_steps, BetaSchedule kind) {
  if (T < 1) throw ParameterError("T must be >= 1 (got " + std::to_string(T) + ")");
  if (sampling_steps < 1) throw ParameterError("sampling_steps must be >= 1");
  if (sampling_steps > T) throw ParameterError("sampling_steps must not exceed T");
  if (!(beta_start >= 0.0)) throw ParameterError("beta_start must be >= 0");
  if (!(beta_end >= beta_start)) throw ParameterError("beta_end must be >= beta_start");
  if (!(beta_end < 1.0)) throw ParameterError("beta_end must be < 1");

  NoiseSchedule s;
  s.T = T;
  s.kind = kind;
  s.sampling_steps = sampling_steps;
  s.alpha_bar.resize(static_cast<std::size_t>(T) + 1);
  s.alpha_bar[0] = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double beta = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
    s.alpha_bar[static_cast<std::size_t>(t)] = s.alpha_bar[static_cast<std::size_t>(t) - 1] * (1.0 - beta);
  }
  s.step_indices.resize(static_cast<std::size_t>(sampling_steps));
  for (int k = 0; k < sampling_steps; ++k)
    s.step_indices[static_cast<std::size_t>(k)] =
        T - static_cast<int>((static_cast<long long>(k) * T) / sampling_steps);
  return s;
}

LatentTensor forward_noise(const LatentTensor& z0, int t, const LatentTensor& eps, const NoiseSchedule& s) {
  require_same_shape(z0, eps, "forward_noise");
  const double ab = s.alpha_bar_at(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  LatentTensor out(z0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

double sigma_t(int t, const NoiseSchedule& s) {
  const double ab = s.alpha_bar_at(t);
  if (!(ab > 0.0)) throw DomainError("sigma_t: alpha_bar is zero at t=" + std::to_string(t));
  return std::sqrt((1.0 - ab) / ab);
}

LatentTensor ddim_step(const LatentTensor& z_t, const LatentTensor& eps_hat, int t, int t_prev,
                       const NoiseSchedule& s) {
  require_same_shape(z_t, eps_hat, "ddim_step");
  if (t_prev >= t)
    throw OrderingError("ddim_step: t_prev (" + std::to_string(t_prev) + ") must be < t (" + std::to_string(t) + ")");
  const double ab = s.alpha_bar_at(t), ab_prev = s.alpha_bar_at(t_prev);
  const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
  const double pa = std::sqrt(ab_prev), pb = std::sqrt(1.0 - ab_prev);
  LatentTensor out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0 = (z_t[i] - sb * eps_hat[i]) / sa;
    out[i] = pa * x0 + pb * eps_hat[i];
  }
  return out;
}

LatentTensor cfg_combine(const LatentTensor& eps_uncond, const LatentTensor& eps_cond, double scale) {
  require_same_shape(eps_uncond, eps_cond, "cfg_combine");
  LatentTensor out(eps_uncond.shape());
  // Written as a convex-style blend so scale 0 and 1 reproduce the inputs exactly.
  const double keep = 1.0 - scale;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * eps_uncond[i] + scale * eps_cond[i];
  return out;
}

}  // namespace freeevent
