#pragma once

// DDPM forward process and deterministic DDIM reverse steps. Timesteps are
// 1-based: beta(t) and alpha_bar(t) are defined for t in [1, T], and
// alpha_bar(0) == 1 extends the schedule to the clean image so the final
// sampling step lands exactly on x_0.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dx2ct/common.hpp"
#include "dx2ct/tensor.hpp"

namespace dx2ct::diffusion {

struct ScheduleConfig {
  int timesteps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int ddim_steps = 50;
};

class NoiseSchedule {
 public:
  explicit NoiseSchedule(const ScheduleConfig& cfg = {}) : cfg_(cfg) {
    const int T = cfg.timesteps;
    require_valid(T >= 1, "schedule: timesteps must be positive");
    require_valid(cfg.beta_start > 0.0 && cfg.beta_end < 1.0 &&
                      cfg.beta_start < cfg.beta_end,
                  "schedule: need 0 < beta_start < beta_end < 1");
    require_valid(cfg.ddim_steps >= 1 && cfg.ddim_steps <= T,
                  "schedule: ddim_steps must be in [1, timesteps]");

    betas_.resize(static_cast<std::size_t>(T));
    for (int t = 1; t <= T; ++t)
      betas_[t - 1] = T == 1 ? cfg.beta_start
                             : cfg.beta_start + (t - 1) * (cfg.beta_end -
                                                           cfg.beta_start) /
                                                    (T - 1);

    alpha_bars_.resize(static_cast<std::size_t>(T) + 1);
    alpha_bars_[0] = 1.0;
    for (int t = 1; t <= T; ++t)
      alpha_bars_[t] = alpha_bars_[t - 1] * (1.0 - betas_[t - 1]);

    for (int t = 1; t <= T; ++t) {
      require_valid(betas_[t - 1] > 0.0 && betas_[t - 1] < 1.0,
                    "schedule: beta out of (0, 1)");
      require_valid(t == 1 || betas_[t - 1] > betas_[t - 2],
                    "schedule: betas must increase strictly");
      require_valid(alpha_bars_[t] > 0.0 && alpha_bars_[t] < alpha_bars_[t - 1],
                    "schedule: alpha_bar must decrease strictly in (0, 1)");
    }

    // Evenly spaced DDIM subsequence over [1, T], always ending at T.
    const int S = cfg.ddim_steps;
    if (S == 1) {
      ddim_seq_.push_back(T);
    } else {
      for (int i = 0; i < S; ++i) {
        int tau = static_cast<int>(std::llround(
                      static_cast<double>(i) * (T - 1) / (S - 1))) +
                  1;
        ddim_seq_.push_back(tau);
      }
    }
    require_valid(ddim_seq_.front() >= 1 && ddim_seq_.back() == T,
                  "schedule: ddim subsequence must span [1, T]");
    for (std::size_t i = 1; i < ddim_seq_.size(); ++i)
      require_valid(ddim_seq_[i] > ddim_seq_[i - 1],
                    "schedule: ddim subsequence must increase strictly");
  }

  const ScheduleConfig& config() const { return cfg_; }
  int timesteps() const { return cfg_.timesteps; }

  double beta(int t) const {
    require_valid(t >= 1 && t <= cfg_.timesteps, "schedule: beta(t) needs 1 <= t <= T");
    return betas_[static_cast<std::size_t>(t) - 1];
  }

  // Defined on [0, T] with alpha_bar(0) == 1.
  double alpha_bar(int t) const {
    require_valid(t >= 0 && t <= cfg_.timesteps,
                  "schedule: alpha_bar(t) needs 0 <= t <= T");
    return alpha_bars_[static_cast<std::size_t>(t)];
  }

  // Increasing 1-based timesteps visited by the DDIM sampler.
  const std::vector<int>& ddim_timesteps() const { return ddim_seq_; }

 private:
  ScheduleConfig cfg_;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  std::vector<int> ddim_seq_;
};

// x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps, elementwise.
template <typename T>
Tensor<T> forward_diffuse(const Tensor<T>& x0, int t, const Tensor<T>& eps,
                          const NoiseSchedule& sched) {
  require_valid(t >= 0 && t <= sched.timesteps(),
                "forward_diffuse: t out of range [0, T]");
  require_valid(x0.shape() == eps.shape(),
                "forward_diffuse: x0/eps shape mismatch");
  const double ab = sched.alpha_bar(t);
  const double cs = std::sqrt(ab);
  const double cn = std::sqrt(1.0 - ab);
  Tensor<T> out(x0.shape());
  for (std::size_t i = 0; i < x0.numel(); ++i)
    out[i] = static_cast<T>(cs * static_cast<double>(x0[i]) +
                            cn * static_cast<double>(eps[i]));
  return out;
}

// Deterministic (eta = 0) DDIM update from timestep t down to t_prev:
// predict x_0 from the noise estimate, then re-noise to level t_prev.
// t_prev == t is an exact no-op.
template <typename T>
Tensor<T> ddim_step(const Tensor<T>& x_t, const Tensor<T>& eps_hat, int t,
                    int t_prev, const NoiseSchedule& sched) {
  require_valid(t >= 1 && t <= sched.timesteps(),
                "ddim_step: t out of range [1, T]");
  require_valid(t_prev >= 0 && t_prev <= t,
                "ddim_step: need 0 <= t_prev <= t");
  require_valid(x_t.shape() == eps_hat.shape(),
                "ddim_step: x_t/eps_hat shape mismatch");
  if (t_prev == t) return x_t;

  const double ab_t = sched.alpha_bar(t);
  const double ab_p = sched.alpha_bar(t_prev);
  const double inv_sqrt_ab = 1.0 / std::sqrt(ab_t);
  const double noise_t = std::sqrt(1.0 - ab_t);
  const double sig_p = std::sqrt(ab_p);
  const double noise_p = std::sqrt(1.0 - ab_p);

  Tensor<T> out(x_t.shape());
  for (std::size_t i = 0; i < x_t.numel(); ++i) {
    const double e = static_cast<double>(eps_hat[i]);
    const double x0 = (static_cast<double>(x_t[i]) - noise_t * e) * inv_sqrt_ab;
    out[i] = static_cast<T>(sig_p * x0 + noise_p * e);
  }
  return out;
}

// ddim_step with the predicted x_0 clamped to the data range (clip-denoised
// sampling). Slices are normalized to [-1, 1], and without the clamp the
// chain can drift off-distribution: small prediction errors at large t are
// amplified by 1/sqrt(alpha_bar_t) and compound. Identical to ddim_step
// whenever the prediction already lands inside [lo, hi].
template <typename T>
Tensor<T> ddim_step_clipped(const Tensor<T>& x_t, const Tensor<T>& eps_hat,
                            int t, int t_prev, const NoiseSchedule& sched,
                            double lo = -1.0, double hi = 1.0) {
  require_valid(t >= 1 && t <= sched.timesteps(),
                "ddim_step: t out of range [1, T]");
  require_valid(t_prev >= 0 && t_prev <= t,
                "ddim_step: need 0 <= t_prev <= t");
  require_valid(x_t.shape() == eps_hat.shape(),
                "ddim_step: x_t/eps_hat shape mismatch");
  require_valid(lo < hi, "ddim_step: need lo < hi");
  if (t_prev == t) return x_t;

  const double ab_t = sched.alpha_bar(t);
  const double ab_p = sched.alpha_bar(t_prev);
  const double inv_sqrt_ab = 1.0 / std::sqrt(ab_t);
  const double noise_t = std::sqrt(1.0 - ab_t);
  const double sig_p = std::sqrt(ab_p);
  const double noise_p = std::sqrt(1.0 - ab_p);

  Tensor<T> out(x_t.shape());
  for (std::size_t i = 0; i < x_t.numel(); ++i) {
    const double e = static_cast<double>(eps_hat[i]);
    const double x0 = (static_cast<double>(x_t[i]) - noise_t * e) * inv_sqrt_ab;
    out[i] = static_cast<T>(sig_p * std::min(hi, std::max(lo, x0)) +
                            noise_p * e);
  }
  return out;
}

}  // namespace dx2ct::diffusion
