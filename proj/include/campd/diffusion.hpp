#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "campd/rng.hpp"

namespace campd {

class DiffusionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-step noise tables, 1-based access: beta_at(t) for t in [1, T].
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta, alpha, alpha_bar;
  double beta_at(int t) const { return beta.at(static_cast<size_t>(t - 1)); }
  double alpha_at(int t) const { return alpha.at(static_cast<size_t>(t - 1)); }
  double alpha_bar_at(int t) const { return alpha_bar.at(static_cast<size_t>(t - 1)); }
};

// kind: "linear" or "cosine" (default profile used by training).
NoiseSchedule build_schedule(const std::string& kind, int T);
NoiseSchedule build_linear_schedule(int T, double beta_start, double beta_end);
NoiseSchedule build_cosine_schedule(int T);

// Forward noising: tau_t = sqrt(abar_t) tau0 + sqrt(1-abar_t) eps.
std::vector<double> q_sample(std::span<const double> tau0, int t,
                             std::span<const double> eps,
                             const NoiseSchedule& sched);

// Guided noise: eps_cond + w * (eps_cond - eps_uncond). Returns eps_cond
// bit-exactly when w == 0, and cfg_combine(x, x, w) == x for every w.
std::vector<double> cfg_combine(std::span<const double> eps_cond,
                                std::span<const double> eps_uncond, double w);

// One stochastic reverse step; adds sigma_t * z with sigma_t^2 = beta_t for
// t > 1, no noise at t = 1.
std::vector<double> ddpm_step(std::span<const double> tau_t,
                              std::span<const double> eps, int t,
                              const NoiseSchedule& sched, Rng& rng);

// One DDIM step from t to t_prev (t > t_prev >= 0); eta = 0 is deterministic;
// rng may be null when eta == 0.
std::vector<double> ddim_step(std::span<const double> tau_t,
                              std::span<const double> eps, int t, int t_prev,
                              const NoiseSchedule& sched, double eta, Rng* rng);

// Descending timestep grid for DDIM: T_inf values from T_train down to 1;
// consuming pairs (g[i], g[i+1]) plus a final (g.back(), 0) step gives exactly
// T_inf model evaluations.
std::vector<int> ddim_time_grid(int T_train, int T_inf);

// Analytic optimal noise predictor for 1-D data drawn from N(m, 1): the
// noised marginal is N(sqrt(abar_t) m, 1), so
// eps*(x, t) = sqrt(1 - abar_t) * (x - sqrt(abar_t) m).
// Validates the reverse samplers independently of any learned model.
double gaussian_score_eps(double x, int t, double m, const NoiseSchedule& sched);

}  // namespace campd
