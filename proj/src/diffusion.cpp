#include "campd/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace campd {

namespace {

void finish_schedule(NoiseSchedule& s) {
  const size_t n = s.beta.size();
  s.alpha.resize(n);
  s.alpha_bar.resize(n);
  double prod = 1.0;
  for (size_t i = 0; i < n; ++i) {
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
}

void check_t(int t, const NoiseSchedule& sched, const char* who) {
  if (t < 1 || t > sched.T)
    throw DiffusionError(std::string(who) + ": timestep " + std::to_string(t) +
                         " outside [1, " + std::to_string(sched.T) + "]");
}

}  // namespace

NoiseSchedule build_linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw DiffusionError("build_linear_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_end < beta_start)
    throw DiffusionError("build_linear_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(static_cast<size_t>(T));
  for (int t = 1; t <= T; ++t) {
    const double frac = T > 1 ? static_cast<double>(t - 1) / (T - 1) : 0.0;
    s.beta[static_cast<size_t>(t - 1)] = beta_start + (beta_end - beta_start) * frac;
  }
  finish_schedule(s);
  return s;
}

NoiseSchedule build_cosine_schedule(int T) {
  if (T < 1) throw DiffusionError("build_cosine_schedule: T must be >= 1");
  constexpr double kOffset = 0.008;
  auto f = [&](double t) {
    const double u = (t / T + kOffset) / (1.0 + kOffset) * (std::numbers::pi / 2.0);
    const double c = std::cos(u);
    return c * c;
  };
  const double f0 = f(0.0);
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(static_cast<size_t>(T));
  double abar_prev = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double abar_t = f(static_cast<double>(t)) / f0;
    double beta = 1.0 - abar_t / abar_prev;
    beta = std::clamp(beta, 1e-8, 0.999);
    s.beta[static_cast<size_t>(t - 1)] = beta;
    abar_prev *= 1.0 - beta;
  }
  finish_schedule(s);
  return s;
}

NoiseSchedule build_schedule(const std::string& kind, int T) {
  if (kind == "cosine") return build_cosine_schedule(T);
  if (kind == "linear")
    // Steep enough that alpha_bar(T) stays below 0.01 for short horizons
    // (T around 25), so the terminal marginal is close to N(0, I).
    return build_linear_schedule(T, 1e-4, 0.35);
  throw DiffusionError("build_schedule: unknown kind '" + kind +
                       "' (expected 'linear' or 'cosine')");
}

std::vector<double> q_sample(std::span<const double> tau0, int t,
                             std::span<const double> eps,
                             const NoiseSchedule& sched) {
  check_t(t, sched, "q_sample");
  if (tau0.size() != eps.size())
    throw DiffusionError("q_sample: tau0 and eps sizes differ");
  const double abar = sched.alpha_bar_at(t);
  const double a = std::sqrt(abar);
  const double b = std::sqrt(1.0 - abar);
  std::vector<double> out(tau0.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a * tau0[i] + b * eps[i];
  return out;
}

std::vector<double> cfg_combine(std::span<const double> eps_cond,
                                std::span<const double> eps_uncond, double w) {
  if (eps_cond.size() != eps_uncond.size())
    throw DiffusionError("cfg_combine: input sizes differ");
  std::vector<double> out(eps_cond.begin(), eps_cond.end());
  if (w == 0.0) return out;
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = eps_cond[i] + w * (eps_cond[i] - eps_uncond[i]);
  return out;
}

std::vector<double> ddpm_step(std::span<const double> tau_t,
                              std::span<const double> eps, int t,
                              const NoiseSchedule& sched, Rng& rng) {
  check_t(t, sched, "ddpm_step");
  if (tau_t.size() != eps.size())
    throw DiffusionError("ddpm_step: tau_t and eps sizes differ");
  const double beta = sched.beta_at(t);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha_at(t));
  const double coef = beta / std::sqrt(1.0 - sched.alpha_bar_at(t));
  const double sigma = std::sqrt(beta);
  std::vector<double> out(tau_t.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double mu = inv_sqrt_alpha * (tau_t[i] - coef * eps[i]);
    out[i] = t > 1 ? mu + sigma * rng.normal() : mu;
  }
  return out;
}

std::vector<double> ddim_step(std::span<const double> tau_t,
                              std::span<const double> eps, int t, int t_prev,
                              const NoiseSchedule& sched, double eta, Rng* rng) {
  check_t(t, sched, "ddim_step");
  if (t_prev < 0 || t_prev >= t)
    throw DiffusionError("ddim_step: need 0 <= t_prev < t");
  if (tau_t.size() != eps.size())
    throw DiffusionError("ddim_step: tau_t and eps sizes differ");
  if (eta < 0.0) throw DiffusionError("ddim_step: eta must be >= 0");
  const double abar_t = sched.alpha_bar_at(t);
  const double abar_p = t_prev >= 1 ? sched.alpha_bar_at(t_prev) : 1.0;
  const double sigma =
      eta * std::sqrt((1.0 - abar_p) / (1.0 - abar_t)) *
      std::sqrt(std::max(0.0, 1.0 - abar_t / abar_p));
  const bool stochastic = sigma > 0.0;
  if (stochastic && rng == nullptr)
    throw DiffusionError("ddim_step: eta > 0 requires an rng");
  const double sqrt_abar_t = std::sqrt(abar_t);
  const double sqrt_one_minus_abar_t = std::sqrt(1.0 - abar_t);
  const double sqrt_abar_p = std::sqrt(abar_p);
  const double dir_coef = std::sqrt(std::max(0.0, 1.0 - abar_p - sigma * sigma));
  std::vector<double> out(tau_t.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x0 = (tau_t[i] - sqrt_one_minus_abar_t * eps[i]) / sqrt_abar_t;
    double v = sqrt_abar_p * x0 + dir_coef * eps[i];
    if (stochastic) v += sigma * rng->normal();
    out[i] = v;
  }
  return out;
}

std::vector<int> ddim_time_grid(int T_train, int T_inf) {
  if (T_train < 1) throw DiffusionError("ddim_time_grid: T_train must be >= 1");
  if (T_inf < 1 || T_inf > T_train)
    throw DiffusionError("ddim_time_grid: need 1 <= T_inf <= T_train");
  std::vector<int> grid;
  grid.reserve(static_cast<size_t>(T_inf));
  for (int i = 0; i < T_inf; ++i) {
    const double frac = T_inf > 1 ? static_cast<double>(i) / (T_inf - 1) : 0.0;
    const double v = T_train + (1.0 - T_train) * frac;
    const int t = static_cast<int>(std::llround(v));
    if (grid.empty() || grid.back() != t) grid.push_back(t);
  }
  return grid;
}

double gaussian_score_eps(double x, int t, double m, const NoiseSchedule& sched) {
  check_t(t, sched, "gaussian_score_eps");
  const double abar = sched.alpha_bar_at(t);
  // E[eps | tau_t = x] for tau0 ~ N(m, 1): the noised marginal has variance
  // abar * 1 + (1 - abar) = 1, and the score is -(x - sqrt(abar) m), so
  // eps* = -sqrt(1 - abar) * score.
  return std::sqrt(1.0 - abar) * (x - std::sqrt(abar) * m);
}

}  // namespace campd
