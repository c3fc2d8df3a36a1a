#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "campd/diffusion.hpp"
#include "campd/rng.hpp"

using namespace campd;

TEST_CASE("schedule tables match an independent running-product oracle") {
  const NoiseSchedule lin = build_linear_schedule(25, 1e-4, 0.2);
  REQUIRE(lin.T == 25);
  CHECK(lin.beta_at(1) == 1e-4);
  CHECK(lin.beta_at(25) == doctest::Approx(0.2).epsilon(1e-14));
  CHECK(lin.alpha_bar_at(1) == lin.alpha_at(1));  // product of one term

  long double prod = 1.0L;
  for (int t = 1; t <= 25; ++t) {
    const long double beta =
        1e-4L + (0.2L - 1e-4L) * static_cast<long double>(t - 1) / 24.0L;
    prod *= 1.0L - beta;
    CHECK(std::abs(lin.alpha_bar_at(t) - static_cast<double>(prod)) <= 1e-12);
  }

  for (const char* kind : {"linear", "cosine"}) {
    const NoiseSchedule s = build_schedule(kind, 25);
    REQUIRE(s.T == 25);
    double prev = 1.0;
    for (int t = 1; t <= 25; ++t) {
      CHECK(s.beta_at(t) > 0.0);
      CHECK(s.beta_at(t) < 1.0);
      CHECK(s.alpha_at(t) == 1.0 - s.beta_at(t));
      CHECK(s.alpha_bar_at(t) < prev);  // strictly decreasing
      prev = s.alpha_bar_at(t);
    }
    // Default schedules end close to pure noise.
    CHECK(s.alpha_bar_at(25) <= 0.01);
  }

  const NoiseSchedule cos = build_cosine_schedule(25);
  for (int t = 1; t <= 25; ++t) {
    CHECK(cos.beta_at(t) >= 1e-8);
    CHECK(cos.beta_at(t) <= 0.999);
  }

  CHECK_THROWS_AS(build_schedule("quadratic", 25), DiffusionError);
  CHECK_THROWS_AS(build_linear_schedule(0, 1e-4, 0.2), DiffusionError);
  CHECK(build_schedule("cosine", 1).T == 1);
}

TEST_CASE("forward noising is the exact affine map with correct statistics") {
  const NoiseSchedule s = build_schedule("cosine", 25);
  const int t = 13;
  const double abar = s.alpha_bar_at(t);

  std::vector<double> tau0 = {0.3, -0.7, 0.1, 0.9};
  std::vector<double> zeros(4, 0.0);
  const auto noiseless = q_sample(tau0, t, zeros, s);
  for (size_t i = 0; i < tau0.size(); ++i)
    CHECK(noiseless[i] == std::sqrt(abar) * tau0[i]);

  // Monte-Carlo moments at a fixed scalar tau0.
  const int n = 100000;
  Rng rng(4242);
  double sum = 0.0, sumsq = 0.0;
  const std::vector<double> x0 = {0.4};
  for (int i = 0; i < n; ++i) {
    const std::vector<double> eps = {rng.normal()};
    const double v = q_sample(x0, t, eps, s)[0];
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  const double true_mean = std::sqrt(abar) * 0.4;
  const double true_var = 1.0 - abar;
  CHECK(std::abs(mean - true_mean) <= 3.0 * std::sqrt(true_var / n));
  CHECK(std::abs(var - true_var) <= 3.0 * true_var * std::sqrt(2.0 / n));

  CHECK_THROWS_AS(q_sample(tau0, 0, zeros, s), DiffusionError);
  CHECK_THROWS_AS(q_sample(tau0, 26, zeros, s), DiffusionError);
  CHECK_THROWS_AS(q_sample(tau0, 5, {zeros.data(), 3}, s), DiffusionError);
}

TEST_CASE("guidance combination identities") {
  std::vector<double> c = {0.5, -1.25, 0.0, -0.0, 3.5};
  std::vector<double> u = {1.0, 0.75, -2.0, 4.0, -0.5};

  const auto at_zero = cfg_combine(c, u, 0.0);
  for (size_t i = 0; i < c.size(); ++i) CHECK(at_zero[i] == c[i]);

  const auto at_one = cfg_combine(c, u, 1.0);
  for (size_t i = 0; i < c.size(); ++i)
    CHECK(at_one[i] == doctest::Approx(2.0 * c[i] - u[i]).epsilon(1e-15));

  for (double w : {1.0, 1.5, 2.0, 5.0, -0.5, 100.0}) {
    const auto same = cfg_combine(c, c, w);
    for (size_t i = 0; i < c.size(); ++i) CHECK(same[i] == c[i]);
  }

  // Linearity in both arguments.
  const double w = 1.5;
  std::vector<double> c2 = {0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<double> sum_c(c.size());
  for (size_t i = 0; i < c.size(); ++i) sum_c[i] = c[i] + c2[i];
  const auto lhs = cfg_combine(sum_c, u, w);
  const auto rhs1 = cfg_combine(c, u, w);
  const auto rhs2 = cfg_combine(c2, std::vector<double>(c.size(), 0.0), w);
  for (size_t i = 0; i < c.size(); ++i)
    CHECK(lhs[i] == doctest::Approx(rhs1[i] + rhs2[i]).epsilon(1e-12));

  CHECK_THROWS_AS(cfg_combine(c, {u.data(), 3}, 1.0), DiffusionError);
}

TEST_CASE("ddpm: deterministic final step and tiny-beta identity limit") {
  const NoiseSchedule s = build_schedule("cosine", 25);
  std::vector<double> tau = {0.2, -0.4};
  std::vector<double> eps = {0.1, 0.3};
  Rng r1(1), r2(999);
  const auto a = ddpm_step(tau, eps, 1, s, r1);
  const auto b = ddpm_step(tau, eps, 1, s, r2);
  CHECK(a == b);  // t = 1 ignores the rng entirely
  const double beta = s.beta_at(1);
  const double mu0 = (tau[0] - beta / std::sqrt(1.0 - s.alpha_bar_at(1)) * eps[0]) /
                     std::sqrt(s.alpha_at(1));
  CHECK(a[0] == doctest::Approx(mu0).epsilon(1e-15));

  // beta -> 0: the update approaches the identity on eps' = 0.
  const NoiseSchedule tiny = build_linear_schedule(25, 1e-10, 1e-9);
  std::vector<double> zero_eps = {0.0, 0.0};
  Rng r3(5);
  const auto nearly = ddpm_step(tau, zero_eps, 1, tiny, r3);
  CHECK(std::abs(nearly[0] - tau[0]) <= 1e-9);
  CHECK(std::abs(nearly[1] - tau[1]) <= 1e-9);

  Rng r4(8);
  CHECK_THROWS_AS(ddpm_step(tau, eps, 0, s, r4), DiffusionError);
  CHECK_THROWS_AS(ddpm_step(tau, eps, 26, s, r4), DiffusionError);
}

TEST_CASE("reverse chains with the analytic Gaussian oracle recover N(m,1)") {
  const NoiseSchedule s = build_schedule("cosine", 25);
  const double m = 0.7;
  const int n_chains = 10000;

  auto run_chain = [&](bool ddim_eta1, Rng& rng) {
    double x = rng.normal();  // tau_T ~ N(0,1): the terminal marginal
    for (int t = s.T; t >= 1; --t) {
      const std::vector<double> xt = {x};
      const std::vector<double> eps = {gaussian_score_eps(x, t, m, s)};
      const auto next = ddim_eta1 ? ddim_step(xt, eps, t, t - 1, s, 1.0, &rng)
                                  : ddpm_step(xt, eps, t, s, rng);
      x = next[0];
    }
    return x;
  };

  for (const bool use_ddim : {false, true}) {
    Rng rng(use_ddim ? 31337 : 1234);
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n_chains; ++i) {
      const double x = run_chain(use_ddim, rng);
      sum += x;
      sumsq += x * x;
    }
    const double mean = sum / n_chains;
    const double var = sumsq / n_chains - mean * mean;
    CHECK(std::abs(mean - m) <= 0.05);
    if (!use_ddim) CHECK(std::abs(var - 1.0) <= 0.1);
  }
}

TEST_CASE("ddim: determinism, exact one-step reconstruction, step validation") {
  const NoiseSchedule s = build_schedule("cosine", 25);
  Rng rng(77);

  std::vector<double> tau0(8), eps(8);
  for (double& v : tau0) v = rng.uniform(-1.0, 1.0);
  for (double& v : eps) v = rng.normal();

  // Noise to t = T with known eps, then jump straight back to t = 0.
  const auto tauT = q_sample(tau0, s.T, eps, s);
  const auto rec = ddim_step(tauT, eps, s.T, 0, s, 0.0, nullptr);
  for (size_t i = 0; i < tau0.size(); ++i)
    CHECK(std::abs(rec[i] - tau0[i]) <= 1e-9);

  const auto again = ddim_step(tauT, eps, s.T, 0, s, 0.0, nullptr);
  CHECK(rec == again);  // eta = 0 never consults an rng

  CHECK_THROWS_AS(ddim_step(tauT, eps, 5, 5, s, 0.0, nullptr), DiffusionError);
  CHECK_THROWS_AS(ddim_step(tauT, eps, 5, 7, s, 0.0, nullptr), DiffusionError);
  CHECK_THROWS_AS(ddim_step(tauT, eps, 5, -1, s, 0.0, nullptr), DiffusionError);
  CHECK_THROWS_AS(ddim_step(tauT, eps, 5, 4, s, 1.0, nullptr), DiffusionError);
  CHECK_THROWS_AS(ddim_step(tauT, eps, 5, 4, s, -0.5, nullptr), DiffusionError);
}

TEST_CASE("ddim timestep grids") {
  const auto full = ddim_time_grid(25, 25);
  REQUIRE(full.size() == 25);
  for (int i = 0; i < 25; ++i) CHECK(full[static_cast<size_t>(i)] == 25 - i);

  const auto ten = ddim_time_grid(25, 10);
  CHECK(ten == std::vector<int>{25, 22, 20, 17, 14, 12, 9, 6, 4, 1});

  CHECK(ddim_time_grid(25, 1) == std::vector<int>{25});

  for (int T : {5, 11, 25, 60}) {
    for (int k = 1; k <= T; ++k) {
      const auto g = ddim_time_grid(T, k);
      CHECK(g.front() == T);
      if (k > 1) CHECK(g.back() == 1);  // k = 1 jumps straight from T to 0
      for (size_t i = 1; i < g.size(); ++i) CHECK(g[i] < g[i - 1]);
      CHECK(g.size() <= static_cast<size_t>(k));
    }
  }

  CHECK_THROWS_AS(ddim_time_grid(25, 0), DiffusionError);
  CHECK_THROWS_AS(ddim_time_grid(25, 26), DiffusionError);
}
