#pragma once

// Finite-difference gradient oracle: compares reverse-mode gradients against
// central differences, elementwise over every input, and reports the worst
// relative error. Used by the unit tests and the acceptance suite.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "campd/rng.hpp"
#include "campd/tensor.hpp"

namespace campd::testing {

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// f must rebuild the graph from `inputs` on every call and return a scalar.
// When no Tape is active, f runs as pure forward evaluation.
inline double fd_max_err(const std::function<Tensor()>& f,
                         std::vector<Tensor> inputs, double h = 1e-4) {
  std::vector<std::vector<double>> ad;
  {
    Tape tape;
    Tensor loss = f();
    tape.backward(loss);
  }
  for (auto& in : inputs) {
    auto g = in.grad();
    ad.emplace_back(g.begin(), g.end());
    in.zero_grad();
  }
  double max_err = 0.0;
  for (size_t ti = 0; ti < inputs.size(); ++ti) {
    auto vals = inputs[ti].values();
    for (size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double fp = f().item();
      vals[i] = orig - h;
      const double fm = f().item();
      vals[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      max_err = std::max(max_err, rel_err(ad[ti][i], fd));
    }
  }
  return max_err;
}

inline Tensor rnd(Shape s, Rng& rng, bool requires_grad = true) {
  Tensor t = Tensor::randn(std::move(s), rng);
  t.set_requires_grad(requires_grad);
  return t;
}

// Reduces an arbitrary tensor to a scalar through fixed random weights so
// every output element influences the loss.
inline Tensor probe(const Tensor& out, const Tensor& w) {
  return sum_all(mul(out, w));
}

// Runs `n_trials` randomized FD checks of the whole primitive catalog and
// returns the worst relative error seen. Each trial draws fresh shapes and
// values from `seed`.
double fd_check_catalog(uint64_t seed, int n_trials, double h = 1e-4);

}  // namespace campd::testing
