#include "campd/tensor.hpp"

#include "tensor_internal.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

#include "campd/parallel.hpp"
#include "campd/rng.hpp"

namespace campd {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::atomic<int64_t> g_next_id{1};
thread_local Tape* g_current_tape = nullptr;

void check_shape_positive(const char* op, const Shape& s) {
  for (int d : s) {
    if (d <= 0)
      throw TensorError(std::string(op) + ": non-positive extent in shape " +
                        shape_str(s));
  }
}

[[noreturn]] void fail(const std::string& msg) { throw TensorError(msg); }

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
         " vs " + shape_str(b.shape()));
}

}  // namespace

struct Tensor::Impl {
  Shape shape;
  std::vector<double> v;
  std::vector<double> g;
  bool requires_grad = false;
  const Tape* tape = nullptr;
  int64_t id = g_next_id.fetch_add(1, std::memory_order_relaxed);
};

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_shape_positive("zeros", shape);
  Tensor t;
  t.p_ = std::make_shared<Impl>();
  t.p_->v.assign(static_cast<size_t>(numel(shape)), 0.0);
  t.p_->shape = std::move(shape);
  t.p_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.p_->v.begin(), t.p_->v.end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape_positive("from", shape);
  if (numel(shape) != static_cast<int64_t>(values.size()))
    fail("from: shape " + shape_str(shape) + " expects " +
         std::to_string(numel(shape)) + " values, got " +
         std::to_string(values.size()));
  Tensor t;
  t.p_ = std::make_shared<Impl>();
  t.p_->shape = std::move(shape);
  t.p_->v = std::move(values);
  t.p_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng) {
  Tensor t = zeros(std::move(shape));
  rng.normal_fill(t.values());
  return t;
}

const Shape& Tensor::shape() const {
  if (!p_) fail("shape(): undefined tensor");
  return p_->shape;
}

int64_t Tensor::size() const { return p_ ? static_cast<int64_t>(p_->v.size()) : 0; }

std::span<double> Tensor::values() {
  if (!p_) fail("values(): undefined tensor");
  return p_->v;
}

std::span<const double> Tensor::values() const {
  if (!p_) fail("values(): undefined tensor");
  return p_->v;
}

double Tensor::item() const {
  if (size() != 1)
    fail("item(): tensor " + shape_str(shape()) + " is not a scalar");
  return p_->v[0];
}

bool Tensor::requires_grad() const { return p_ && p_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool rg) {
  if (!p_) fail("set_requires_grad(): undefined tensor");
  p_->requires_grad = rg;
  return *this;
}

bool Tensor::has_grad() const { return p_ && !p_->g.empty(); }

std::span<double> Tensor::grad() {
  if (!p_) fail("grad(): undefined tensor");
  if (p_->g.empty()) p_->g.assign(p_->v.size(), 0.0);
  return p_->g;
}

std::span<const double> Tensor::grad() const {
  if (!p_ || p_->g.empty()) fail("grad(): no gradient buffer allocated");
  return p_->g;
}

void Tensor::zero_grad() {
  if (p_ && !p_->g.empty()) std::fill(p_->g.begin(), p_->g.end(), 0.0);
}

int64_t Tensor::id() const { return p_ ? p_->id : 0; }

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape::Tape() {
  prev_ = g_current_tape;
  g_current_tape = this;
}

Tape::~Tape() { g_current_tape = prev_; }

Tape* Tape::current() { return g_current_tape; }

void Tape::record(const char* op, const Tensor& out, std::function<void()> backward_fn) {
  const_cast<Tensor&>(out).set_requires_grad(true);
  out.p_->tape = this;
  entries_.push_back(Entry{op, std::move(backward_fn)});
}

bool Tape::owns(const Tensor& t) const { return t.p_ && t.p_->tape == this; }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    fail("backward: loss must be a scalar, got " +
         (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  if (!owns(loss))
    fail("backward: loss is detached from this tape");
  const_cast<Tensor&>(loss).grad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->fn();
}

void backward(const Tensor& loss) {
  Tape* t = Tape::current();
  if (!t) fail("backward: no active tape");
  t->backward(loss);
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (Tape* tp = Tape::current(); tp && (a.requires_grad() || b.requires_grad())) {
    tp->record("add", out, [a, b, out]() mutable {
      auto go = grad_of(out);
      if (a.requires_grad()) {
        auto ga = grad_of(a);
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto gb = grad_of(b);
        for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (Tape* tp = Tape::current(); tp && (a.requires_grad() || b.requires_grad())) {
    tp->record("sub", out, [a, b, out]() mutable {
      auto go = grad_of(out);
      if (a.requires_grad()) {
        auto ga = grad_of(a);
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto gb = grad_of(b);
        for (size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values(), bv = b.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (Tape* tp = Tape::current(); tp && (a.requires_grad() || b.requires_grad())) {
    tp->record("mul", out, [a, b, out]() mutable {
      auto go = grad_of(out);
      auto av = a.values(), bv = b.values();
      if (a.requires_grad()) {
        auto ga = grad_of(a);
        for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = grad_of(b);
        for (size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  auto av = a.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  if (Tape* tp = Tape::current(); tp && a.requires_grad()) {
    tp->record("scale", out, [a, out, c]() mutable {
      auto go = grad_of(out);
      auto ga = grad_of(a);
      for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 1 || bias.rank() != 1 || x.dim(x.rank() - 1) != bias.dim(0))
    fail("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " +
         shape_str(bias.shape()));
  const int64_t d = bias.dim(0);
  const int64_t rows = x.size() / d;
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values(), bv = bias.values();
  auto ov = out.values();
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < d; ++j) ov[r * d + j] = xv[r * d + j] + bv[j];
  if (Tape* tp = Tape::current(); tp && (x.requires_grad() || bias.requires_grad())) {
    tp->record("add_bias", out, [x, bias, out, rows, d]() mutable {
      auto go = grad_of(out);
      if (x.requires_grad()) {
        auto gx = grad_of(x);
        for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
      if (bias.requires_grad()) {
        auto gb = grad_of(bias);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d; ++j) gb[j] += go[r * d + j];
      }
    });
  }
  return out;
}

Tensor scale_shift(const Tensor& x, const Tensor& s, const Tensor& t) {
  if (x.rank() != 3)
    fail("scale_shift: x must be rank 3, got " + shape_str(x.shape()));
  if (s.rank() != 2 || t.rank() != 2 || s.dim(0) != x.dim(0) ||
      s.dim(1) != x.dim(1) || s.shape() != t.shape())
    fail("scale_shift: modulation shape " + shape_str(s.shape()) + "/" +
         shape_str(t.shape()) + " does not match x " + shape_str(x.shape()));
  const int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values(), sv = s.values(), tv = t.values();
  auto ov = out.values();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      const double sc = 1.0 + sv[b * C + c], sh = tv[b * C + c];
      const double* xr = &xv[(b * C + c) * L];
      double* orow = &ov[(b * C + c) * L];
      for (int64_t l = 0; l < L; ++l) orow[l] = xr[l] * sc + sh;
    }
  if (Tape* tp = Tape::current();
      tp && (x.requires_grad() || s.requires_grad() || t.requires_grad())) {
    tp->record("scale_shift", out, [x, s, t, out, B, C, L]() mutable {
      auto go = grad_of(out);
      auto xv = x.values(), sv = s.values();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
          const double* g = &go[(b * C + c) * L];
          if (x.requires_grad()) {
            auto gx = grad_of(x);
            const double sc = 1.0 + sv[b * C + c];
            double* gxr = &gx[(b * C + c) * L];
            for (int64_t l = 0; l < L; ++l) gxr[l] += g[l] * sc;
          }
          if (s.requires_grad()) {
            auto gs = grad_of(s);
            const double* xr = &xv[(b * C + c) * L];
            double acc = 0.0;
            for (int64_t l = 0; l < L; ++l) acc += g[l] * xr[l];
            gs[b * C + c] += acc;
          }
          if (t.requires_grad()) {
            auto gt = grad_of(t);
            double acc = 0.0;
            for (int64_t l = 0; l < L; ++l) acc += g[l];
            gt[b * C + c] += acc;
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

namespace {

inline double softplus_stable(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double sigmoid_stable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor mish(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i)
    ov[i] = xv[i] * std::tanh(softplus_stable(xv[i]));
  if (Tape* tp = Tape::current(); tp && x.requires_grad()) {
    tp->record("mish", out, [x, out]() mutable {
      auto go = grad_of(out);
      auto xv = x.values();
      auto gx = grad_of(x);
      for (size_t i = 0; i < go.size(); ++i) {
        double t = std::tanh(softplus_stable(xv[i]));
        double s = sigmoid_stable(xv[i]);
        gx[i] += go[i] * (t + xv[i] * s * (1.0 - t * t));
      }
    });
  }
  return out;
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (size_t i = 0; i < ov.size(); ++i)
    ov[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * kInvSqrt2));
  if (Tape* tp = Tape::current(); tp && x.requires_grad()) {
    tp->record("gelu", out, [x, out]() mutable {
      auto go = grad_of(out);
      auto xv = x.values();
      auto gx = grad_of(x);
      for (size_t i = 0; i < go.size(); ++i) {
        double cdf = 0.5 * (1.0 + std::erf(xv[i] * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * xv[i] * xv[i]);
        gx[i] += go[i] * (cdf + xv[i] * pdf);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank())
    fail("softmax: axis " + std::to_string(axis) + " out of range for " +
         shape_str(x.shape()));
  const auto& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= s[i];
  const int64_t n = s[axis];
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values();
  auto ov = out.values();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * n * inner + in;
      double mx = xv[base];
      for (int64_t j = 1; j < n; ++j)
        mx = std::max(mx, xv[base + j * inner]);
      double sum = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        double e = std::exp(xv[base + j * inner] - mx);
        ov[base + j * inner] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (int64_t j = 0; j < n; ++j) ov[base + j * inner] *= inv;
    }
  if (Tape* tp = Tape::current(); tp && x.requires_grad()) {
    tp->record("softmax", out, [x, out, outer, inner, n]() mutable {
      auto go = grad_of(out);
      auto yv = out.values();
      auto gx = grad_of(x);
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * n * inner + in;
          double dot = 0.0;
          for (int64_t j = 0; j < n; ++j)
            dot += yv[base + j * inner] * go[base + j * inner];
          for (int64_t j = 0; j < n; ++j)
            gx[base + j * inner] +=
                yv[base + j * inner] * (go[base + j * inner] - dot);
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  int n_groups, double eps) {
  if (x.rank() != 3)
    fail("group_norm: x must be [B,C,L], got " + shape_str(x.shape()));
  const int64_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  if (n_groups <= 0 || C % n_groups != 0)
    fail("group_norm: channels " + std::to_string(C) +
         " not divisible by groups " + std::to_string(n_groups));
  if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
    fail("group_norm: affine shapes " + shape_str(gamma.shape()) + "/" +
         shape_str(beta.shape()) + " do not match channels of " +
         shape_str(x.shape()));
  const int64_t cg = C / n_groups;
  const int64_t m = cg * L;
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values(), gv = gamma.values(), bv = beta.values();
  auto ov = out.values();
  auto stats = std::make_shared<std::vector<double>>(
      static_cast<size_t>(B * n_groups * 2));  // (mean, inv_std) pairs
  for (int64_t b = 0; b < B; ++b)
    for (int64_t g = 0; g < n_groups; ++g) {
      const int64_t c0 = g * cg;
      double mean = 0.0;
      for (int64_t c = c0; c < c0 + cg; ++c) {
        const double* row = &xv[(b * C + c) * L];
        for (int64_t l = 0; l < L; ++l) mean += row[l];
      }
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (int64_t c = c0; c < c0 + cg; ++c) {
        const double* row = &xv[(b * C + c) * L];
        for (int64_t l = 0; l < L; ++l) {
          double d = row[l] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(m);
      const double istd = 1.0 / std::sqrt(var + eps);
      (*stats)[static_cast<size_t>((b * n_groups + g) * 2)] = mean;
      (*stats)[static_cast<size_t>((b * n_groups + g) * 2 + 1)] = istd;
      for (int64_t c = c0; c < c0 + cg; ++c) {
        const double* row = &xv[(b * C + c) * L];
        double* orow = &ov[(b * C + c) * L];
        const double ga = gv[c], be = bv[c];
        for (int64_t l = 0; l < L; ++l)
          orow[l] = (row[l] - mean) * istd * ga + be;
      }
    }
  if (Tape* tp = Tape::current();
      tp && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    tp->record("group_norm", out,
               [x, gamma, beta, out, stats, B, C, L, n_groups, cg, m]() mutable {
      auto go = grad_of(out);
      auto xv = x.values(), gv = gamma.values();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t g = 0; g < n_groups; ++g) {
          const int64_t c0 = g * cg;
          const double mean = (*stats)[static_cast<size_t>((b * n_groups + g) * 2)];
          const double istd = (*stats)[static_cast<size_t>((b * n_groups + g) * 2 + 1)];
          if (gamma.requires_grad() || beta.requires_grad()) {
            auto gg = gamma.requires_grad() ? grad_of(gamma) : std::span<double>();
            auto gb = beta.requires_grad() ? grad_of(beta) : std::span<double>();
            for (int64_t c = c0; c < c0 + cg; ++c) {
              const double* xrow = &xv[(b * C + c) * L];
              const double* grow = &go[(b * C + c) * L];
              double sg = 0.0, sbv = 0.0;
              for (int64_t l = 0; l < L; ++l) {
                sg += grow[l] * (xrow[l] - mean) * istd;
                sbv += grow[l];
              }
              if (!gg.empty()) gg[c] += sg;
              if (!gb.empty()) gb[c] += sbv;
            }
          }
          if (x.requires_grad()) {
            auto gx = grad_of(x);
            // dxhat = go * gamma; dx = istd * (dxhat - (S1 + xhat * S2) / m)
            double s1 = 0.0, s2 = 0.0;
            for (int64_t c = c0; c < c0 + cg; ++c) {
              const double* xrow = &xv[(b * C + c) * L];
              const double* grow = &go[(b * C + c) * L];
              const double ga = gv[c];
              for (int64_t l = 0; l < L; ++l) {
                const double dxh = grow[l] * ga;
                s1 += dxh;
                s2 += dxh * (xrow[l] - mean) * istd;
              }
            }
            const double im = 1.0 / static_cast<double>(m);
            for (int64_t c = c0; c < c0 + cg; ++c) {
              const double* xrow = &xv[(b * C + c) * L];
              const double* grow = &go[(b * C + c) * L];
              double* gxr = &gx[(b * C + c) * L];
              const double ga = gv[c];
              for (int64_t l = 0; l < L; ++l) {
                const double xh = (xrow[l] - mean) * istd;
                gxr[l] += istd * (grow[l] * ga - (s1 + xh * s2) * im);
              }
            }
          }
        }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  if (x.rank() < 1) fail("layer_norm: rank-0 input");
  const int64_t d = x.dim(x.rank() - 1);
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
    fail("layer_norm: affine shapes " + shape_str(gamma.shape()) + "/" +
         shape_str(beta.shape()) + " do not match last axis of " +
         shape_str(x.shape()));
  const int64_t rows = x.size() / d;
  Tensor out = Tensor::zeros(x.shape());
  auto xv = x.values(), gv = gamma.values(), bv = beta.values();
  auto ov = out.values();
  auto stats = std::make_shared<std::vector<double>>(static_cast<size_t>(rows * 2));
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = &xv[r * d];
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      double diff = row[j] - mean;
      var += diff * diff;
    }
    var /= static_cast<double>(d);
    const double istd = 1.0 / std::sqrt(var + eps);
    (*stats)[static_cast<size_t>(r * 2)] = mean;
    (*stats)[static_cast<size_t>(r * 2 + 1)] = istd;
    double* orow = &ov[r * d];
    for (int64_t j = 0; j < d; ++j)
      orow[j] = (row[j] - mean) * istd * gv[j] + bv[j];
  }
  if (Tape* tp = Tape::current();
      tp && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
    tp->record("layer_norm", out, [x, gamma, beta, out, stats, rows, d]() mutable {
      auto go = grad_of(out);
      auto xv = x.values(), gv = gamma.values();
      for (int64_t r = 0; r < rows; ++r) {
        const double mean = (*stats)[static_cast<size_t>(r * 2)];
        const double istd = (*stats)[static_cast<size_t>(r * 2 + 1)];
        const double* xrow = &xv[r * d];
        const double* grow = &go[r * d];
        if (gamma.requires_grad()) {
          auto gg = grad_of(gamma);
          for (int64_t j = 0; j < d; ++j)
            gg[j] += grow[j] * (xrow[j] - mean) * istd;
        }
        if (beta.requires_grad()) {
          auto gb = grad_of(beta);
          for (int64_t j = 0; j < d; ++j) gb[j] += grow[j];
        }
        if (x.requires_grad()) {
          auto gx = grad_of(x);
          double s1 = 0.0, s2 = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            const double dxh = grow[j] * gv[j];
            s1 += dxh;
            s2 += dxh * (xrow[j] - mean) * istd;
          }
          const double im = 1.0 / static_cast<double>(d);
          double* gxr = &gx[r * d];
          for (int64_t j = 0; j < d; ++j) {
            const double xh = (xrow[j] - mean) * istd;
            gxr[j] += istd * (grow[j] * gv[j] - (s1 + xh * s2) * im);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) fail("concat: no inputs");
  const int rank = parts[0].rank();
  if (axis < 0 || axis >= rank)
    fail("concat: axis " + std::to_string(axis) + " out of range for " +
         shape_str(parts[0].shape()));
  Shape out_shape = parts[0].shape();
  int64_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank)
      fail("concat: rank mismatch " + shape_str(parts[0].shape()) + " vs " +
           shape_str(p.shape()));
    for (int i = 0; i < rank; ++i)
      if (i != axis && p.dim(i) != out_shape[static_cast<size_t>(i)])
        fail("concat: shape mismatch " + shape_str(parts[0].shape()) + " vs " +
             shape_str(p.shape()));
    axis_total += p.dim(axis);
  }
  out_shape[static_cast<size_t>(axis)] = static_cast<int>(axis_total);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= out_shape[static_cast<size_t>(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= out_shape[static_cast<size_t>(i)];
  Tensor out = Tensor::zeros(out_shape);
  auto ov = out.values();
  int64_t offset = 0;
  for (const Tensor& p : parts) {
    const int64_t n = p.dim(axis);
    auto pv = p.values();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(&ov[(o * axis_total + offset) * inner], &pv[o * n * inner],
                  static_cast<size_t>(n * inner) * sizeof(double));
    offset += n;
  }
  bool any_rg = false;
  for (const Tensor& p : parts) any_rg = any_rg || p.requires_grad();
  if (Tape* tp = Tape::current(); tp && any_rg) {
    std::vector<Tensor> held(parts.begin(), parts.end());
    std::vector<int64_t> extents;
    for (const Tensor& p : parts) extents.push_back(p.dim(axis));
    tp->record("concat", out, [held, extents, out, outer, inner, axis_total]() mutable {
      auto go = grad_of(out);
      int64_t offset = 0;
      for (size_t pi = 0; pi < held.size(); ++pi) {
        const int64_t n = extents[pi];
        if (held[pi].requires_grad()) {
          auto gp = grad_of(held[pi]);
          for (int64_t o = 0; o < outer; ++o) {
            const double* g = &go[(o * axis_total + offset) * inner];
            double* dst = &gp[o * n * inner];
            for (int64_t i = 0; i < n * inner; ++i) dst[i] += g[i];
          }
        }
        offset += n;
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
  if (axis < 0 || axis >= x.rank())
    fail("slice: axis " + std::to_string(axis) + " out of range for " +
         shape_str(x.shape()));
  if (start < 0 || len <= 0 || start + len > x.dim(axis))
    fail("slice: range [" + std::to_string(start) + "," +
         std::to_string(start + len) + ") exceeds axis " + std::to_string(axis) +
         " of " + shape_str(x.shape()));
  const auto& s = x.shape();
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<size_t>(i)];
  const int64_t n = s[static_cast<size_t>(axis)];
  Shape out_shape = s;
  out_shape[static_cast<size_t>(axis)] = len;
  Tensor out = Tensor::zeros(out_shape);
  auto xv = x.values();
  auto ov = out.values();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(&ov[o * len * inner], &xv[(o * n + start) * inner],
                static_cast<size_t>(len * inner) * sizeof(double));
  if (Tape* tp = Tape::current(); tp && x.requires_grad()) {
    tp->record("slice", out, [x, out, outer, inner, n, start, len]() mutable {
      auto go = grad_of(out);
      auto gx = grad_of(x);
      for (int64_t o = 0; o < outer; ++o) {
        const double* g = &go[o * len * inner];
        double* dst = &gx[(o * n + start) * inner];
        for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  check_shape_positive("reshape", new_shape);
  if (numel(new_shape) != x.size())
    fail("reshape: cannot view " + shape_str(x.shape()) + " as " +
         shape_str(new_shape));
  Tensor out = Tensor::from(std::move(new_shape),
                            std::vector<double>(x.values().begin(), x.values().end()));
  if (Tape* tp = Tape::current(); tp && x.requires_grad()) {
    tp->record("reshape", out, [x, out]() mutable {
      auto go = grad_of(out);
      auto gx = grad_of(x);
      for (size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    });
  }
  return out;
}

namespace {

// Swaps axes a < b of `src` (shape `s`) into `dst`.
void transpose_copy(const double* src, double* dst, const Shape& s, int a, int b) {
  int64_t pre = 1, mid = 1, post = 1;
  for (int i = 0; i < a; ++i) pre *= s[static_cast<size_t>(i)];
  for (int i = a + 1; i < b; ++i) mid *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(b) + 1; i < s.size(); ++i)
    post *= s[i];
  const int64_t A = s[static_cast<size_t>(a)], B = s[static_cast<size_t>(b)];
  for (int64_t p = 0; p < pre; ++p)
    for (int64_t ia = 0; ia < A; ++ia)
      for (int64_t im = 0; im < mid; ++im)
        for (int64_t ib = 0; ib < B; ++ib) {
          const int64_t src_idx = (((p * A + ia) * mid + im) * B + ib) * post;
          const int64_t dst_idx = (((p * B + ib) * mid + im) * A + ia) * post;
          std::memcpy(dst + dst_idx, src + src_idx,
                      static_cast<size_t>(post) * sizeof(double));
        }
}

}  // namespace

Tensor transpose(const Tensor& x, int axis_a, int axis_b) {
  if (axis_a == axis_b || axis_a < 0 || axis_b < 0 || axis_a >= x.rank() ||
      axis_b >= x.rank())
    fail("transpose: bad axes (" + std::to_string(axis_a) + "," +
         std::to_string(axis_b) + ") for " + shape_str(x.shape()));
  int a = std::min(axis_a, axis_b), b = std::max(axis_a, axis_b);
  Shape out_shape = x.shape();
  std::swap(out_shape[static_cast<size_t>(a)], out_shape[static_cast<size_t>(b)]);
  Tensor out = Tensor::zeros(out_shape);
  transpose_copy(x.values().data(), out.values().data(), x.shape(), a, b);
  if (Tape* tp = Tape::current(); tp && x.requires_grad()) {
    tp->record("transpose", out, [x, out, a, b]() mutable {
      // Transposing the gradient back requires accumulate, not overwrite.
      std::vector<double> tmp(static_cast<size_t>(out.size()));
      transpose_copy(grad_of(out).data(), tmp.data(), out.shape(), a, b);
      auto gx = grad_of(x);
      for (size_t i = 0; i < tmp.size(); ++i) gx[i] += tmp[i];
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (Tape* tp = Tape::current(); tp && x.requires_grad()) {
    tp->record("sum_all", out, [x, out]() mutable {
      const double g = grad_of(out)[0];
      auto gx = grad_of(x);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const double inv_n = 1.0 / static_cast<double>(x.size());
  Tensor out = Tensor::scalar(acc * inv_n);
  if (Tape* tp = Tape::current(); tp && x.requires_grad()) {
    tp->record("mean_all", out, [x, out, inv_n]() mutable {
      const double g = grad_of(out)[0] * inv_n;
      auto gx = grad_of(x);
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor scatter_rows(const Tensor& src, std::span<const int> rows, int n_rows) {
  if (src.rank() != 2)
    fail("scatter_rows: src must be [N,D], got " + shape_str(src.shape()));
  if (static_cast<int64_t>(rows.size()) != src.dim(0))
    fail("scatter_rows: got " + std::to_string(rows.size()) + " row indices for " +
         shape_str(src.shape()));
  const int64_t n = src.dim(0), d = src.dim(1);
  for (int r : rows)
    if (r < 0 || r >= n_rows)
      fail("scatter_rows: row index " + std::to_string(r) + " out of [0," +
           std::to_string(n_rows) + ")");
  Tensor out = Tensor::zeros({n_rows, static_cast<int>(d)});
  auto sv = src.values();
  auto ov = out.values();
  for (int64_t i = 0; i < n; ++i) {
    double* dst = &ov[static_cast<int64_t>(rows[static_cast<size_t>(i)]) * d];
    const double* s = &sv[i * d];
    for (int64_t j = 0; j < d; ++j) dst[j] += s[j];
  }
  if (Tape* tp = Tape::current(); tp && src.requires_grad()) {
    std::vector<int> rows_copy(rows.begin(), rows.end());
    tp->record("scatter_rows", out, [src, out, rows_copy, d]() mutable {
      auto go = grad_of(out);
      auto gs = grad_of(src);
      for (size_t i = 0; i < rows_copy.size(); ++i) {
        const double* g = &go[static_cast<int64_t>(rows_copy[i]) * d];
        double* dst = &gs[static_cast<int64_t>(i) * d];
        for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void adam_step(std::span<double> param, std::span<const double> grad,
               AdamState& state, double lr, double beta1, double beta2,
               double eps) {
  if (param.size() != grad.size())
    fail("adam_step: param size " + std::to_string(param.size()) +
         " vs grad size " + std::to_string(grad.size()));
  if (state.m.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  if (state.m.size() != param.size())
    fail("adam_step: state size " + std::to_string(state.m.size()) +
         " vs param size " + std::to_string(param.size()));
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < param.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

void adam_step(Tensor& param, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
  adam_step(param.values(), grad_of(param), state, lr, beta1, beta2, eps);
}

}  // namespace campd
