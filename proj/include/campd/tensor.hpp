#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace campd {

class Rng;

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Extents of a dense row-major array. Rank stays small (<= 4 in this project).
using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense 64-bit float array with an optional same-shaped gradient buffer.
// Copies are shallow: a Tensor is a handle onto shared storage, and identity
// (id()) is the node identity in the recording tape's graph.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng);

  bool defined() const { return p_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int i) const { return shape()[static_cast<size_t>(i)]; }
  int64_t size() const;

  std::span<double> values();
  std::span<const double> values() const;
  double operator[](int64_t i) const { return values()[static_cast<size_t>(i)]; }
  double item() const;  // scalar tensors only

  bool requires_grad() const;
  Tensor& set_requires_grad(bool rg);

  bool has_grad() const;
  std::span<double> grad();  // allocates a zero buffer on first use
  std::span<const double> grad() const;
  void zero_grad();

  int64_t id() const;
  bool same_storage(const Tensor& other) const { return p_ == other.p_; }

 private:
  struct Impl;
  std::shared_ptr<Impl> p_;
  friend class Tape;
};

// Dynamic tape: ops executed while a Tape is current record a backward
// closure; backward() replays them in reverse. One tape per training step;
// independent tapes may live on separate threads (the current tape is
// thread-local).
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  void record(const char* op, const Tensor& out, std::function<void()> backward_fn);
  bool owns(const Tensor& t) const;
  size_t num_ops() const { return entries_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays recorded ops in reverse, populating
  // grad buffers. Repeated calls without zero_grad accumulate.
  void backward(const Tensor& loss);

 private:
  struct Entry {
    const char* op;
    std::function<void()> fn;
  };
  std::vector<Entry> entries_;
  Tape* prev_ = nullptr;
};

// Reverse sweep on the currently active tape.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Differentiable primitives. All check shapes and throw TensorError naming
// the operation and the offending shapes.
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// y[..., d] = x[..., d] + bias[d]
Tensor add_bias(const Tensor& x, const Tensor& bias);

// x: [B, C, L]; s, t: [B, C].  y = x * (1 + s) + t, broadcast over L.
Tensor scale_shift(const Tensor& x, const Tensor& s, const Tensor& t);

// [M,K]x[K,N], [B,M,K]x[K,N] and [B,M,K]x[B,K,N].
Tensor matmul(const Tensor& a, const Tensor& b);

// x: [B, Cin, L], w: [Cout, Cin, K], bias: [Cout] or undefined.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int padding);

// x: [B, Cin, L], w: [Cin, Cout, K], bias: [Cout] or undefined.
// Lout = (L-1)*stride - 2*padding + K.
Tensor conv_transpose1d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        int stride, int padding);

// x: [B, C, L]; gamma, beta: [C]. Normalizes each (batch, group) slab.
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  int n_groups, double eps = 1e-5);

// Normalizes the last axis. gamma, beta: [D].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

Tensor mish(const Tensor& x);
Tensor gelu(const Tensor& x);

Tensor softmax(const Tensor& x, int axis);

Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose(const Tensor& x, int axis_a, int axis_b);

Tensor sum_all(const Tensor& x);   // -> [1]
Tensor mean_all(const Tensor& x);  // -> [1]

// src: [N, D] -> out: [n_rows, D]; out[rows[i], :] += src[i, :].
// Rows may repeat (accumulating); untouched rows stay zero.
Tensor scatter_rows(const Tensor& src, std::span<const int> rows, int n_rows);

// Scaled dot-product attention composed from the primitives above.
// q: [G, Lq, Dh], k/v: [G, Lk, Dh], mask: additive [G, Lq, Lk] or undefined.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor& mask);

// ---------------------------------------------------------------------------
// Adam with bias correction.
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<double> m, v;
  int64_t step = 0;
};

void adam_step(std::span<double> param, std::span<const double> grad,
               AdamState& state, double lr, double beta1, double beta2,
               double eps);
void adam_step(Tensor& param, AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

}  // namespace campd
