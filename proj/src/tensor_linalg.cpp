#include <cmath>
#include <cstring>

#include "campd/parallel.hpp"
#include "campd/tensor.hpp"
#include "tensor_internal.hpp"

namespace campd {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw TensorError(msg); }

inline int64_t floor_div(int64_t a, int64_t b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

inline int64_t ceil_div(int64_t a, int64_t b) {
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

// out[M,N] += a[M,K] * b[K,N]
//
// A 4x8 block of the output is held in registers across the whole K loop so
// the inner loop carries no load-add-store dependency through `out`. Per
// output element the terms are still added in ascending k order, matching the
// plain triple loop bit for bit. Edges fall back to row-wise axpy.
void mm_accum(const double* __restrict a, const double* __restrict b,
              double* __restrict out, int64_t M, int64_t K, int64_t N) {
  constexpr int64_t TM = 4, TN = 8;
  const int64_t m_full = M - M % TM;
  const int64_t n_full = N - N % TN;
  for (int64_t m0 = 0; m0 < m_full; m0 += TM) {
    const double* a0 = a + m0 * K;
    const double* a1 = a0 + K;
    const double* a2 = a1 + K;
    const double* a3 = a2 + K;
    for (int64_t n0 = 0; n0 < n_full; n0 += TN) {
      double* r0 = out + m0 * N + n0;
      double* r1 = r0 + N;
      double* r2 = r1 + N;
      double* r3 = r2 + N;
      double acc0[TN], acc1[TN], acc2[TN], acc3[TN];
      for (int64_t j = 0; j < TN; ++j) {
        acc0[j] = r0[j];
        acc1[j] = r1[j];
        acc2[j] = r2[j];
        acc3[j] = r3[j];
      }
      for (int64_t k = 0; k < K; ++k) {
        const double* __restrict brow = b + k * N + n0;
        const double av0 = a0[k], av1 = a1[k], av2 = a2[k], av3 = a3[k];
        for (int64_t j = 0; j < TN; ++j) {
          const double bj = brow[j];
          acc0[j] += av0 * bj;
          acc1[j] += av1 * bj;
          acc2[j] += av2 * bj;
          acc3[j] += av3 * bj;
        }
      }
      for (int64_t j = 0; j < TN; ++j) {
        r0[j] = acc0[j];
        r1[j] = acc1[j];
        r2[j] = acc2[j];
        r3[j] = acc3[j];
      }
    }
    if (n_full < N) {
      for (int64_t i = 0; i < TM; ++i) {
        const double* arow = a + (m0 + i) * K;
        double* orow = out + (m0 + i) * N;
        for (int64_t k = 0; k < K; ++k) {
          const double av = arow[k];
          if (av == 0.0) continue;
          const double* brow = b + k * N;
          for (int64_t n = n_full; n < N; ++n) orow[n] += av * brow[n];
        }
      }
    }
  }
  for (int64_t m = m_full; m < M; ++m) {
    const double* arow = a + m * K;
    double* orow = out + m * N;
    for (int64_t k = 0; k < K; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      const double* brow = b + k * N;
      for (int64_t n = 0; n < N; ++n) orow[n] += av * brow[n];
    }
  }
}

// da[M,K] += go[M,N] * b[K,N]^T
void mm_grad_a(const double* go, const double* b, double* da, int64_t M,
               int64_t K, int64_t N) {
  for (int64_t m = 0; m < M; ++m) {
    const double* grow = go + m * N;
    double* darow = da + m * K;
    for (int64_t k = 0; k < K; ++k) {
      const double* brow = b + k * N;
      double acc = 0.0;
      for (int64_t n = 0; n < N; ++n) acc += grow[n] * brow[n];
      darow[k] += acc;
    }
  }
}

// db[K,N] += a[M,K]^T * go[M,N]
//
// Same register blocking as mm_accum, with the 4x8 block taken from db and
// the reduction running over M. Term order per element is unchanged.
void mm_grad_b(const double* __restrict a, const double* __restrict go,
               double* __restrict db, int64_t M, int64_t K, int64_t N) {
  constexpr int64_t TK = 4, TN = 8;
  const int64_t k_full = K - K % TK;
  const int64_t n_full = N - N % TN;
  for (int64_t k0 = 0; k0 < k_full; k0 += TK) {
    for (int64_t n0 = 0; n0 < n_full; n0 += TN) {
      double* r0 = db + k0 * N + n0;
      double* r1 = r0 + N;
      double* r2 = r1 + N;
      double* r3 = r2 + N;
      double acc0[TN], acc1[TN], acc2[TN], acc3[TN];
      for (int64_t j = 0; j < TN; ++j) {
        acc0[j] = r0[j];
        acc1[j] = r1[j];
        acc2[j] = r2[j];
        acc3[j] = r3[j];
      }
      for (int64_t m = 0; m < M; ++m) {
        const double* __restrict grow = go + m * N + n0;
        const double* arow = a + m * K + k0;
        const double av0 = arow[0], av1 = arow[1], av2 = arow[2], av3 = arow[3];
        for (int64_t j = 0; j < TN; ++j) {
          const double gj = grow[j];
          acc0[j] += av0 * gj;
          acc1[j] += av1 * gj;
          acc2[j] += av2 * gj;
          acc3[j] += av3 * gj;
        }
      }
      for (int64_t j = 0; j < TN; ++j) {
        r0[j] = acc0[j];
        r1[j] = acc1[j];
        r2[j] = acc2[j];
        r3[j] = acc3[j];
      }
    }
    if (n_full < N) {
      for (int64_t m = 0; m < M; ++m) {
        const double* grow = go + m * N;
        const double* arow = a + m * K;
        for (int64_t i = 0; i < TK; ++i) {
          const double av = arow[k0 + i];
          if (av == 0.0) continue;
          double* dbrow = db + (k0 + i) * N;
          for (int64_t n = n_full; n < N; ++n) dbrow[n] += av * grow[n];
        }
      }
    }
  }
  for (int64_t m = 0; m < M; ++m) {
    const double* arow = a + m * K;
    const double* grow = go + m * N;
    for (int64_t k = k_full; k < K; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      double* dbrow = db + k * N;
      for (int64_t n = 0; n < N; ++n) dbrow[n] += av * grow[n];
    }
  }
}

// One interior tile of a unit-stride convolution row: eight consecutive
// output positions accumulate in registers across every (channel, tap) pair,
// then store once. KK > 0 bakes the tap count in at compile time so the
// (k, j) loops fully unroll; KK == 0 keeps it a runtime loop.
template <int KK>
inline void conv_row_tile(const double* __restrict xb0,
                          const double* __restrict wbase, double* __restrict dst,
                          double bv, int64_t Cin, int64_t L, int64_t K) {
  constexpr int64_t TL = 8;
  const int64_t kk = KK > 0 ? KK : K;
  double acc[TL];
  for (int64_t j = 0; j < TL; ++j) acc[j] = bv;
  for (int64_t ci = 0; ci < Cin; ++ci) {
    const double* __restrict xb = xb0 + ci * L;
    const double* __restrict wr = wbase + ci * K;
    for (int64_t k = 0; k < kk; ++k) {
      const double wk = wr[k];
      for (int64_t j = 0; j < TL; ++j) acc[j] += wk * xb[k + j];
    }
  }
  for (int64_t j = 0; j < TL; ++j) dst[j] = acc[j];
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const int ra = a.rank(), rb = b.rank();
  int64_t B = 1, M = 0, K = 0, N = 0;
  bool batched_a = false, batched_b = false;
  if (ra == 2 && rb == 2) {
    M = a.dim(0);
    K = a.dim(1);
    N = b.dim(1);
    if (b.dim(0) != K)
      fail("matmul: inner dims " + shape_str(a.shape()) + " x " +
           shape_str(b.shape()));
  } else if (ra == 3 && rb == 2) {
    batched_a = true;
    B = a.dim(0);
    M = a.dim(1);
    K = a.dim(2);
    N = b.dim(1);
    if (b.dim(0) != K)
      fail("matmul: inner dims " + shape_str(a.shape()) + " x " +
           shape_str(b.shape()));
  } else if (ra == 3 && rb == 3) {
    batched_a = batched_b = true;
    B = a.dim(0);
    M = a.dim(1);
    K = a.dim(2);
    N = b.dim(2);
    if (b.dim(0) != B || b.dim(1) != K)
      fail("matmul: incompatible batched shapes " + shape_str(a.shape()) +
           " x " + shape_str(b.shape()));
  } else {
    fail("matmul: unsupported ranks " + shape_str(a.shape()) + " x " +
         shape_str(b.shape()));
  }
  Shape out_shape = batched_a
                        ? Shape{static_cast<int>(B), static_cast<int>(M),
                                static_cast<int>(N)}
                        : Shape{static_cast<int>(M), static_cast<int>(N)};
  Tensor out = Tensor::zeros(out_shape);
  {
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values();
    parallel_for(B, [&](int64_t b0, int64_t b1) {
      for (int64_t bi = b0; bi < b1; ++bi)
        mm_accum(av.data() + (batched_a ? bi * M * K : 0),
                 bv.data() + (batched_b ? bi * K * N : 0),
                 ov.data() + bi * M * N, M, K, N);
    });
  }
  if (Tape* tp = Tape::current(); tp && (a.requires_grad() || b.requires_grad())) {
    tp->record("matmul", out, [a, b, out, B, M, K, N, batched_a, batched_b]() mutable {
      auto go = grad_of(out);
      auto av = a.values();
      auto bv = b.values();
      for (int64_t bi = 0; bi < B; ++bi) {
        const double* g = go.data() + bi * M * N;
        const double* ap = av.data() + (batched_a ? bi * M * K : 0);
        const double* bp = bv.data() + (batched_b ? bi * K * N : 0);
        if (a.requires_grad())
          mm_grad_a(g, bp, grad_of(a).data() + (batched_a ? bi * M * K : 0), M, K, N);
        if (b.requires_grad())
          mm_grad_b(ap, g, grad_of(b).data() + (batched_b ? bi * K * N : 0), M, K, N);
      }
    });
  }
  return out;
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int padding) {
  if (x.rank() != 3 || w.rank() != 3)
    fail("conv1d: expected x [B,Cin,L], w [Cout,Cin,K], got " +
         shape_str(x.shape()) + " / " + shape_str(w.shape()));
  const int64_t B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
  const int64_t Cout = w.dim(0), K = w.dim(2);
  if (w.dim(1) != Cin)
    fail("conv1d: channel mismatch " + shape_str(x.shape()) + " vs " +
         shape_str(w.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout))
    fail("conv1d: bias " + shape_str(bias.shape()) + " does not match " +
         std::to_string(Cout) + " output channels");
  if (stride < 1 || padding < 0) fail("conv1d: bad stride/padding");
  const int64_t Lout = (L + 2 * padding - K) / stride + 1;
  if (L + 2 * padding < K || Lout < 1)
    fail("conv1d: kernel " + std::to_string(K) + " too large for length " +
         std::to_string(L) + " with padding " + std::to_string(padding));
  Tensor out = Tensor::zeros({static_cast<int>(B), static_cast<int>(Cout),
                              static_cast<int>(Lout)});
  const int64_t s = stride, p = padding;
  {
    auto xv = x.values();
    auto wv = w.values();
    auto ov = out.values();
    const double* bptr = bias.defined() ? bias.values().data() : nullptr;
    parallel_for(B, [&](int64_t lo_b, int64_t hi_b) {
      for (int64_t b = lo_b; b < hi_b; ++b) {
        const double* xbat = &xv[b * Cin * L];
        for (int64_t co = 0; co < Cout; ++co) {
          double* orow = &ov[(b * Cout + co) * Lout];
          const double* wbase = &wv[co * Cin * K];
          const double bv = bptr ? bptr[co] : 0.0;
          // One output with the tap range clamped at the borders; also the
          // strided fallback. Accumulates in a register, stores once.
          auto at = [&](int64_t l) {
            const int64_t xoff = l * s - p;
            const int64_t k_min = std::max<int64_t>(0, -xoff);
            const int64_t k_max = std::min<int64_t>(K - 1, L - 1 - xoff);
            double acc = bv;
            for (int64_t ci = 0; ci < Cin; ++ci) {
              const double* xr = xbat + ci * L + xoff;
              const double* wr = wbase + ci * K;
              for (int64_t k = k_min; k <= k_max; ++k) acc += wr[k] * xr[k];
            }
            orow[l] = acc;
          };
          if (s == 1) {
            constexpr int64_t TL = 8;
            // Positions whose full tap window lies inside the input row.
            const int64_t in_first = std::min<int64_t>(Lout, p);
            const int64_t in_end = std::min<int64_t>(Lout, L + p - K + 1);
            int64_t l = 0;
            for (; l < in_first; ++l) at(l);
            for (; l + TL <= in_end; l += TL) {
              const double* xb0 = xbat + (l - p);
              double* dst = orow + l;
              switch (K) {
                case 1: conv_row_tile<1>(xb0, wbase, dst, bv, Cin, L, K); break;
                case 3: conv_row_tile<3>(xb0, wbase, dst, bv, Cin, L, K); break;
                case 5: conv_row_tile<5>(xb0, wbase, dst, bv, Cin, L, K); break;
                default: conv_row_tile<0>(xb0, wbase, dst, bv, Cin, L, K); break;
              }
            }
            for (; l < Lout; ++l) at(l);
          } else {
            for (int64_t l = 0; l < Lout; ++l) at(l);
          }
        }
      }
    });
  }
  if (Tape* tp = Tape::current();
      tp && (x.requires_grad() || w.requires_grad() ||
             (bias.defined() && bias.requires_grad()))) {
    tp->record("conv1d", out,
               [x, w, bias, out, B, Cin, Cout, L, K, Lout, s, p]() mutable {
      auto go = grad_of(out);
      auto xv = x.values();
      auto wv = w.values();
      for (int64_t b = 0; b < B; ++b) {
        for (int64_t co = 0; co < Cout; ++co) {
          const double* grow = &go[(b * Cout + co) * Lout];
          if (bias.defined() && bias.requires_grad()) {
            double acc = 0.0;
            for (int64_t l = 0; l < Lout; ++l) acc += grow[l];
            grad_of(bias)[static_cast<size_t>(co)] += acc;
          }
          if (!w.requires_grad()) continue;
          for (int64_t ci = 0; ci < Cin; ++ci) {
            const double* xrow = &xv[(b * Cin + ci) * L];
            double* gw = &grad_of(w)[(co * Cin + ci) * K];
            for (int64_t k = 0; k < K; ++k) {
              const int64_t lo_min = std::max<int64_t>(0, ceil_div(p - k, s));
              const int64_t lo_max =
                  std::min<int64_t>(Lout - 1, floor_div(L - 1 + p - k, s));
              double acc = 0.0;
              for (int64_t l = lo_min; l <= lo_max; ++l)
                acc += xrow[l * s + k - p] * grow[l];
              gw[k] += acc;
            }
          }
        }
        if (!x.requires_grad()) continue;
        // The input gradient gathers w[co,ci,k] * go[co,(xi+p-k)/s] over the
        // taps hitting position xi, accumulating in registers instead of
        // scattering through memory.
        const double* gob = &go[b * Cout * Lout];
        for (int64_t ci = 0; ci < Cin; ++ci) {
          double* gxrow = &grad_of(x)[(b * Cin + ci) * L];
          auto gx_at = [&](int64_t xi) {
            double acc = 0.0;
            for (int64_t co = 0; co < Cout; ++co) {
              const double* grow = gob + co * Lout;
              const double* wr = &wv[(co * Cin + ci) * K];
              for (int64_t k = (xi + p) % s; k < K; k += s) {
                const int64_t l = (xi + p - k) / s;
                if (l < 0 || l >= Lout) continue;
                acc += wr[k] * grow[l];
              }
            }
            gxrow[xi] += acc;
          };
          if (s == 1) {
            constexpr int64_t TL = 8;
            // Positions covered by every tap without clipping against the
            // ends of the output row.
            const int64_t in_first =
                std::min<int64_t>(L, std::max<int64_t>(0, K - 1 - p));
            const int64_t in_end = std::min<int64_t>(L, Lout - p);
            int64_t xi = 0;
            for (; xi < in_first; ++xi) gx_at(xi);
            for (; xi + TL <= in_end; xi += TL) {
              double acc[TL] = {0, 0, 0, 0, 0, 0, 0, 0};
              for (int64_t co = 0; co < Cout; ++co) {
                const double* grow = gob + co * Lout;
                const double* wr = &wv[(co * Cin + ci) * K];
                for (int64_t k = 0; k < K; ++k) {
                  const double wk = wr[k];
                  const double* g = grow + xi + p - k;
                  for (int64_t j = 0; j < TL; ++j) acc[j] += wk * g[j];
                }
              }
              for (int64_t j = 0; j < TL; ++j) gxrow[xi + j] += acc[j];
            }
            for (; xi < L; ++xi) gx_at(xi);
          } else {
            for (int64_t xi = 0; xi < L; ++xi) gx_at(xi);
          }
        }
      }
    });
  }
  return out;
}

Tensor conv_transpose1d(const Tensor& x, const Tensor& w, const Tensor& bias,
                        int stride, int padding) {
  if (x.rank() != 3 || w.rank() != 3)
    fail("conv_transpose1d: expected x [B,Cin,L], w [Cin,Cout,K], got " +
         shape_str(x.shape()) + " / " + shape_str(w.shape()));
  const int64_t B = x.dim(0), Cin = x.dim(1), L = x.dim(2);
  const int64_t Cout = w.dim(1), K = w.dim(2);
  if (w.dim(0) != Cin)
    fail("conv_transpose1d: channel mismatch " + shape_str(x.shape()) +
         " vs " + shape_str(w.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout))
    fail("conv_transpose1d: bias " + shape_str(bias.shape()) +
         " does not match " + std::to_string(Cout) + " output channels");
  if (stride < 1 || padding < 0) fail("conv_transpose1d: bad stride/padding");
  const int64_t s = stride, p = padding;
  const int64_t Lout = (L - 1) * s - 2 * p + K;
  if (Lout < 1)
    fail("conv_transpose1d: output length would be " + std::to_string(Lout));
  Tensor out = Tensor::zeros({static_cast<int>(B), static_cast<int>(Cout),
                              static_cast<int>(Lout)});
  {
    auto xv = x.values();
    auto wv = w.values();
    auto ov = out.values();
    const double* bptr = bias.defined() ? bias.values().data() : nullptr;
    parallel_for(B, [&](int64_t lo_b, int64_t hi_b) {
      for (int64_t b = lo_b; b < hi_b; ++b) {
        const double* xbat = &xv[b * Cin * L];
        for (int64_t co = 0; co < Cout; ++co) {
          double* orow = &ov[(b * Cout + co) * Lout];
          const double bv = bptr ? bptr[co] : 0.0;
          // Each output position gathers the (tap, input) pairs that land on
          // it, accumulating in a register instead of scattering into the
          // row once per tap.
          for (int64_t l = 0; l < Lout; ++l) {
            double acc = bv;
            for (int64_t ci = 0; ci < Cin; ++ci) {
              const double* xr = xbat + ci * L;
              const double* wr = &wv[(ci * Cout + co) * K];
              for (int64_t k = (l + p) % s; k < K; k += s) {
                const int64_t li = (l + p - k) / s;
                if (li < 0 || li >= L) continue;
                acc += wr[k] * xr[li];
              }
            }
            orow[l] = acc;
          }
        }
      }
    });
  }
  if (Tape* tp = Tape::current();
      tp && (x.requires_grad() || w.requires_grad() ||
             (bias.defined() && bias.requires_grad()))) {
    tp->record("conv_transpose1d", out,
               [x, w, bias, out, B, Cin, Cout, L, K, Lout, s, p]() mutable {
      auto go = grad_of(out);
      auto xv = x.values();
      auto wv = w.values();
      for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < Cout; ++co) {
          const double* grow = &go[(b * Cout + co) * Lout];
          if (bias.defined() && bias.requires_grad()) {
            double acc = 0.0;
            for (int64_t l = 0; l < Lout; ++l) acc += grow[l];
            grad_of(bias)[static_cast<size_t>(co)] += acc;
          }
          for (int64_t ci = 0; ci < Cin; ++ci) {
            const double* xrow = &xv[(b * Cin + ci) * L];
            const double* wrow = &wv[(ci * Cout + co) * K];
            double* gx = x.requires_grad() ? &grad_of(x)[(b * Cin + ci) * L] : nullptr;
            double* gw = w.requires_grad() ? &grad_of(w)[(ci * Cout + co) * K] : nullptr;
            for (int64_t k = 0; k < K; ++k) {
              const int64_t li_min = std::max<int64_t>(0, ceil_div(p - k, s));
              const int64_t li_max =
                  std::min<int64_t>(L - 1, floor_div(Lout - 1 + p - k, s));
              if (gx) {
                const double wk = wrow[k];
                for (int64_t li = li_min; li <= li_max; ++li)
                  gx[li] += wk * grow[li * s + k - p];
              }
              if (gw) {
                double acc = 0.0;
                for (int64_t li = li_min; li <= li_max; ++li)
                  acc += xrow[li] * grow[li * s + k - p];
                gw[k] += acc;
              }
            }
          }
        }
    });
  }
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor& mask) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3)
    fail("attention: q/k/v must be rank 3");
  const int64_t G = q.dim(0), Lq = q.dim(1), Dh = q.dim(2);
  const int64_t Lk = k.dim(1);
  if (k.dim(0) != G || v.dim(0) != G || k.dim(2) != Dh || v.dim(1) != Lk ||
      v.dim(2) != Dh)
    fail("attention: incompatible shapes " + shape_str(q.shape()) + " / " +
         shape_str(k.shape()) + " / " + shape_str(v.shape()));
  if (mask.defined() &&
      (mask.rank() != 3 || mask.dim(0) != G || mask.dim(1) != Lq ||
       mask.dim(2) != Lk))
    fail("attention: mask " + shape_str(mask.shape()) +
         " must be [G,Lq,Lk] = [" + std::to_string(G) + "," +
         std::to_string(Lq) + "," + std::to_string(Lk) + "]");
  Tensor kt = transpose(k, 1, 2);                       // [G,Dh,Lk]
  Tensor scores = scale(matmul(q, kt), 1.0 / std::sqrt(static_cast<double>(Dh)));
  if (mask.defined()) scores = add(scores, mask);
  Tensor att = softmax(scores, 2);                      // [G,Lq,Lk]
  return matmul(att, v);                                // [G,Lq,Dh]
}

}  // namespace campd
