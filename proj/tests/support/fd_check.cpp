#include "support/fd_check.hpp"

namespace campd::testing {

namespace {

Tensor probe_for(const std::function<Tensor()>& op, Rng& rng) {
  Tensor out = op();  // shape probe, no tape active at call sites
  return rnd(out.shape(), rng, false);
}

}  // namespace

double fd_check_catalog(uint64_t seed, int n_trials, double h) {
  double worst = 0.0;
  auto note = [&](double e) { worst = std::max(worst, e); };

  for (int trial = 0; trial < n_trials; ++trial) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(trial)));
    auto di = [&](int lo, int hi) {
      return lo + static_cast<int>(rng.below(static_cast<uint64_t>(hi - lo + 1)));
    };

    {  // add / sub / mul / scale
      Shape s{di(1, 3), di(1, 4)};
      Tensor a = rnd(s, rng), b = rnd(s, rng);
      Tensor w = rnd(s, rng, false);
      note(fd_max_err([&] { return probe(add(a, b), w); }, {a, b}, h));
      note(fd_max_err([&] { return probe(sub(a, b), w); }, {a, b}, h));
      note(fd_max_err([&] { return probe(mul(a, b), w); }, {a, b}, h));
      const double c = rng.uniform(-2.0, 2.0);
      note(fd_max_err([&] { return probe(scale(a, c), w); }, {a}, h));
    }

    {  // add_bias
      Shape s{di(1, 3), di(2, 5)};
      Tensor x = rnd(s, rng), b = rnd({s[1]}, rng);
      Tensor w = rnd(s, rng, false);
      note(fd_max_err([&] { return probe(add_bias(x, b), w); }, {x, b}, h));
    }

    {  // scale_shift
      const int B = di(1, 2), C = di(1, 4), L = di(2, 5);
      Tensor x = rnd({B, C, L}, rng), s = rnd({B, C}, rng), t = rnd({B, C}, rng);
      Tensor w = rnd({B, C, L}, rng, false);
      note(fd_max_err([&] { return probe(scale_shift(x, s, t), w); }, {x, s, t}, h));
    }

    {  // matmul, all three shape cases
      const int B = di(1, 3), M = di(1, 4), K = di(1, 4), N = di(1, 4);
      Tensor a2 = rnd({M, K}, rng), b2 = rnd({K, N}, rng);
      Tensor w2 = rnd({M, N}, rng, false);
      note(fd_max_err([&] { return probe(matmul(a2, b2), w2); }, {a2, b2}, h));
      Tensor a3 = rnd({B, M, K}, rng);
      Tensor w3 = rnd({B, M, N}, rng, false);
      note(fd_max_err([&] { return probe(matmul(a3, b2), w3); }, {a3, b2}, h));
      Tensor b3 = rnd({B, K, N}, rng);
      note(fd_max_err([&] { return probe(matmul(a3, b3), w3); }, {a3, b3}, h));
    }

    {  // conv1d
      const int B = di(1, 2), Cin = di(1, 3), Cout = di(1, 3);
      const int K = 1 + 2 * di(0, 2);  // 1, 3, 5
      const int L = di(K, K + 5), stride = di(1, 2), pad = di(0, 2);
      Tensor x = rnd({B, Cin, L}, rng), wt = rnd({Cout, Cin, K}, rng);
      Tensor bias = (trial % 2 == 0) ? rnd({Cout}, rng) : Tensor();
      auto op = [&] { return conv1d(x, wt, bias, stride, pad); };
      Tensor w = probe_for(op, rng);
      std::vector<Tensor> ins{x, wt};
      if (bias.defined()) ins.push_back(bias);
      note(fd_max_err([&] { return probe(op(), w); }, ins, h));
    }

    {  // conv_transpose1d
      const int B = di(1, 2), Cin = di(1, 3), Cout = di(1, 3);
      const int K = di(2, 4), L = di(2, 6), stride = di(1, 2);
      const int pad = std::min(di(0, 1), ((L - 1) * stride + K - 1) / 2);
      Tensor x = rnd({B, Cin, L}, rng), wt = rnd({Cin, Cout, K}, rng);
      Tensor bias = (trial % 2 == 1) ? rnd({Cout}, rng) : Tensor();
      auto op = [&] { return conv_transpose1d(x, wt, bias, stride, pad); };
      Tensor w = probe_for(op, rng);
      std::vector<Tensor> ins{x, wt};
      if (bias.defined()) ins.push_back(bias);
      note(fd_max_err([&] { return probe(op(), w); }, ins, h));
    }

    {  // group_norm
      const int B = di(1, 2), groups = di(1, 3), cg = di(1, 2);
      const int C = groups * cg, L = di(2, 5);
      Tensor x = rnd({B, C, L}, rng);
      Tensor gamma = rnd({C}, rng);
      for (auto& v : gamma.values()) v = 1.0 + 0.2 * v;
      Tensor beta = rnd({C}, rng);
      Tensor w = rnd({B, C, L}, rng, false);
      note(fd_max_err([&] { return probe(group_norm(x, gamma, beta, groups), w); },
                      {x, gamma, beta}, h));
    }

    {  // layer_norm
      const int R = di(1, 4), D = di(2, 6);
      Tensor x = rnd({R, D}, rng);
      Tensor gamma = rnd({D}, rng);
      for (auto& v : gamma.values()) v = 1.0 + 0.2 * v;
      Tensor beta = rnd({D}, rng);
      Tensor w = rnd({R, D}, rng, false);
      note(fd_max_err([&] { return probe(layer_norm(x, gamma, beta), w); },
                      {x, gamma, beta}, h));
    }

    {  // mish / gelu
      Shape s{di(1, 2), di(1, 3), di(2, 4)};
      Tensor x = rnd(s, rng);
      for (auto& v : x.values()) v *= 2.0;
      Tensor w = rnd(s, rng, false);
      note(fd_max_err([&] { return probe(mish(x), w); }, {x}, h));
      note(fd_max_err([&] { return probe(gelu(x), w); }, {x}, h));
    }

    {  // softmax over each axis in turn
      Shape s{di(1, 3), di(2, 4), di(2, 4)};
      Tensor x = rnd(s, rng);
      Tensor w = rnd(s, rng, false);
      const int axis = trial % 3;
      note(fd_max_err([&] { return probe(softmax(x, axis), w); }, {x}, h));
    }

    {  // concat + slice
      const int axis = trial % 3;
      Shape s{di(1, 3), di(1, 3), di(2, 4)};
      Shape s2 = s;
      s2[static_cast<size_t>(axis)] = di(1, 3);
      Tensor a = rnd(s, rng), b = rnd(s2, rng);
      std::vector<Tensor> parts{a, b};
      auto op = [&] { return concat(parts, axis); };
      Tensor w = probe_for(op, rng);
      note(fd_max_err([&] { return probe(op(), w); }, {a, b}, h));
      const int n = s[static_cast<size_t>(axis)];
      const int len = di(1, n), start = di(0, n - len);
      auto op2 = [&] { return slice(a, axis, start, len); };
      Tensor w2 = probe_for(op2, rng);
      note(fd_max_err([&] { return probe(op2(), w2); }, {a}, h));
    }

    {  // reshape + transpose
      Tensor x = rnd({2, 3, 4}, rng);
      Tensor w = rnd({6, 4}, rng, false);
      note(fd_max_err([&] { return probe(reshape(x, {6, 4}), w); }, {x}, h));
      const int a = trial % 3, b = (trial + 1 + trial / 3 % 2) % 3;
      if (a != b) {
        auto op = [&] { return transpose(x, a, b); };
        Tensor wt = probe_for(op, rng);
        note(fd_max_err([&] { return probe(op(), wt); }, {x}, h));
      }
    }

    {  // sum_all / mean_all
      Tensor x = rnd({di(1, 3), di(1, 4)}, rng);
      note(fd_max_err([&] { return sum_all(x); }, {x}, h));
      note(fd_max_err([&] { return scale(mean_all(mul(x, x)), 0.5); }, {x}, h));
    }

    {  // scatter_rows (with repeats)
      const int N = di(1, 4), D = di(1, 3), R = N + di(0, 2);
      Tensor src = rnd({N, D}, rng);
      std::vector<int> rows;
      for (int i = 0; i < N; ++i) rows.push_back(di(0, R - 1));
      Tensor w = rnd({R, D}, rng, false);
      note(fd_max_err([&] { return probe(scatter_rows(src, rows, R), w); },
                      {src}, h));
    }

    {  // attention, with and without additive mask
      const int G = di(1, 2), Lq = di(1, 3), Lk = di(2, 4), Dh = di(1, 3);
      Tensor q = rnd({G, Lq, Dh}, rng), k = rnd({G, Lk, Dh}, rng),
             v = rnd({G, Lk, Dh}, rng);
      Tensor mask;
      if (trial % 2 == 0) {
        mask = Tensor::zeros({G, Lq, Lk});
        auto mv = mask.values();
        for (int g = 0; g < G; ++g)
          for (int i = 0; i < Lq; ++i)
            for (int j = 1; j < Lk; ++j)
              if (rng.below(3) == 0)
                mv[static_cast<size_t>((g * Lq + i) * Lk + j)] = -1e9;
      }
      Tensor w = rnd({G, Lq, Dh}, rng, false);
      note(fd_max_err([&] { return probe(attention(q, k, v, mask), w); },
                      {q, k, v}, h));
    }
  }
  return worst;
}

}  // namespace campd::testing
