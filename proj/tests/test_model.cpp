#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <vector>

#include "campd/model.hpp"
#include "campd/rng.hpp"
#include "campd/tensor.hpp"

using namespace campd;

namespace {

std::vector<ContextSet> ragged_contexts() {
  std::vector<ContextSet> ctxs(2);
  ctxs[0].items = {{0, {0.1, -0.3, 0.5}}, {0, {0.7, 0.2, -0.1}}};
  ctxs[1].items = {{0, {-0.5, 0.4, 0.9}}};
  return ctxs;
}

}  // namespace

TEST_CASE("config validation enforces the structural invariants") {
  CHECK_NOTHROW(ModelConfig::desk().validate());
  CHECK_NOTHROW(ModelConfig::paper().validate());
  CHECK_NOTHROW(ModelConfig::tiny().validate());

  ModelConfig bad = ModelConfig::tiny();
  bad.head_dim = 3;  // 2 * 3 != 8
  CHECK_THROWS_AS(bad.validate(), ModelError);

  bad = ModelConfig::tiny();
  bad.H = 9;  // not divisible by 2^(depth-1)
  CHECK_THROWS_AS(bad.validate(), ModelError);

  bad = ModelConfig::tiny();
  bad.channels.clear();
  CHECK_THROWS_AS(bad.validate(), ModelError);

  const ModelConfig desk = ModelConfig::desk();
  const ModelConfig back = ModelConfig::from_json(desk.to_json());
  CHECK(back.d_z == desk.d_z);
  CHECK(back.channels == desk.channels);
  CHECK(back.H == desk.H);
  CHECK(back.T_train == desk.T_train);
  CHECK(back.context_dims == desk.context_dims);
  CHECK_THROWS_AS(ModelConfig::from_json("{\"d_z\": 32}"), ModelError);
  CHECK_THROWS_AS(ModelConfig::from_json("not json"), ModelError);
}

TEST_CASE("sinusoidal encoding: bounded, distinct, injective over [1,25]") {
  const int dz = 32;
  std::vector<std::vector<double>> codes;
  for (int t = 1; t <= 25; ++t) {
    const auto pe = sinusoidal_pe(t, dz);
    REQUIRE(pe.size() == static_cast<size_t>(dz));
    for (double v : pe) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
    codes.push_back(pe);
  }
  double min_gap = 1e300;
  for (size_t a = 0; a < codes.size(); ++a)
    for (size_t b = a + 1; b < codes.size(); ++b) {
      double gap = 0.0;
      for (int i = 0; i < dz; ++i)
        gap = std::max(gap, std::abs(codes[a][i] - codes[b][i]));
      min_gap = std::min(min_gap, gap);
    }
  CHECK(min_gap >= 1e-6);  // pairwise distinct with real margin

  double diff12 = 0.0;
  for (int i = 0; i < dz; ++i)
    diff12 = std::max(diff12, std::abs(codes[0][i] - codes[1][i]));
  CHECK(diff12 > 0.0);
}

TEST_CASE("weight init: deterministic per seed, zeroed output head") {
  const ModelConfig cfg = ModelConfig::tiny();
  Model a(cfg, 7), b(cfg, 7), c(cfg, 8);
  REQUIRE(a.parameters().size() == b.parameters().size());
  bool any_diff_seed7_vs_8 = false;
  for (size_t i = 0; i < a.parameters().size(); ++i) {
    const auto& [name, ta] = a.parameters()[i];
    const auto& tb = b.parameters()[i].second;
    REQUIRE(ta.shape() == tb.shape());
    for (int64_t j = 0; j < ta.size(); ++j) CHECK(ta[j] == tb[j]);
    const auto& tc = c.parameters()[i].second;
    for (int64_t j = 0; j < ta.size(); ++j)
      if (ta[j] != tc[j]) any_diff_seed7_vs_8 = true;
    // Truncated normal: nothing beyond two standard deviations.
    if (name.ends_with(".w") && !name.starts_with("head.out"))
      for (int64_t j = 0; j < ta.size(); ++j) CHECK(std::abs(ta[j]) <= 0.04);
  }
  CHECK(any_diff_seed7_vs_8);
  for (int64_t j = 0; j < a.param("head.out.w").size(); ++j)
    CHECK(a.param("head.out.w")[j] == 0.0);
  CHECK(a.parameter_count() > 0);

  // A freshly initialized model therefore predicts exactly zero noise.
  Rng rng(3);
  const Tensor tau = Tensor::randn({2, cfg.H, cfg.d_q}, rng);
  const Tensor out = a.predict_noise(tau, ragged_contexts(), {3, 5});
  for (int64_t j = 0; j < out.size(); ++j) CHECK(out[j] == 0.0);

  CHECK_THROWS_AS(a.param("no.such.tensor"), ModelError);
}

TEST_CASE("context encoder: arity, order preservation, unregistered types") {
  Model m(ModelConfig::tiny(), 1);

  CHECK(m.encode_context(ContextSet{}).empty());

  ContextSet three;
  three.items = {{0, {0.1, 0.2, 0.3}}, {0, {0.4, 0.5, 0.6}}, {0, {0.7, 0.8, 0.9}}};
  const auto z = m.encode_context(three);
  REQUIRE(z.size() == 3);
  for (const auto& v : z) CHECK(v.size() == 8);

  ContextSet permuted;
  permuted.items = {three.items[2], three.items[0], three.items[1]};
  const auto zp = m.encode_context(permuted);
  for (size_t i = 0; i < 8; ++i) {
    CHECK(zp[0][i] == z[2][i]);
    CHECK(zp[1][i] == z[0][i]);
    CHECK(zp[2][i] == z[1][i]);
  }

  ContextSet bad;
  bad.items = {{3, {0.1, 0.2, 0.3}}};
  CHECK_THROWS_AS(m.encode_context(bad), ModelError);
  ContextSet too_short;
  too_short.items = {{0, {0.1}}};
  CHECK_THROWS_AS(m.encode_context(too_short), ModelError);
}

TEST_CASE("attention bridge: shape preservation and key permutation invariance") {
  Model m(ModelConfig::tiny(), 11);
  Rng rng(5);
  const Tensor tokens = Tensor::randn({2, 4, 8}, rng);

  // kv with a single token (the unconditional case) is well-defined.
  const Tensor kv1 = Tensor::randn({2, 1, 8}, rng);
  const Tensor out1 = m.attention_bridge(tokens, kv1, Tensor{});
  CHECK(out1.shape() == tokens.shape());

  // Permuting the keys/values leaves the output unchanged.
  const Tensor kv = Tensor::randn({2, 3, 8}, rng);
  std::vector<double> shuf(kv.values().begin(), kv.values().end());
  for (int b = 0; b < 2; ++b)
    for (int d = 0; d < 8; ++d) {
      const size_t base = static_cast<size_t>(b) * 24;
      std::swap(shuf[base + 0 * 8 + d], shuf[base + 2 * 8 + d]);
    }
  const Tensor kv_perm = Tensor::from({2, 3, 8}, std::move(shuf));
  const Tensor a = m.attention_bridge(tokens, kv, Tensor{});
  const Tensor b = m.attention_bridge(tokens, kv_perm, Tensor{});
  REQUIRE(a.shape() == b.shape());
  for (int64_t i = 0; i < a.size(); ++i)
    CHECK(std::abs(a[i] - b[i]) <= 1e-10);

  CHECK_THROWS_AS(m.attention_bridge(Tensor::randn({2, 4, 6}, rng), kv, Tensor{}),
                  ModelError);
}

TEST_CASE("predict_noise: shapes, determinism, context-set invariances") {
  const ModelConfig cfg = ModelConfig::tiny();
  Model m(cfg, 99);
  // Perturb the zero head so outputs are informative.
  {
    Rng rng(13);
    for (auto& [name, t] : m.parameters())
      if (name.starts_with("head.out"))
        for (double& v : t.values()) v = 0.05 * rng.normal();
  }
  Rng rng(21);
  const Tensor tau = Tensor::randn({2, cfg.H, cfg.d_q}, rng);

  const auto ctxs = ragged_contexts();
  const Tensor out = m.predict_noise(tau, ctxs, {3, 5});
  REQUIRE(out.shape() == Shape{2, cfg.H, cfg.d_q});
  for (int64_t i = 0; i < out.size(); ++i) CHECK(std::isfinite(out[i]));

  const Tensor out2 = m.predict_noise(tau, ctxs, {3, 5});
  for (int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == out2[i]);

  // Same weights evaluate any context cardinality, including none.
  for (int n_ctx = 0; n_ctx <= 5; ++n_ctx) {
    std::vector<ContextSet> cs(2);
    Rng crng(static_cast<uint64_t>(n_ctx) + 1);
    for (int i = 0; i < n_ctx; ++i) {
      cs[0].items.push_back(
          {0, {crng.uniform(-1, 1), crng.uniform(-1, 1), crng.uniform(-1, 1)}});
      if (i % 2 == 0)
        cs[1].items.push_back(
            {0, {crng.uniform(-1, 1), crng.uniform(-1, 1), crng.uniform(-1, 1)}});
    }
    const Tensor o = m.predict_noise(tau, cs, {1, cfg.T_train});
    CHECK(o.shape() == Shape{2, cfg.H, cfg.d_q});
  }

  // Permuting a 4-element context set changes nothing (up to fp noise).
  std::vector<ContextSet> four(2);
  Rng crng(77);
  for (int i = 0; i < 4; ++i) {
    four[0].items.push_back(
        {0, {crng.uniform(-1, 1), crng.uniform(-1, 1), crng.uniform(-1, 1)}});
    four[1].items.push_back(
        {0, {crng.uniform(-1, 1), crng.uniform(-1, 1), crng.uniform(-1, 1)}});
  }
  std::vector<ContextSet> perm = four;
  std::rotate(perm[0].items.begin(), perm[0].items.begin() + 1, perm[0].items.end());
  std::swap(perm[1].items[0], perm[1].items[3]);
  const Tensor y1 = m.predict_noise(tau, four, {2, 4});
  const Tensor y2 = m.predict_noise(tau, perm, {2, 4});
  for (int64_t i = 0; i < y1.size(); ++i) CHECK(std::abs(y1[i] - y2[i]) <= 1e-10);

  // Errors: wrong trajectory shape, bad timestep, unregistered type.
  CHECK_THROWS_AS(m.predict_noise(Tensor::randn({2, cfg.H + 2, cfg.d_q}, rng),
                                  ctxs, {3, 5}),
                  ModelError);
  CHECK_THROWS_AS(m.predict_noise(tau, ctxs, {0, 5}), ModelError);
  CHECK_THROWS_AS(m.predict_noise(tau, ctxs, {3, cfg.T_train + 1}), ModelError);
  std::vector<ContextSet> badtype(2);
  badtype[0].items = {{9, {0.0, 0.0, 0.0}}};
  CHECK_THROWS_AS(m.predict_noise(tau, badtype, {3, 5}), ModelError);
  CHECK_THROWS_AS(m.predict_noise(tau, ctxs, {3}), ModelError);
}

TEST_CASE("full-network gradients match finite differences on a tiny config") {
  Model m(ModelConfig::tiny(), 4242);
  // Give the output head real weights so it has nontrivial gradients too.
  {
    Rng rng(6);
    for (auto& [name, t] : m.parameters())
      if (name.starts_with("head.out"))
        for (double& v : t.values()) v = 0.02 * rng.normal();
  }
  Rng rng(31);
  const ModelConfig& cfg = m.config();
  const Tensor tau = Tensor::randn({2, cfg.H, cfg.d_q}, rng);
  const Tensor probe = Tensor::randn({2, cfg.H, cfg.d_q}, rng);
  const auto ctxs = ragged_contexts();
  const std::vector<int> ts = {3, 5};

  auto loss_value = [&]() {
    const Tensor out = m.predict_noise(tau, ctxs, ts);
    double s = 0.0;
    const auto ov = out.values();
    const auto pv = probe.values();
    for (size_t i = 0; i < ov.size(); ++i) s += ov[i] * pv[i];
    return s;
  };

  std::map<std::string, std::vector<double>> ad;
  {
    Tape tape;
    const Tensor out = m.predict_noise(tau, ctxs, ts);
    const Tensor loss = sum_all(mul(out, probe));
    tape.backward(loss);
    for (auto& [name, t] : m.parameters()) {
      const auto g = std::as_const(t).grad();
      ad[name] = std::vector<double>(g.begin(), g.end());
      t.zero_grad();
    }
  }

  // Probe a spread of parameters across the whole network.
  Rng pick(2025);
  const auto& params = m.parameters();
  const size_t stride = std::max<size_t>(1, params.size() / 14);
  int n_checked = 0;
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); pi += stride) {
    auto& [name, t] = m.parameters()[pi];
    const int64_t j = static_cast<int64_t>(pick.below(static_cast<uint64_t>(t.size())));
    const double h = 1e-5;
    const double orig = t[j];
    t.values()[static_cast<size_t>(j)] = orig + h;
    const double fp = loss_value();
    t.values()[static_cast<size_t>(j)] = orig - h;
    const double fm = loss_value();
    t.values()[static_cast<size_t>(j)] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    const double a = ad[name][static_cast<size_t>(j)];
    const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
    worst = std::max(worst, rel);
    CHECK(rel <= 1e-3);
    ++n_checked;
  }
  CHECK(n_checked >= 10);
  MESSAGE("checked ", n_checked, " parameters, worst relative error ", worst);
}

TEST_CASE("checkpoints round-trip weights bit-exactly with full metadata") {
  const auto path =
      (std::filesystem::temp_directory_path() / "campd_model_ckpt.bin").string();

  Model m(ModelConfig::tiny(), 2718);
  Checkpoint ckpt;
  ckpt.config = m.config();
  ckpt.robot = RobotKind::arm2;
  ckpt.schedule_kind = "cosine";
  ckpt.norm = Normalizer::fit(RobotModel::arm2(), Environment{}, 0.05, 0.15);
  ckpt.weights = m.parameters();
  save_model_checkpoint(path, ckpt);

  const Checkpoint back = load_model_checkpoint(path);
  CHECK(back.robot == RobotKind::arm2);
  CHECK(back.schedule_kind == "cosine");
  CHECK(back.config.d_z == m.config().d_z);
  CHECK(back.config.channels == m.config().channels);
  CHECK(back.norm.q_lo == ckpt.norm.q_lo);
  CHECK(back.norm.q_hi == ckpt.norm.q_hi);
  REQUIRE(back.norm.types.size() == 1);
  CHECK(back.norm.types[0].name == "sphere2d");

  Model loaded(back.config, back.weights);
  REQUIRE(loaded.parameters().size() == m.parameters().size());
  for (size_t i = 0; i < m.parameters().size(); ++i) {
    const auto& [name, t] = m.parameters()[i];
    CHECK(loaded.parameters()[i].first == name);
    const auto& lt = loaded.parameters()[i].second;
    for (int64_t j = 0; j < t.size(); ++j) CHECK(lt[j] == t[j]);
  }
  // And the loaded model computes the same function.
  Rng rng(1);
  const Tensor tau = Tensor::randn({1, m.config().H, m.config().d_q}, rng);
  const Tensor a = m.predict_noise(tau, {ContextSet{}}, {2});
  const Tensor b = loaded.predict_noise(tau, {ContextSet{}}, {2});
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  std::filesystem::remove(path);

  // Mismatched weight lists are rejected with the offending name.
  auto missing = m.parameters();
  missing.pop_back();
  CHECK_THROWS_AS(Model(m.config(), missing), ModelError);
  auto extra = m.parameters();
  extra.emplace_back("rogue.w", Tensor::zeros({1}));
  CHECK_THROWS_AS(Model(m.config(), extra), ModelError);
  auto dup = m.parameters();
  dup.push_back(dup.front());
  CHECK_THROWS_AS(Model(m.config(), dup), ModelError);
  auto wrong = m.parameters();
  wrong[0].second = Tensor::zeros({3, 3});
  CHECK_THROWS_AS(Model(m.config(), wrong), ModelError);
}
