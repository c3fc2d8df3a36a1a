#include "campd/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <utility>

#include <json.hpp>

#include "campd/serialize.hpp"

namespace campd {

namespace {

constexpr double kMaskedLogit = -1e9;
constexpr double kInitStd = 0.02;

// Largest group count <= 8 that divides the channel width, so tiny test
// configurations normalize too.
int groups_for(int channels) {
  for (int g = std::min(8, channels); g >= 2; --g)
    if (channels % g == 0) return g;
  return 1;
}

double trunc_normal(Rng& rng, double stddev) {
  double v;
  do {
    v = rng.normal();
  } while (std::abs(v) > 2.0);
  return v * stddev;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_bias(matmul(x, w), b);
}

// Enumerates every parameter (name, shape, init kind) in registration order.
// kind: 'w' truncated normal, 'b' zero bias, 'g' unit gain, 'z' zero weight.
void walk_params(
    const ModelConfig& cfg,
    const std::function<void(const std::string&, const Shape&, char)>& f) {
  const int dz = cfg.d_z;
  const int D = cfg.depth();

  f("time.fc1.w", {dz, 4 * dz}, 'w');
  f("time.fc1.b", {4 * dz}, 'b');
  f("time.fc2.w", {4 * dz, dz}, 'w');
  f("time.fc2.b", {dz}, 'b');

  for (size_t k = 0; k < cfg.context_dims.size(); ++k) {
    const std::string p = "ctx" + std::to_string(k);
    f(p + ".fc1.w", {cfg.context_dims[k], dz}, 'w');
    f(p + ".fc1.b", {dz}, 'b');
    f(p + ".fc2.w", {dz, dz}, 'w');
    f(p + ".fc2.b", {dz}, 'b');
  }

  auto res = [&](const std::string& p, int cin, int cout) {
    f(p + ".conv1.w", {cout, cin, 5}, 'w');
    f(p + ".conv1.b", {cout}, 'b');
    f(p + ".gn1.g", {cout}, 'g');
    f(p + ".gn1.b", {cout}, 'b');
    f(p + ".zproj.w", {dz, 2 * cout}, 'w');
    f(p + ".zproj.b", {2 * cout}, 'b');
    f(p + ".conv2.w", {cout, cout, 5}, 'w');
    f(p + ".conv2.b", {cout}, 'b');
    f(p + ".gn2.g", {cout}, 'g');
    f(p + ".gn2.b", {cout}, 'b');
    if (cin != cout) {
      f(p + ".res.w", {cout, cin, 1}, 'w');
      f(p + ".res.b", {cout}, 'b');
    }
  };

  int cin = cfg.d_q;
  for (int i = 0; i < D; ++i) {
    const std::string p = "down" + std::to_string(i);
    res(p + ".res", cin, cfg.channels[static_cast<size_t>(i)]);
    cin = cfg.channels[static_cast<size_t>(i)];
    if (i + 1 < D) {
      f(p + ".down.w", {cin, cin, 3}, 'w');
      f(p + ".down.b", {cin}, 'b');
    }
  }

  const int cb = cfg.channels.back();
  res("mid.res1", cb, cb);

  f("bridge.proj_in.w", {cb, dz}, 'w');
  f("bridge.proj_in.b", {dz}, 'b');
  for (int s = 1; s <= 3; ++s) {
    f("bridge.ln" + std::to_string(s) + ".g", {dz}, 'g');
    f("bridge.ln" + std::to_string(s) + ".b", {dz}, 'b');
  }
  for (const char* att : {"self", "cross"}) {
    const std::string p = std::string("bridge.") + att;
    for (const char* m : {"q", "k", "v", "o"}) {
      f(p + ".w" + m, {dz, dz}, 'w');
      f(p + ".b" + m, {dz}, 'b');
    }
  }
  f("bridge.ffn.fc1.w", {dz, 4 * dz}, 'w');
  f("bridge.ffn.fc1.b", {4 * dz}, 'b');
  f("bridge.ffn.fc2.w", {4 * dz, dz}, 'w');
  f("bridge.ffn.fc2.b", {dz}, 'b');
  f("bridge.proj_out.w", {dz, cb}, 'w');
  f("bridge.proj_out.b", {cb}, 'b');

  res("mid.res2", cb, cb);

  for (int i = D - 2; i >= 0; --i) {
    const std::string p = "up" + std::to_string(i);
    f(p + ".upconv.w",
      {cfg.channels[static_cast<size_t>(i + 1)], cfg.channels[static_cast<size_t>(i)], 4},
      'w');
    f(p + ".upconv.b", {cfg.channels[static_cast<size_t>(i)]}, 'b');
    res(p + ".res", 2 * cfg.channels[static_cast<size_t>(i)],
        cfg.channels[static_cast<size_t>(i)]);
  }

  const int c0 = cfg.channels.front();
  f("head.conv1.w", {c0, c0, 5}, 'w');
  f("head.conv1.b", {c0}, 'b');
  f("head.gn.g", {c0}, 'g');
  f("head.gn.b", {c0}, 'b');
  // Zero-initialized output head: the fresh model predicts zero noise.
  f("head.out.w", {cfg.d_q, c0, 1}, 'z');
  f("head.out.b", {cfg.d_q}, 'z');
}

}  // namespace

void ModelConfig::validate() const {
  if (d_z < 2 || d_z % 2 != 0)
    throw ModelError("config: d_z must be even and >= 2 (got " +
                     std::to_string(d_z) + ")");
  if (n_heads < 1 || head_dim < 1 || n_heads * head_dim != d_z)
    throw ModelError("config: need n_heads * head_dim == d_z (got " +
                     std::to_string(n_heads) + " * " + std::to_string(head_dim) +
                     " != " + std::to_string(d_z) + ")");
  if (channels.empty())
    throw ModelError("config: channel schedule must be nonempty");
  for (int c : channels)
    if (c < 1) throw ModelError("config: channel widths must be positive");
  if (d_q < 1) throw ModelError("config: d_q must be >= 1");
  if (T_train < 1) throw ModelError("config: T_train must be >= 1");
  const int down_factor = 1 << (depth() - 1);
  if (H < 2 || H % down_factor != 0)
    throw ModelError("config: H (" + std::to_string(H) +
                     ") must be a positive multiple of 2^(depth-1) = " +
                     std::to_string(down_factor));
  if (context_dims.empty())
    throw ModelError("config: at least one context type must be registered");
  for (int d : context_dims)
    if (d < 1) throw ModelError("config: context param dims must be positive");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::paper() {
  ModelConfig cfg;
  cfg.d_z = 64;
  cfg.channels = {32, 64, 128, 256};
  cfg.n_heads = 4;
  cfg.head_dim = 16;
  return cfg;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig cfg;
  cfg.d_z = 8;
  cfg.channels = {8, 16};
  cfg.n_heads = 2;
  cfg.head_dim = 4;
  cfg.H = 8;
  return cfg;
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["d_z"] = d_z;
  j["channels"] = channels;
  j["n_heads"] = n_heads;
  j["head_dim"] = head_dim;
  j["H"] = H;
  j["d_q"] = d_q;
  j["T_train"] = T_train;
  j["context_dims"] = context_dims;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    ModelConfig cfg;
    cfg.d_z = j.at("d_z").get<int>();
    cfg.channels = j.at("channels").get<std::vector<int>>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.head_dim = j.at("head_dim").get<int>();
    cfg.H = j.at("H").get<int>();
    cfg.d_q = j.at("d_q").get<int>();
    cfg.T_train = j.at("T_train").get<int>();
    cfg.context_dims = j.at("context_dims").get<std::vector<int>>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("config: bad JSON: ") + e.what());
  }
}

Model::Model(ModelConfig config, uint64_t seed) : cfg_(std::move(config)) {
  cfg_.validate();
  Rng rng(mix_seed(seed, 0xA0DE1u));
  walk_params(cfg_, [&](const std::string& name, const Shape& shape, char kind) {
    Tensor t = Tensor::zeros(shape, /*requires_grad=*/true);
    auto v = t.values();
    if (kind == 'w')
      for (double& x : v) x = trunc_normal(rng, kInitStd);
    else if (kind == 'g')
      for (double& x : v) x = 1.0;
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(t));
  });
}

Model::Model(ModelConfig config, std::vector<NamedTensor> weights)
    : cfg_(std::move(config)) {
  cfg_.validate();
  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : weights)
    if (!by_name.emplace(name, t).second)
      throw ModelError("weights: duplicate tensor '" + name + "'");
  walk_params(cfg_, [&](const std::string& name, const Shape& shape, char) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw ModelError("weights: missing tensor '" + name + "'");
    if (it->second.shape() != shape)
      throw ModelError("weights: tensor '" + name + "' has shape " +
                       shape_str(it->second.shape()) + ", expected " +
                       shape_str(shape));
    it->second.set_requires_grad(true);
    index_[name] = params_.size();
    params_.emplace_back(name, it->second);
    by_name.erase(it);
  });
  if (!by_name.empty())
    throw ModelError("weights: unknown tensor '" + by_name.begin()->first + "'");
}

const Tensor& Model::param(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ModelError("unknown parameter '" + name + "'");
  return params_[it->second].second;
}

int64_t Model::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

std::vector<double> sinusoidal_pe(int t, int d_z) {
  std::vector<double> pe(static_cast<size_t>(d_z));
  for (int i = 0; i < d_z / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / d_z);
    pe[static_cast<size_t>(2 * i)] = std::sin(t * freq);
    pe[static_cast<size_t>(2 * i + 1)] = std::cos(t * freq);
  }
  return pe;
}

Tensor Model::encode_time(const std::vector<int>& ts) const {
  if (ts.empty()) throw ModelError("encode_time: empty timestep batch");
  const int B = static_cast<int>(ts.size());
  const int dz = cfg_.d_z;
  std::vector<double> pe(static_cast<size_t>(B) * dz);
  for (int b = 0; b < B; ++b) {
    const int t = ts[static_cast<size_t>(b)];
    if (t < 1 || t > cfg_.T_train)
      throw ModelError("encode_time: timestep " + std::to_string(t) +
                       " outside [1, " + std::to_string(cfg_.T_train) + "]");
    const std::vector<double> row = sinusoidal_pe(t, dz);
    std::copy(row.begin(), row.end(), pe.begin() + static_cast<int64_t>(b) * dz);
  }
  Tensor x = Tensor::from({B, dz}, std::move(pe));
  x = mish(linear(x, param("time.fc1.w"), param("time.fc1.b")));
  return linear(x, param("time.fc2.w"), param("time.fc2.b"));
}

std::vector<std::vector<double>> Model::encode_context(const ContextSet& c) const {
  std::vector<std::vector<double>> out;
  out.reserve(c.items.size());
  for (const auto& inst : c.items) {
    if (inst.type_id < 0 ||
        inst.type_id >= static_cast<int>(cfg_.context_dims.size()))
      throw ModelError("encode_context: unregistered context type " +
                       std::to_string(inst.type_id));
    const int dim = cfg_.context_dims[static_cast<size_t>(inst.type_id)];
    if (static_cast<int>(inst.params.size()) != dim)
      throw ModelError("encode_context: type " + std::to_string(inst.type_id) +
                       " expects " + std::to_string(dim) + " params, got " +
                       std::to_string(inst.params.size()));
    const std::string p = "ctx" + std::to_string(inst.type_id);
    Tensor x = Tensor::from({1, dim}, inst.params);
    x = mish(linear(x, param(p + ".fc1.w"), param(p + ".fc1.b")));
    x = linear(x, param(p + ".fc2.w"), param(p + ".fc2.b"));
    out.emplace_back(x.values().begin(), x.values().end());
  }
  return out;
}

Tensor Model::mha(const std::string& p, const Tensor& q_in, const Tensor& kv,
                  const Tensor& mask) const {
  const int B = q_in.dim(0);
  const int Lq = q_in.dim(1);
  const int Lk = kv.dim(1);
  const int nH = cfg_.n_heads;
  const int Dh = cfg_.head_dim;
  auto heads = [&](const Tensor& t, int L) {
    return reshape(transpose(reshape(t, {B, L, nH, Dh}), 1, 2), {B * nH, L, Dh});
  };
  const Tensor q = heads(linear(q_in, param(p + ".wq"), param(p + ".bq")), Lq);
  const Tensor k = heads(linear(kv, param(p + ".wk"), param(p + ".bk")), Lk);
  const Tensor v = heads(linear(kv, param(p + ".wv"), param(p + ".bv")), Lk);
  Tensor o = attention(q, k, v, mask);
  o = reshape(transpose(reshape(o, {B, nH, Lq, Dh}), 1, 2), {B, Lq, nH * Dh});
  return linear(o, param(p + ".wo"), param(p + ".bo"));
}

Tensor Model::attention_bridge(const Tensor& tokens, const Tensor& kv,
                               const Tensor& kv_mask) const {
  if (tokens.rank() != 3 || tokens.dim(2) != cfg_.d_z)
    throw ModelError("attention_bridge: tokens shape " +
                     shape_str(tokens.shape()) + ", expected [B, L, " +
                     std::to_string(cfg_.d_z) + "]");
  if (kv.rank() != 3 || kv.dim(2) != cfg_.d_z || kv.dim(0) != tokens.dim(0))
    throw ModelError("attention_bridge: kv shape " + shape_str(kv.shape()) +
                     " incompatible with tokens " + shape_str(tokens.shape()));
  Tensor u = tokens;
  {
    const Tensor n = layer_norm(u, param("bridge.ln1.g"), param("bridge.ln1.b"));
    u = add(u, mha("bridge.self", n, n, Tensor{}));
  }
  {
    const Tensor n = layer_norm(u, param("bridge.ln2.g"), param("bridge.ln2.b"));
    u = add(u, mha("bridge.cross", n, kv, kv_mask));
  }
  {
    const Tensor n = layer_norm(u, param("bridge.ln3.g"), param("bridge.ln3.b"));
    const Tensor h = mish(linear(n, param("bridge.ffn.fc1.w"), param("bridge.ffn.fc1.b")));
    u = add(u, linear(h, param("bridge.ffn.fc2.w"), param("bridge.ffn.fc2.b")));
  }
  return u;
}

Tensor Model::res_block(const std::string& p, const Tensor& x,
                        const Tensor& z_act, int c_in, int c_out) const {
  Tensor h = conv1d(x, param(p + ".conv1.w"), param(p + ".conv1.b"), 1, 2);
  h = group_norm(h, param(p + ".gn1.g"), param(p + ".gn1.b"), groups_for(c_out));
  const Tensor st = linear(z_act, param(p + ".zproj.w"), param(p + ".zproj.b"));
  h = scale_shift(h, slice(st, 1, 0, c_out), slice(st, 1, c_out, c_out));
  h = mish(h);
  h = conv1d(h, param(p + ".conv2.w"), param(p + ".conv2.b"), 1, 2);
  h = group_norm(h, param(p + ".gn2.g"), param(p + ".gn2.b"), groups_for(c_out));
  h = mish(h);
  const Tensor r =
      c_in == c_out ? x : conv1d(x, param(p + ".res.w"), param(p + ".res.b"), 1, 0);
  return add(h, r);
}

Tensor Model::predict_noise(const Tensor& tau_t,
                            const std::vector<ContextSet>& ctxs,
                            const std::vector<int>& ts) const {
  if (tau_t.rank() != 3 || tau_t.dim(1) != cfg_.H || tau_t.dim(2) != cfg_.d_q)
    throw ModelError("predict_noise: trajectory shape " +
                     shape_str(tau_t.shape()) + ", expected [B, " +
                     std::to_string(cfg_.H) + ", " + std::to_string(cfg_.d_q) +
                     "]");
  const int B = tau_t.dim(0);
  if (static_cast<int>(ctxs.size()) != B || static_cast<int>(ts.size()) != B)
    throw ModelError("predict_noise: got " + std::to_string(ctxs.size()) +
                     " context sets / " + std::to_string(ts.size()) +
                     " timesteps for batch " + std::to_string(B));

  const Tensor z_t = encode_time(ts);
  const Tensor z_act = mish(z_t);

  // ---- context tokens: slot 0 is z_t, slots 1.. are the instances ----
  int max_c = 0;
  for (const auto& c : ctxs) max_c = std::max(max_c, static_cast<int>(c.size()));
  const int Lk = 1 + max_c;

  std::vector<int> zt_rows(static_cast<size_t>(B));
  for (int i = 0; i < B; ++i) zt_rows[static_cast<size_t>(i)] = i * Lk;
  Tensor flat = scatter_rows(z_t, zt_rows, B * Lk);

  const int n_types = static_cast<int>(cfg_.context_dims.size());
  struct Bucket {
    std::vector<double> vals;
    std::vector<int> rows;
  };
  std::vector<Bucket> buckets(static_cast<size_t>(n_types));
  for (int i = 0; i < B; ++i) {
    const auto& items = ctxs[static_cast<size_t>(i)].items;
    for (size_t j = 0; j < items.size(); ++j) {
      const auto& inst = items[j];
      if (inst.type_id < 0 || inst.type_id >= n_types)
        throw ModelError("predict_noise: unregistered context type " +
                         std::to_string(inst.type_id));
      const int dim = cfg_.context_dims[static_cast<size_t>(inst.type_id)];
      if (static_cast<int>(inst.params.size()) != dim)
        throw ModelError("predict_noise: context type " +
                         std::to_string(inst.type_id) + " expects " +
                         std::to_string(dim) + " params, got " +
                         std::to_string(inst.params.size()));
      auto& b = buckets[static_cast<size_t>(inst.type_id)];
      b.vals.insert(b.vals.end(), inst.params.begin(), inst.params.end());
      b.rows.push_back(i * Lk + 1 + static_cast<int>(j));
    }
  }
  for (int k = 0; k < n_types; ++k) {
    auto& bucket = buckets[static_cast<size_t>(k)];
    if (bucket.rows.empty()) continue;
    const int nk = static_cast<int>(bucket.rows.size());
    const std::string p = "ctx" + std::to_string(k);
    Tensor raw = Tensor::from({nk, cfg_.context_dims[static_cast<size_t>(k)]},
                              std::move(bucket.vals));
    Tensor enc = mish(linear(raw, param(p + ".fc1.w"), param(p + ".fc1.b")));
    enc = linear(enc, param(p + ".fc2.w"), param(p + ".fc2.b"));
    flat = add(flat, scatter_rows(enc, bucket.rows, B * Lk));
  }
  const Tensor kv = reshape(flat, {B, Lk, cfg_.d_z});

  const int Lb = cfg_.H >> (cfg_.depth() - 1);
  Tensor mask;
  bool ragged = false;
  for (const auto& c : ctxs) ragged |= static_cast<int>(c.size()) < max_c;
  if (ragged) {
    std::vector<double> mv(
        static_cast<size_t>(B) * cfg_.n_heads * Lb * Lk, 0.0);
    for (int i = 0; i < B; ++i) {
      const int first_pad = 1 + static_cast<int>(ctxs[static_cast<size_t>(i)].size());
      for (int h = 0; h < cfg_.n_heads; ++h)
        for (int lq = 0; lq < Lb; ++lq)
          for (int s = first_pad; s < Lk; ++s)
            mv[((static_cast<size_t>(i) * cfg_.n_heads + h) * Lb + lq) * Lk + s] =
                kMaskedLogit;
    }
    mask = Tensor::from({B * cfg_.n_heads, Lb, Lk}, std::move(mv));
  }

  // ---- U-Net over the channels-first trajectory ----
  Tensor x = transpose(tau_t, 1, 2);  // [B, d_q, H]
  std::vector<Tensor> skips;
  const int D = cfg_.depth();
  int c_in = cfg_.d_q;
  for (int i = 0; i < D; ++i) {
    const std::string p = "down" + std::to_string(i);
    x = res_block(p + ".res", x, z_act, c_in, cfg_.channels[static_cast<size_t>(i)]);
    c_in = cfg_.channels[static_cast<size_t>(i)];
    if (i + 1 < D) {
      skips.push_back(x);
      x = conv1d(x, param(p + ".down.w"), param(p + ".down.b"), 2, 1);
    }
  }

  const int cb = cfg_.channels.back();
  x = res_block("mid.res1", x, z_act, cb, cb);
  {
    Tensor tok = transpose(x, 1, 2);  // [B, Lb, cb]
    tok = linear(tok, param("bridge.proj_in.w"), param("bridge.proj_in.b"));
    tok = attention_bridge(tok, kv, mask);
    tok = linear(tok, param("bridge.proj_out.w"), param("bridge.proj_out.b"));
    x = add(x, transpose(tok, 1, 2));
  }
  x = res_block("mid.res2", x, z_act, cb, cb);

  for (int i = D - 2; i >= 0; --i) {
    const std::string p = "up" + std::to_string(i);
    x = conv_transpose1d(x, param(p + ".upconv.w"), param(p + ".upconv.b"), 2, 1);
    const std::array<Tensor, 2> parts = {x, skips[static_cast<size_t>(i)]};
    x = concat(parts, 1);
    x = res_block(p + ".res", x, z_act, 2 * cfg_.channels[static_cast<size_t>(i)],
                  cfg_.channels[static_cast<size_t>(i)]);
  }

  x = conv1d(x, param("head.conv1.w"), param("head.conv1.b"), 1, 2);
  x = group_norm(x, param("head.gn.g"), param("head.gn.b"),
                 groups_for(cfg_.channels.front()));
  x = mish(x);
  x = conv1d(x, param("head.out.w"), param("head.out.b"), 1, 0);
  return transpose(x, 1, 2);
}

void save_model_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(ckpt.config.to_json());
  j["robot"] = robot_kind_name(ckpt.robot);
  j["schedule"] = ckpt.schedule_kind;
  nlohmann::json norm;
  norm["q_lo"] = ckpt.norm.q_lo;
  norm["q_hi"] = ckpt.norm.q_hi;
  norm["types"] = nlohmann::json::array();
  for (const auto& t : ckpt.norm.types)
    norm["types"].push_back({{"name", t.name}, {"lo", t.lo}, {"hi", t.hi}});
  j["normalizer"] = norm;
  save_checkpoint(path, j.dump(), ckpt.weights);
}

Checkpoint load_model_checkpoint(const std::string& path) {
  auto [header, weights] = load_checkpoint(path);
  try {
    const nlohmann::json j = nlohmann::json::parse(header);
    Checkpoint ckpt;
    ckpt.config = ModelConfig::from_json(j.at("model").dump());
    ckpt.robot = robot_kind_from(j.at("robot").get<std::string>());
    ckpt.schedule_kind = j.at("schedule").get<std::string>();
    ckpt.norm.q_lo = j.at("normalizer").at("q_lo").get<std::vector<double>>();
    ckpt.norm.q_hi = j.at("normalizer").at("q_hi").get<std::vector<double>>();
    for (const auto& t : j.at("normalizer").at("types")) {
      ContextTypeSpec spec;
      spec.name = t.at("name").get<std::string>();
      spec.lo = t.at("lo").get<std::vector<double>>();
      spec.hi = t.at("hi").get<std::vector<double>>();
      ckpt.norm.types.push_back(std::move(spec));
    }
    ckpt.weights = std::move(weights);
    return ckpt;
  } catch (const nlohmann::json::exception& e) {
    throw ModelError("checkpoint '" + path + "': bad header: " + e.what());
  }
}

}  // namespace campd
