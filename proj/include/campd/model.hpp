#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "campd/dataset.hpp"
#include "campd/serialize.hpp"
#include "campd/tensor.hpp"

namespace campd {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Hyperparameters of the noise-prediction network. `channels` lists the conv
// width per resolution level; the trajectory length is halved between levels,
// so H must be divisible by 2^(depth-1).
struct ModelConfig {
  int d_z = 32;                        // latent width of time/context tokens
  std::vector<int> channels = {32, 64, 128};
  int n_heads = 4;
  int head_dim = 8;                    // d_z == n_heads * head_dim
  int H = 64;
  int d_q = 2;
  int T_train = 25;
  std::vector<int> context_dims = {3};  // type-id -> param count

  int depth() const { return static_cast<int>(channels.size()); }
  void validate() const;  // throws ModelError on any violated invariant

  static ModelConfig desk();   // default desk-scale network
  static ModelConfig paper();  // the reference network's d_z/depth/heads
  static ModelConfig tiny();   // small enough for finite-difference checks

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// The noise-prediction network. Weights are named tensors in a stable
// registration order; forward passes are pure given the weights, so shared
// weights may serve concurrent inference threads.
class Model {
 public:
  Model(ModelConfig config, uint64_t seed);                       // fresh init
  Model(ModelConfig config, std::vector<NamedTensor> weights);    // from file

  const ModelConfig& config() const { return cfg_; }
  std::vector<NamedTensor>& parameters() { return params_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  const Tensor& param(const std::string& name) const;
  int64_t parameter_count() const;

  // Sinusoidal position encoding of the timestep (base 10000) pushed through
  // a two-layer MLP. ts: one timestep per batch row; returns [B, d_z].
  Tensor encode_time(const std::vector<int>& ts) const;

  // Per-instance context MLP of the instance's registered type; returns one
  // d_z row per instance, [|C|, d_z], in input order. Empty set -> empty.
  std::vector<std::vector<double>> encode_context(const ContextSet& c) const;

  // Pre-norm residual attention stack over bottleneck tokens [B, L, d_z]:
  // self-attention, cross-attention onto kv [B, Lk, d_z], feed-forward.
  // kv_mask: additive [B*n_heads, L, Lk] or undefined.
  Tensor attention_bridge(const Tensor& tokens, const Tensor& kv,
                          const Tensor& kv_mask) const;

  // Full network: tau_t [B, H, d_q] (normalized), per-row context sets and
  // timesteps -> predicted noise [B, H, d_q].
  Tensor predict_noise(const Tensor& tau_t, const std::vector<ContextSet>& ctxs,
                       const std::vector<int>& ts) const;

 private:
  Tensor res_block(const std::string& prefix, const Tensor& x,
                   const Tensor& z_act, int c_in, int c_out) const;
  Tensor mha(const std::string& prefix, const Tensor& q_in, const Tensor& kv,
             const Tensor& mask) const;

  ModelConfig cfg_;
  std::vector<NamedTensor> params_;
  std::map<std::string, size_t> index_;
};

// Sinusoidal position encoding of an integer step: d_z/2 sin/cos pairs at
// geometric frequencies with base 10000. Every component lies in [-1, 1].
std::vector<double> sinusoidal_pe(int t, int d_z);

// One-file checkpoint: a single-line JSON header (model config + everything
// inference needs to interpret raw trajectories) followed by the binary
// weight container.
struct Checkpoint {
  ModelConfig config;
  RobotKind robot = RobotKind::point2d;
  std::string schedule_kind = "cosine";
  Normalizer norm;
  std::vector<NamedTensor> weights;
};

void save_model_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_model_checkpoint(const std::string& path);

}  // namespace campd
