#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "campd/dataset.hpp"
#include "campd/diffusion.hpp"
#include "campd/model.hpp"

namespace campd {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int batch_size = 128;
  double lr = 1e-4;
  double p_d = 0.33;       // probability of dropping a record's context
  int total_steps = 5000;
  int checkpoint_every = 1000;  // <= 0 disables intermediate checkpoints
  uint64_t seed = 0;
  std::string schedule_kind = "cosine";

  void validate() const;
};

// Optimizer slots, one per parameter in the model's registration order.
struct Optimizer {
  std::vector<AdamState> slots;
  explicit Optimizer(size_t n_params) : slots(n_params) {}
};

// One denoising-score-matching step over the given records:
// per record, drop the context with probability p_d, draw t uniform on
// {1..T_train} and unit noise, noise the trajectory, restore its endpoint
// rows, zero the noise-target endpoints, then take an Adam step on the mean
// squared noise-prediction error. Returns the batch loss. Throws
// TrainingError with diagnostics if the loss is not finite.
double train_step(Model& model, const Dataset& ds,
                  const std::vector<int64_t>& batch, const NoiseSchedule& sched,
                  const TrainConfig& cfg, Optimizer& opt, Rng& rng,
                  int64_t step_index);

struct TrainResult {
  std::vector<double> losses;          // one entry per step
  std::string checkpoint_path;         // final checkpoint
  std::string loss_log_path;           // CSV "step,loss"
};

// Runs total_steps of train_step over uniformly sampled batches; writes the
// loss log and periodic + final checkpoints under out_dir. Deterministic per
// seed.
TrainResult train_loop(const Dataset& ds, const ModelConfig& mcfg,
                       const TrainConfig& tcfg, const std::string& out_dir);

}  // namespace campd
