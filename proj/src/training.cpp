#include "campd/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <utility>

namespace campd {

void TrainConfig::validate() const {
  if (batch_size < 1) throw TrainingError("train config: batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw TrainingError("train config: lr must be a positive finite number");
  }
  if (!(p_d >= 0.0 && p_d <= 1.0)) {
    throw TrainingError("train config: p_d must lie in [0, 1]");
  }
  if (total_steps < 1) throw TrainingError("train config: total_steps must be >= 1");
  if (schedule_kind != "linear" && schedule_kind != "cosine") {
    throw TrainingError("train config: schedule_kind must be \"linear\" or \"cosine\", got \"" +
                        schedule_kind + "\"");
  }
}

namespace {

// Largest |grad| across all parameters, for failure diagnostics.
double max_abs_grad(const std::vector<NamedTensor>& params) {
  double worst = 0.0;
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) worst = std::max(worst, std::abs(g));
  }
  return worst;
}

std::string format_loss(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

double train_step(Model& model, const Dataset& ds,
                  const std::vector<int64_t>& batch, const NoiseSchedule& sched,
                  const TrainConfig& cfg, Optimizer& opt, Rng& rng,
                  int64_t step_index) {
  const ModelConfig& mc = model.config();
  if (ds.H != mc.H || ds.d_q != mc.d_q) {
    throw TrainingError("train_step: dataset geometry (H=" + std::to_string(ds.H) +
                        ", d_q=" + std::to_string(ds.d_q) + ") does not match the model (H=" +
                        std::to_string(mc.H) + ", d_q=" + std::to_string(mc.d_q) + ")");
  }
  if (sched.T != mc.T_train) {
    throw TrainingError("train_step: schedule has T=" + std::to_string(sched.T) +
                        " but the model was built for T_train=" + std::to_string(mc.T_train));
  }
  if (batch.empty()) throw TrainingError("train_step: empty batch");
  if (opt.slots.size() != model.parameters().size()) {
    throw TrainingError("train_step: optimizer has " + std::to_string(opt.slots.size()) +
                        " slots for " + std::to_string(model.parameters().size()) +
                        " parameters");
  }

  const int B = static_cast<int>(batch.size());
  const int H = mc.H;
  const int dq = mc.d_q;
  const int n = H * dq;

  std::vector<double> tau_t(static_cast<size_t>(B) * n);
  std::vector<double> target(static_cast<size_t>(B) * n);
  std::vector<ContextSet> ctxs(B);
  std::vector<int> ts(B);

  // Per record, in batch order: one dropout draw, one timestep draw, then the
  // noise vector. Keeping the consumption order fixed pins reproducibility.
  for (int i = 0; i < B; ++i) {
    const int64_t idx = batch[i];
    if (idx < 0 || idx >= static_cast<int64_t>(ds.records.size())) {
      throw TrainingError("train_step: batch index " + std::to_string(idx) +
                          " outside dataset of size " + std::to_string(ds.records.size()));
    }
    const DatasetRecord& rec = ds.records[static_cast<size_t>(idx)];
    if (static_cast<int>(rec.traj.size()) != n) {
      throw TrainingError("train_step: record " + std::to_string(idx) + " has " +
                          std::to_string(rec.traj.size()) + " values, expected " +
                          std::to_string(n));
    }

    const bool drop = rng.uniform() < cfg.p_d;
    if (!drop) ctxs[i] = rec.context;  // dropped records keep an empty set

    const int t = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(mc.T_train)));
    ts[i] = t;

    std::vector<double> eps(n);
    rng.normal_fill(eps);
    std::vector<double> noised = q_sample(rec.traj, t, eps, sched);

    // The first and last waypoints are inpainted: the model always sees the
    // true endpoints and must predict zero noise there.
    for (int k = 0; k < dq; ++k) {
      noised[k] = rec.traj[k];
      noised[(H - 1) * dq + k] = rec.traj[(H - 1) * dq + k];
      eps[k] = 0.0;
      eps[(H - 1) * dq + k] = 0.0;
    }

    std::copy(noised.begin(), noised.end(), tau_t.begin() + static_cast<size_t>(i) * n);
    std::copy(eps.begin(), eps.end(), target.begin() + static_cast<size_t>(i) * n);
  }

  Tensor tau = Tensor::from({B, H, dq}, std::move(tau_t));
  Tensor eps_target = Tensor::from({B, H, dq}, std::move(target));

  double loss_value = 0.0;
  {
    Tape tape;
    Tensor pred = model.predict_noise(tau, ctxs, ts);
    Tensor diff = sub(pred, eps_target);
    Tensor loss = mean_all(mul(diff, diff));
    loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      int t_lo = ts[0], t_hi = ts[0];
      for (int t : ts) {
        t_lo = std::min(t_lo, t);
        t_hi = std::max(t_hi, t);
      }
      std::ostringstream msg;
      msg << "train_step: non-finite loss " << loss_value << " at step " << step_index
          << " (batch of " << B << ", t in [" << t_lo << ", " << t_hi
          << "], max |grad| before update " << max_abs_grad(model.parameters()) << ")";
      throw TrainingError(msg.str());
    }
    tape.backward(loss);
  }

  auto& params = model.parameters();
  for (size_t p = 0; p < params.size(); ++p) {
    adam_step(params[p].second, opt.slots[p], cfg.lr);
    params[p].second.zero_grad();
  }
  return loss_value;
}

TrainResult train_loop(const Dataset& ds, const ModelConfig& mcfg,
                       const TrainConfig& tcfg, const std::string& out_dir) {
  tcfg.validate();
  mcfg.validate();
  if (ds.records.empty()) throw TrainingError("train_loop: dataset has no records");
  if (ds.norm.types.size() != mcfg.context_dims.size()) {
    throw TrainingError("train_loop: dataset registers " + std::to_string(ds.norm.types.size()) +
                        " context types but the model expects " +
                        std::to_string(mcfg.context_dims.size()));
  }
  for (size_t k = 0; k < ds.norm.types.size(); ++k) {
    if (ds.norm.types[k].dim() != mcfg.context_dims[k]) {
      throw TrainingError("train_loop: context type " + std::to_string(k) + " (\"" +
                          ds.norm.types[k].name + "\") has " +
                          std::to_string(ds.norm.types[k].dim()) +
                          " parameters but the model expects " +
                          std::to_string(mcfg.context_dims[k]));
    }
  }

  std::filesystem::create_directories(out_dir);

  Model model(mcfg, mix_seed(tcfg.seed, 0x1017u));
  NoiseSchedule sched = build_schedule(tcfg.schedule_kind, mcfg.T_train);
  Optimizer opt(model.parameters().size());
  Rng rng(mix_seed(tcfg.seed, 0x57E9u));

  TrainResult res;
  res.loss_log_path = out_dir + "/loss_log.csv";
  res.checkpoint_path = out_dir + "/model.ckpt";

  std::ofstream log(res.loss_log_path, std::ios::trunc);
  if (!log) throw TrainingError("train_loop: cannot open " + res.loss_log_path + " for writing");
  log << "step,loss\n";

  auto checkpoint = [&](const std::string& path) {
    Checkpoint ckpt;
    ckpt.config = mcfg;
    ckpt.robot = ds.robot;
    ckpt.schedule_kind = tcfg.schedule_kind;
    ckpt.norm = ds.norm;
    ckpt.weights = model.parameters();
    save_model_checkpoint(path, ckpt);
  };

  res.losses.reserve(static_cast<size_t>(tcfg.total_steps));
  for (int step = 0; step < tcfg.total_steps; ++step) {
    std::vector<int64_t> batch = sample_batch_indices(
        ds, tcfg.batch_size, mix_seed(tcfg.seed, 0xBA7C4000u + static_cast<uint64_t>(step)));
    double loss = train_step(model, ds, batch, sched, tcfg, opt, rng, step);
    res.losses.push_back(loss);
    log << step << "," << format_loss(loss) << "\n";
    if (tcfg.checkpoint_every > 0 && (step + 1) % tcfg.checkpoint_every == 0 &&
        step + 1 < tcfg.total_steps) {
      checkpoint(out_dir + "/model_step" + std::to_string(step + 1) + ".ckpt");
    }
  }
  log.flush();
  if (!log) throw TrainingError("train_loop: failed writing " + res.loss_log_path);

  checkpoint(res.checkpoint_path);
  return res;
}

}  // namespace campd
