#include "campd/inference.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <span>
#include <utility>

namespace campd {

void InferenceConfig::validate(const ModelConfig& mc) const {
  if (sampler != "ddpm" && sampler != "ddim") {
    throw InferenceError("inference config: sampler must be \"ddpm\" or \"ddim\", got \"" +
                         sampler + "\"");
  }
  if (T_inf < 1) throw InferenceError("inference config: T_inf must be >= 1");
  if (sampler == "ddpm" && T_inf != mc.T_train) {
    throw InferenceError("inference config: ddpm must run the full schedule (T_inf=" +
                         std::to_string(T_inf) + ", T_train=" + std::to_string(mc.T_train) + ")");
  }
  if (sampler == "ddim" && T_inf > mc.T_train) {
    throw InferenceError("inference config: ddim T_inf=" + std::to_string(T_inf) +
                         " exceeds T_train=" + std::to_string(mc.T_train));
  }
  if (!(w >= 0.0) || !std::isfinite(w)) {
    throw InferenceError("inference config: guidance strength w must be finite and >= 0");
  }
  if (n_batch < 1) throw InferenceError("inference config: n_batch must be >= 1");
  if (!(eta >= 0.0)) throw InferenceError("inference config: eta must be >= 0");
  if (!(smooth_sigma > 0.0)) throw InferenceError("inference config: smoother sigma must be > 0");
  if (smooth_window < 1 || smooth_window % 2 == 0) {
    throw InferenceError("inference config: smoother window must be a positive odd integer");
  }
  if (smooth_window > mc.H) {
    throw InferenceError("inference config: smoother window " + std::to_string(smooth_window) +
                         " exceeds horizon " + std::to_string(mc.H));
  }
}

std::vector<double> gaussian_filter(const std::vector<double>& traj, int H,
                                    int d_q, double sigma, int window) {
  if (H < 1 || d_q < 1 || traj.size() != static_cast<size_t>(H) * d_q) {
    throw InferenceError("gaussian_filter: trajectory length " + std::to_string(traj.size()) +
                         " does not match H=" + std::to_string(H) +
                         " x d_q=" + std::to_string(d_q));
  }
  if (window < 1 || window % 2 == 0) {
    throw InferenceError("gaussian_filter: window must be a positive odd integer, got " +
                         std::to_string(window));
  }
  if (window > H) {
    throw InferenceError("gaussian_filter: window " + std::to_string(window) +
                         " exceeds horizon " + std::to_string(H));
  }
  if (!(sigma > 0.0)) throw InferenceError("gaussian_filter: sigma must be > 0");

  const int r = (window - 1) / 2;
  std::vector<double> kernel(static_cast<size_t>(window));
  double ksum = 0.0;
  for (int j = -r; j <= r; ++j) {
    double v = std::exp(-0.5 * (static_cast<double>(j) * j) / (sigma * sigma));
    kernel[static_cast<size_t>(j + r)] = v;
    ksum += v;
  }
  for (double& v : kernel) v /= ksum;

  std::vector<double> out(traj.size());
  for (int k = 0; k < d_q; ++k) {
    for (int h = 0; h < H; ++h) {
      double acc = 0.0;
      for (int j = -r; j <= r; ++j) {
        int idx = h + j;
        if (idx < 0) idx = -idx;                    // reflect, edge not repeated
        else if (idx >= H) idx = 2 * (H - 1) - idx;
        acc += kernel[static_cast<size_t>(j + r)] * traj[static_cast<size_t>(idx) * d_q + k];
      }
      out[static_cast<size_t>(h) * d_q + k] = acc;
    }
  }
  // The smoother must not move the boundary conditions.
  for (int k = 0; k < d_q; ++k) {
    out[static_cast<size_t>(k)] = traj[static_cast<size_t>(k)];
    out[static_cast<size_t>(H - 1) * d_q + k] = traj[static_cast<size_t>(H - 1) * d_q + k];
  }
  return out;
}

namespace {

// Evaluates the guided noise prediction for the whole batch at timestep t.
// tau_flat is the working buffer [N * H * d_q]. Skips the unconditional pass
// entirely at w == 0 so that run is bit-identical to conditional-only.
std::vector<double> guided_eps(const Model& model, const std::vector<double>& tau_flat,
                               const std::vector<ContextSet>& cond,
                               const std::vector<ContextSet>& uncond, int N, int H,
                               int d_q, int t, double w) {
  Tensor tau = Tensor::from({N, H, d_q}, std::vector<double>(tau_flat));
  std::vector<int> ts(static_cast<size_t>(N), t);
  Tensor eps_c = model.predict_noise(tau, cond, ts);
  auto c = eps_c.values();
  if (w == 0.0) return std::vector<double>(c.begin(), c.end());
  Tensor eps_u = model.predict_noise(tau, uncond, ts);
  return cfg_combine(c, eps_u.values(), w);
}

}  // namespace

std::vector<std::vector<double>> sample_trajectories(
    const Model& model, const Normalizer& norm, const PlanningProblem& problem,
    const ContextSet& raw_context, const NoiseSchedule& sched,
    const InferenceConfig& cfg) {
  const ModelConfig& mc = model.config();
  cfg.validate(mc);
  if (sched.T != mc.T_train) {
    throw InferenceError("sample_trajectories: schedule has T=" + std::to_string(sched.T) +
                         " but the model was trained for T=" + std::to_string(mc.T_train));
  }
  const int H = mc.H;
  const int dq = mc.d_q;
  if (static_cast<int>(problem.q_start.size()) != dq ||
      static_cast<int>(problem.q_goal.size()) != dq) {
    throw InferenceError("sample_trajectories: problem endpoints have " +
                         std::to_string(problem.q_start.size()) + "/" +
                         std::to_string(problem.q_goal.size()) + " dims, model expects " +
                         std::to_string(dq));
  }

  // Normalize endpoints and context once, outside the loop.
  std::vector<double> start_n(dq), goal_n(dq);
  for (int k = 0; k < dq; ++k) {
    start_n[k] = norm.normalize_q(problem.q_start[k], k);
    goal_n[k] = norm.normalize_q(problem.q_goal[k], k);
  }
  ContextSet ctx_n = norm.normalize_context(raw_context);
  for (const ContextInstance& item : ctx_n.items) {
    if (item.type_id < 0 || item.type_id >= static_cast<int>(mc.context_dims.size()) ||
        static_cast<int>(item.params.size()) != mc.context_dims[static_cast<size_t>(item.type_id)]) {
      throw InferenceError("sample_trajectories: context instance incompatible with the model");
    }
  }

  const int N = cfg.n_batch;
  const int n = H * dq;
  const std::vector<ContextSet> cond(static_cast<size_t>(N), ctx_n);
  const std::vector<ContextSet> uncond(static_cast<size_t>(N));

  auto clamp_endpoints = [&](std::vector<double>& flat) {
    for (int i = 0; i < N; ++i) {
      double* row = flat.data() + static_cast<size_t>(i) * n;
      for (int k = 0; k < dq; ++k) {
        row[k] = start_n[k];
        row[(H - 1) * dq + k] = goal_n[k];
      }
    }
  };

  Rng rng(cfg.seed);
  std::vector<double> tau(static_cast<size_t>(N) * n);
  rng.normal_fill(tau);
  clamp_endpoints(tau);

  auto reverse_step = [&](int t, int t_prev_or_minus1) {
    std::vector<double> eps = guided_eps(model, tau, cond, uncond, N, H, dq, t, cfg.w);
    for (int i = 0; i < N; ++i) {
      std::span<const double> tau_i(tau.data() + static_cast<size_t>(i) * n, static_cast<size_t>(n));
      std::span<const double> eps_i(eps.data() + static_cast<size_t>(i) * n, static_cast<size_t>(n));
      std::vector<double> next;
      if (t_prev_or_minus1 < 0) {
        next = ddpm_step(tau_i, eps_i, t, sched, rng);
      } else {
        next = ddim_step(tau_i, eps_i, t, t_prev_or_minus1, sched, cfg.eta,
                         cfg.eta > 0.0 ? &rng : nullptr);
      }
      std::copy(next.begin(), next.end(), tau.begin() + static_cast<size_t>(i) * n);
    }
    clamp_endpoints(tau);
  };

  if (cfg.sampler == "ddpm") {
    for (int t = sched.T; t >= 1; --t) reverse_step(t, -1);
  } else {
    std::vector<int> grid = ddim_time_grid(sched.T, cfg.T_inf);
    for (size_t i = 0; i < grid.size(); ++i) {
      int t = grid[i];
      int t_prev = (i + 1 < grid.size()) ? grid[i + 1] : 0;
      reverse_step(t, t_prev);
    }
  }

  // Post-process: smooth, denormalize, pin the endpoints to the problem's.
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) {
    std::vector<double> sample(tau.begin() + static_cast<size_t>(i) * n,
                               tau.begin() + static_cast<size_t>(i + 1) * n);
    sample = gaussian_filter(sample, H, dq, cfg.smooth_sigma, cfg.smooth_window);
    sample = norm.denormalize_traj(sample);
    for (int k = 0; k < dq; ++k) {
      sample[static_cast<size_t>(k)] = problem.q_start[static_cast<size_t>(k)];
      sample[static_cast<size_t>(H - 1) * dq + k] = problem.q_goal[static_cast<size_t>(k)];
    }
    out.push_back(std::move(sample));
  }
  return out;
}

TimedBatch timed_batch(const Model& model, const Normalizer& norm,
                       const PlanningProblem& problem,
                       const ContextSet& raw_context,
                       const NoiseSchedule& sched, const InferenceConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  TimedBatch out;
  out.trajs = sample_trajectories(model, norm, problem, raw_context, sched, cfg);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

namespace {
constexpr char kBatchMagic[8] = {'C', 'A', 'M', 'P', 'D', 'B', '1', '\0'};

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}
}  // namespace

void save_trajectory_batch(const std::string& path,
                           const std::vector<std::vector<double>>& trajs,
                           int H, int d_q) {
  const size_t n = static_cast<size_t>(H) * static_cast<size_t>(d_q);
  for (const auto& t : trajs) {
    if (t.size() != n) {
      throw InferenceError("save_trajectory_batch: trajectory with " + std::to_string(t.size()) +
                           " values, expected " + std::to_string(n));
    }
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw InferenceError("save_trajectory_batch: cannot open " + path);
  os.write(kBatchMagic, 8);
  put_u64(os, trajs.size());
  put_u64(os, static_cast<uint64_t>(H));
  put_u64(os, static_cast<uint64_t>(d_q));
  for (const auto& t : trajs) {
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw InferenceError("save_trajectory_batch: write failed for " + path);
}

TrajectoryBatch load_trajectory_batch(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InferenceError("load_trajectory_batch: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kBatchMagic, 8) != 0) {
    throw InferenceError("load_trajectory_batch: " + path + " is not a trajectory batch file");
  }
  uint64_t count = get_u64(is);
  uint64_t H = get_u64(is);
  uint64_t dq = get_u64(is);
  if (!is || H == 0 || dq == 0 || H > (1u << 20) || dq > (1u << 10)) {
    throw InferenceError("load_trajectory_batch: corrupt header in " + path);
  }
  TrajectoryBatch out;
  out.H = static_cast<int>(H);
  out.d_q = static_cast<int>(dq);
  const size_t n = static_cast<size_t>(H) * static_cast<size_t>(dq);
  out.trajs.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    std::vector<double> t(n);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw InferenceError("load_trajectory_batch: truncated payload in " + path);
    out.trajs.push_back(std::move(t));
  }
  return out;
}

void export_trajectory_csv(const std::string& path,
                           const std::vector<std::vector<double>>& trajs,
                           int H, int d_q) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InferenceError("export_trajectory_csv: cannot open " + path);
  os << "sample,waypoint";
  for (int k = 0; k < d_q; ++k) os << ",q" << k;
  os << "\n";
  char buf[40];
  for (size_t i = 0; i < trajs.size(); ++i) {
    const auto& t = trajs[i];
    if (t.size() != static_cast<size_t>(H) * d_q) {
      throw InferenceError("export_trajectory_csv: trajectory size mismatch");
    }
    for (int h = 0; h < H; ++h) {
      os << i << "," << h;
      for (int k = 0; k < d_q; ++k) {
        std::snprintf(buf, sizeof(buf), "%.17g", t[static_cast<size_t>(h) * d_q + k]);
        os << "," << buf;
      }
      os << "\n";
    }
  }
  if (!os) throw InferenceError("export_trajectory_csv: write failed for " + path);
}

}  // namespace campd
