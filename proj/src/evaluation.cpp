#include "campd/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "campd/dataset.hpp"

namespace campd {

namespace {
constexpr double kEndpointTol = 1e-9;
}

bool is_feasible(const std::vector<double>& traj, const PlanningProblem& problem,
                 const RobotModel& robot, double resolution) {
  const int dq = robot.d_q;
  if (dq < 1 || traj.size() % static_cast<size_t>(dq) != 0) {
    throw EvalError("is_feasible: trajectory length " + std::to_string(traj.size()) +
                    " is not a multiple of d_q=" + std::to_string(dq));
  }
  const int H = static_cast<int>(traj.size()) / dq;
  if (H < 2) throw EvalError("is_feasible: trajectory needs at least 2 waypoints");
  if (static_cast<int>(problem.q_start.size()) != dq ||
      static_cast<int>(problem.q_goal.size()) != dq) {
    throw EvalError("is_feasible: problem endpoints do not match robot d_q=" +
                    std::to_string(dq));
  }
  if (!(resolution > 0.0)) throw EvalError("is_feasible: resolution must be > 0");

  for (int k = 0; k < dq; ++k) {
    if (std::abs(traj[static_cast<size_t>(k)] - problem.q_start[static_cast<size_t>(k)]) >
        kEndpointTol) {
      return false;
    }
    if (std::abs(traj[static_cast<size_t>(H - 1) * dq + k] -
                 problem.q_goal[static_cast<size_t>(k)]) > kEndpointTol) {
      return false;
    }
  }
  for (int h = 0; h < H; ++h) {
    for (int k = 0; k < dq; ++k) {
      double v = traj[static_cast<size_t>(h) * dq + k];
      if (!(v >= robot.q_lo[static_cast<size_t>(k)] && v <= robot.q_hi[static_cast<size_t>(k)])) {
        return false;  // also rejects NaN
      }
    }
  }
  for (int h = 0; h + 1 < H; ++h) {
    const double* a = traj.data() + static_cast<size_t>(h) * dq;
    const double* b = a + dq;
    if (segment_in_collision(robot, a, b, problem.env, resolution)) return false;
  }
  return true;
}

double smoothness(const std::vector<double>& traj, int d_q) {
  if (d_q < 1 || traj.size() % static_cast<size_t>(d_q) != 0) {
    throw EvalError("smoothness: trajectory length " + std::to_string(traj.size()) +
                    " is not a multiple of d_q=" + std::to_string(d_q));
  }
  const int H = static_cast<int>(traj.size()) / d_q;
  if (H < 3) throw EvalError("smoothness: need at least 3 waypoints, got " + std::to_string(H));
  double e = 0.0;
  for (int h = 1; h + 1 < H; ++h) {
    for (int k = 0; k < d_q; ++k) {
      double d = traj[static_cast<size_t>(h + 1) * d_q + k] -
                 2.0 * traj[static_cast<size_t>(h) * d_q + k] +
                 traj[static_cast<size_t>(h - 1) * d_q + k];
      e += d * d;
    }
  }
  return e;
}

ProblemMetrics batch_metrics(const std::vector<std::vector<double>>& batch,
                             const PlanningProblem& problem, const RobotModel& robot,
                             double resolution,
                             std::optional<double> baseline_best_smoothness) {
  if (batch.empty()) throw EvalError("batch_metrics: empty batch");
  const int dq = robot.d_q;

  ProblemMetrics m;
  std::vector<int> feasible_idx;
  for (size_t i = 0; i < batch.size(); ++i) {
    if (is_feasible(batch[i], problem, robot, resolution)) {
      feasible_idx.push_back(static_cast<int>(i));
    }
  }
  m.n_feasible = static_cast<int>(feasible_idx.size());
  m.success = m.n_feasible > 0;
  m.ftr = static_cast<double>(m.n_feasible) / static_cast<double>(batch.size());

  if (m.success) {
    for (int idx : feasible_idx) {
      double s = smoothness(batch[static_cast<size_t>(idx)], dq);
      if (m.best_index < 0 || s < m.best_smoothness) {
        m.best_smoothness = s;
        m.best_index = idx;
      }
    }
  }

  if (baseline_best_smoothness.has_value() && m.success && *baseline_best_smoothness > 0.0) {
    m.bsd = (m.best_smoothness - *baseline_best_smoothness) / *baseline_best_smoothness;
    m.bsd_defined = true;
  }

  if (m.n_feasible >= 2) {
    const int H = static_cast<int>(batch[0].size()) / dq;
    const double F = static_cast<double>(m.n_feasible);
    double total = 0.0;
    std::vector<double> mean(static_cast<size_t>(dq));
    for (int h = 0; h < H; ++h) {
      std::fill(mean.begin(), mean.end(), 0.0);
      for (int idx : feasible_idx) {
        for (int k = 0; k < dq; ++k) {
          mean[static_cast<size_t>(k)] += batch[static_cast<size_t>(idx)][static_cast<size_t>(h) * dq + k];
        }
      }
      for (double& v : mean) v /= F;
      double var_h = 0.0;
      for (int idx : feasible_idx) {
        for (int k = 0; k < dq; ++k) {
          double d = batch[static_cast<size_t>(idx)][static_cast<size_t>(h) * dq + k] -
                     mean[static_cast<size_t>(k)];
          var_h += d * d;
        }
      }
      total += var_h / F;
    }
    m.var = total;
    m.var_defined = true;
  }
  return m;
}

namespace {

MetricAggregate aggregate(const std::vector<double>& values) {
  MetricAggregate a;
  a.n = static_cast<int>(values.size());
  if (a.n == 0) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / a.n;
  double ss = 0.0;
  for (double v : values) ss += (v - a.mean) * (v - a.mean);
  a.stddev = std::sqrt(ss / a.n);
  return a;
}

void fill_aggregates(const std::vector<ProblemMetrics>& rows, double& success_rate,
                     MetricAggregate& time_s, MetricAggregate& ftr,
                     MetricAggregate* bsd, MetricAggregate& var) {
  std::vector<double> times, ftrs, bsds, vars;
  int succ = 0;
  for (const ProblemMetrics& r : rows) {
    times.push_back(r.time_s);
    ftrs.push_back(r.ftr);
    if (r.success) ++succ;
    if (r.bsd_defined) bsds.push_back(r.bsd);
    if (r.var_defined) vars.push_back(r.var);
  }
  success_rate = rows.empty() ? 0.0 : static_cast<double>(succ) / rows.size();
  time_s = aggregate(times);
  ftr = aggregate(ftrs);
  if (bsd != nullptr) *bsd = aggregate(bsds);
  var = aggregate(vars);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// The expert either plans or the slot is filled with a stay-at-start
// placeholder, which the endpoint check rejects as infeasible.
std::vector<double> expert_or_placeholder(const RobotModel& robot,
                                          const PlanningProblem& problem,
                                          const PlannerParams& params, int H,
                                          uint64_t seed) {
  try {
    Path p = plan_expert(robot, problem, params, H, seed);
    return p.pts;
  } catch (const PlanNotFound&) {
    std::vector<double> stay(static_cast<size_t>(H) * robot.d_q);
    for (int h = 0; h < H; ++h) {
      for (int k = 0; k < robot.d_q; ++k) {
        stay[static_cast<size_t>(h) * robot.d_q + k] = problem.q_start[static_cast<size_t>(k)];
      }
    }
    return stay;
  }
}

}  // namespace

void write_report_csv(const std::string& path, const std::vector<ProblemMetrics>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw EvalError("write_report_csv: cannot open " + path);
  os << "problem_id,time_s,success,ftr,bsd,var,n_feasible\n";
  for (const ProblemMetrics& r : rows) {
    os << r.problem_id << "," << fmt(r.time_s) << "," << (r.success ? 1 : 0) << ","
       << fmt(r.ftr) << "," << (r.bsd_defined ? fmt(r.bsd) : "nan") << "," << fmt(r.var)
       << "," << r.n_feasible << "\n";
  }
  if (!os) throw EvalError("write_report_csv: write failed for " + path);
}

std::string format_summary(const EvalReport& report) {
  std::ostringstream os;
  char line[160];
  auto row = [&](const char* name, const MetricAggregate& a) {
    std::snprintf(line, sizeof(line), "  %-8s %12.6f +- %-12.6f (n=%d)\n", name, a.mean,
                  a.stddev, a.n);
    os << line;
  };
  std::snprintf(line, sizeof(line), "planner batch evaluation over %zu problems\n",
                report.rows.size());
  os << line;
  std::snprintf(line, sizeof(line), "  %-8s %12.6f\n", "S", report.success_rate);
  os << line;
  row("FTR", report.ftr);
  row("time_s", report.time_s);
  row("BSD", report.bsd);
  row("Var", report.var);
  if (report.has_baseline) {
    os << "expert baseline\n";
    std::snprintf(line, sizeof(line), "  %-8s %12.6f\n", "S", report.baseline_success_rate);
    os << line;
    row("FTR", report.baseline_ftr);
    row("time_s", report.baseline_time_s);
    row("Var", report.baseline_var);
  }
  return os.str();
}

EvalReport run_benchmark(const Checkpoint& ckpt,
                         const std::vector<PlanningProblem>& problems,
                         const BenchmarkConfig& cfg, const std::string& out_csv) {
  if (problems.empty()) throw EvalError("run_benchmark: no problems given");
  if (cfg.threads < 1) throw EvalError("run_benchmark: threads must be >= 1");
  if (!(cfg.resolution > 0.0)) throw EvalError("run_benchmark: resolution must be > 0");

  Model model(ckpt.config, ckpt.weights);
  cfg.inference.validate(ckpt.config);
  NoiseSchedule sched = build_schedule(ckpt.schedule_kind, ckpt.config.T_train);
  RobotModel robot = ckpt.robot == RobotKind::point2d ? RobotModel::point2d()
                                                      : RobotModel::arm2();
  const int n = static_cast<int>(problems.size());

  EvalReport report;
  report.rows.resize(static_cast<size_t>(n));
  report.has_baseline = cfg.run_baseline;
  if (cfg.run_baseline) report.baseline_rows.resize(static_cast<size_t>(n));

  auto eval_problem = [&](int i) {
    const PlanningProblem& problem = problems[static_cast<size_t>(i)];
    ContextSet raw_ctx = context_from_env(problem.env);

    std::optional<double> baseline_best;
    if (cfg.run_baseline) {
      auto t0 = std::chrono::steady_clock::now();
      std::vector<std::vector<double>> expert_batch;
      expert_batch.reserve(static_cast<size_t>(cfg.inference.n_batch));
      for (int j = 0; j < cfg.inference.n_batch; ++j) {
        uint64_t seed = mix_seed(mix_seed(cfg.baseline_seed, static_cast<uint64_t>(i)),
                                 static_cast<uint64_t>(j));
        expert_batch.push_back(
            expert_or_placeholder(robot, problem, cfg.planner, ckpt.config.H, seed));
      }
      double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      ProblemMetrics bm = batch_metrics(expert_batch, problem, robot, cfg.resolution,
                                        std::nullopt);
      bm.problem_id = i;
      bm.time_s = secs;
      if (bm.success) baseline_best = bm.best_smoothness;
      report.baseline_rows[static_cast<size_t>(i)] = bm;
    }

    InferenceConfig icfg = cfg.inference;
    icfg.seed = mix_seed(cfg.inference.seed, static_cast<uint64_t>(i));
    TimedBatch tb = timed_batch(model, ckpt.norm, problem, raw_ctx, sched, icfg);
    ProblemMetrics m = batch_metrics(tb.trajs, problem, robot, cfg.resolution, baseline_best);
    m.problem_id = i;
    m.time_s = tb.seconds;
    report.rows[static_cast<size_t>(i)] = m;
  };

  if (cfg.threads == 1 || n == 1) {
    for (int i = 0; i < n; ++i) eval_problem(i);
  } else {
    std::vector<std::thread> workers;
    const int n_threads = std::min(cfg.threads, n);
    std::vector<std::exception_ptr> errors(static_cast<size_t>(n_threads));
    for (int w = 0; w < n_threads; ++w) {
      workers.emplace_back([&, w]() {
        try {
          for (int i = w; i < n; i += n_threads) eval_problem(i);
        } catch (...) {
          errors[static_cast<size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  fill_aggregates(report.rows, report.success_rate, report.time_s, report.ftr, &report.bsd,
                  report.var);
  if (cfg.run_baseline) {
    fill_aggregates(report.baseline_rows, report.baseline_success_rate,
                    report.baseline_time_s, report.baseline_ftr, nullptr,
                    report.baseline_var);
  }

  write_report_csv(out_csv, report.rows);
  auto stem = [&](const std::string& suffix) {
    auto dot = out_csv.rfind('.');
    std::string base = (dot == std::string::npos) ? out_csv : out_csv.substr(0, dot);
    return base + suffix;
  };
  if (cfg.run_baseline) write_report_csv(stem("_baseline.csv"), report.baseline_rows);
  {
    std::string path = stem("_summary.txt");
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw EvalError("run_benchmark: cannot open " + path);
    os << format_summary(report);
  }
  return report;
}

}  // namespace campd
