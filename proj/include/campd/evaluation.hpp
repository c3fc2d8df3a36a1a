#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "campd/geometry.hpp"
#include "campd/inference.hpp"
#include "campd/model.hpp"
#include "campd/planner.hpp"

namespace campd {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Per-problem metric row. bsd/var carry a defined flag: bsd needs a baseline
// and at least one feasible sample on both sides; var needs at least two
// feasible samples (otherwise it is 0 and flagged).
struct ProblemMetrics {
  int64_t problem_id = 0;
  double time_s = 0.0;
  bool success = false;
  double ftr = 0.0;
  double bsd = 0.0;
  bool bsd_defined = false;
  double var = 0.0;
  bool var_defined = false;
  int n_feasible = 0;
  double best_smoothness = 0.0;  // smoothest feasible sample, ties -> lowest index
  int best_index = -1;
};

struct MetricAggregate {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  int n = 0;            // rows the aggregate was computed over
};

struct EvalReport {
  std::vector<ProblemMetrics> rows;
  double success_rate = 0.0;
  MetricAggregate time_s, ftr, bsd, var;  // bsd/var over defined rows only

  bool has_baseline = false;
  std::vector<ProblemMetrics> baseline_rows;
  double baseline_success_rate = 0.0;
  MetricAggregate baseline_time_s, baseline_ftr, baseline_var;
};

// True iff every consecutive segment is collision-free at the given
// resolution, every waypoint lies within the robot's joint limits, and both
// endpoints match the problem's within 1e-9 (per dimension). Throws on
// dimension mismatch.
bool is_feasible(const std::vector<double>& traj, const PlanningProblem& problem,
                 const RobotModel& robot, double resolution);

// Discrete acceleration energy: the sum over interior waypoints of the
// squared second difference, summed over configuration dimensions. Requires
// at least 3 waypoints.
double smoothness(const std::vector<double>& traj, int d_q);

// Metrics for one sampled batch. problem_id/time_s are left for the caller.
ProblemMetrics batch_metrics(const std::vector<std::vector<double>>& batch,
                             const PlanningProblem& problem, const RobotModel& robot,
                             double resolution,
                             std::optional<double> baseline_best_smoothness);

struct BenchmarkConfig {
  InferenceConfig inference;  // per-problem sampling seed = mix_seed(seed, row)
  double resolution = 0.01;   // feasibility-check spacing
  bool run_baseline = false;  // also time + evaluate the expert planner
  PlannerParams planner;      // expert settings for the baseline
  uint64_t baseline_seed = 0;
  int threads = 1;            // problems evaluated in parallel
};

// Evaluates the checkpoint on each problem: timed batch sampling, metrics,
// optional expert baseline evaluated identically (a failed expert attempt
// counts as an infeasible sample). Writes <out_csv>, a sibling
// *_baseline.csv when the baseline runs, and *_summary.txt. Rows are merged
// in problem order; everything except wall-clock timing is deterministic
// given the seeds.
EvalReport run_benchmark(const Checkpoint& ckpt,
                         const std::vector<PlanningProblem>& problems,
                         const BenchmarkConfig& cfg, const std::string& out_csv);

// CSV schema: problem_id,time_s,success,ftr,bsd,var,n_feasible.
// Undefined bsd is written as "nan"; flagged var is written as its value 0.
void write_report_csv(const std::string& path,
                      const std::vector<ProblemMetrics>& rows);

// Aligned text table of the aggregates (and baseline block when present).
std::string format_summary(const EvalReport& report);

}  // namespace campd
