#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "campd/geometry.hpp"

namespace campd {

class PlanNotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Ordered list of configurations stored flat (n x d_q, row-major).
struct Path {
  int d_q = 2;
  std::vector<double> pts;
  int64_t n() const { return static_cast<int64_t>(pts.size()) / d_q; }
  double* at(int64_t i) { return pts.data() + i * d_q; }
  const double* at(int64_t i) const { return pts.data() + i * d_q; }
  double length() const;
};

struct PlannerParams {
  double step_size = 0.05;
  int max_iters = 5000;
  int shortcut_iters = 200;
  double resolution = 0.01;  // configuration-space collision-check spacing
  double padding = 0.01;     // obstacle inflation for expert clearance
};

// Bidirectional RRT-Connect. Deterministic given the seed. Throws PlanNotFound
// after max_iters without connecting the trees.
Path rrt_connect(const RobotModel& robot, const PlanningProblem& problem,
                 const PlannerParams& params, uint64_t seed);

// Random shortcutting: repeatedly tries to replace sub-chains with straight
// collision-free segments. Total length never increases.
Path shortcut_smooth(const RobotModel& robot, const Path& path,
                     const Environment& env, const PlannerParams& params,
                     uint64_t seed);

// Arc-length uniform resampling to exactly H waypoints; first/last waypoints
// equal the path endpoints bit-exactly. A zero-length path yields H copies.
Path resample_to_horizon(const Path& path, int H);

// Convenience: full expert pipeline (plan, smooth, resample).
Path plan_expert(const RobotModel& robot, const PlanningProblem& problem,
                 const PlannerParams& params, int H, uint64_t seed);

}  // namespace campd
