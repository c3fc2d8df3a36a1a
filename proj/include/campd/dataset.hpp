#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "campd/geometry.hpp"
#include "campd/planner.hpp"

namespace campd {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One typed context element, e.g. a disc obstacle as [x, y, r].
struct ContextInstance {
  int type_id = 0;
  std::vector<double> params;
};

// The empty set is the canonical unconditional context.
struct ContextSet {
  std::vector<ContextInstance> items;
  bool empty() const { return items.empty(); }
  size_t size() const { return items.size(); }
};

inline constexpr int kSphere2dType = 0;

// Builds the raw (unnormalized) context for an environment: one sphere2d
// instance per obstacle, in stored order.
ContextSet context_from_env(const Environment& env);

struct ContextTypeSpec {
  std::string name;
  std::vector<double> lo, hi;  // per-param affine ranges
  int dim() const { return static_cast<int>(lo.size()); }
};

// Affine maps into [-1, 1]: configurations from joint limits, context params
// from workspace bounds / radius range. Normalize-then-denormalize is the
// identity within 1e-12; out-of-range inputs throw rather than clamp.
struct Normalizer {
  std::vector<double> q_lo, q_hi;
  std::vector<ContextTypeSpec> types;

  static Normalizer fit(const RobotModel& robot, const Environment& workspace,
                        double r_min, double r_max);

  double normalize_q(double v, int dim) const;
  double denormalize_q(double v, int dim) const;

  // traj: flat H x d_q
  std::vector<double> normalize_traj(const std::vector<double>& traj) const;
  std::vector<double> denormalize_traj(const std::vector<double>& traj) const;
  ContextSet normalize_context(const ContextSet& c) const;
  ContextSet denormalize_context(const ContextSet& c) const;
};

struct DatasetRecord {
  std::vector<double> traj;  // normalized, flat H x d_q
  ContextSet context;        // normalized
  int64_t env_id = 0;
  int64_t problem_id = 0;
  uint64_t seed = 0;
};

struct Dataset {
  RobotKind robot = RobotKind::point2d;
  int H = 64;
  int d_q = 2;
  Normalizer norm;
  std::vector<DatasetRecord> records;
};

// Self-describing binary file: header (robot kind, H, d_q, normalizer
// constants, context-type registry) then fixed-layout records. A leading
// version byte guards format evolution. Byte-identical per content.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

// Uniform with replacement; deterministic per seed.
std::vector<int64_t> sample_batch_indices(const Dataset& ds, int n, uint64_t seed);

// Record-index split with no env-id shared between sides.
std::pair<std::vector<int64_t>, std::vector<int64_t>> split_by_environment(
    const Dataset& ds, double test_fraction, uint64_t seed);

struct GenParams {
  RobotKind robot = RobotKind::point2d;
  int n_envs = 2000;
  int problems_per_env = 2;
  int trajs_per_problem = 10;
  int H = 64;
  uint64_t seed = 0;
  double min_separation = 0.4;  // configuration-space start/goal distance
  EnvSampleParams env_params;
  PlannerParams planner;
};

struct GenStats {
  int64_t attempted = 0;
  int64_t succeeded = 0;
  int64_t plan_failures = 0;
  int64_t resample_collisions = 0;
  int64_t problem_failures = 0;
};

// Full expert pipeline over procedurally sampled environments. Parallel over
// environments, merged in env-index order; deterministic per seed for any
// worker count. Per-problem planner failures are skipped and counted.
Dataset generate_dataset(const GenParams& params, GenStats* stats = nullptr);

}  // namespace campd
