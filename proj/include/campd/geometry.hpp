#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "campd/rng.hpp"

namespace campd {

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class RobotKind { point2d, arm2 };

std::string robot_kind_name(RobotKind kind);
RobotKind robot_kind_from(const std::string& name);

// Both desk-scale robots have a 2-dimensional configuration space: the point
// robot's configuration is its workspace position; the planar arm's is two
// joint angles (radians) around a base anchored at the workspace center.
struct RobotModel {
  RobotKind kind = RobotKind::point2d;
  int d_q = 2;
  std::vector<double> q_lo, q_hi;  // joint limits, lo < hi per dimension

  // planar-arm-2 geometry
  double link1 = 0.28, link2 = 0.2;
  double capsule_radius = 0.03;
  std::array<double, 2> base{0.5, 0.5};

  static RobotModel point2d();
  static RobotModel arm2();
};

struct SphereObstacle {
  double x = 0, y = 0, r = 0;
};

struct Environment {
  // axis-aligned workspace box: xmin, ymin, xmax, ymax
  std::array<double, 4> bounds{0.0, 0.0, 1.0, 1.0};
  std::vector<SphereObstacle> obstacles;
  uint64_t seed = 0;
};

struct PlanningProblem {
  Environment env;
  std::vector<double> q_start, q_goal;
};

// Forward kinematics for the planar arm: returns base, elbow, tip.
std::array<std::array<double, 2>, 3> arm2_points(const RobotModel& robot,
                                                 const double* q);

// Distance from point p to segment [a, b].
double point_segment_distance(double px, double py, double ax, double ay,
                              double bx, double by);

// True iff the robot body at q touches any obstacle (closed boundary: contact
// counts) or leaves the workspace box. `padding` inflates every obstacle
// radius; the expert planner uses it to keep demonstrations clear of surfaces.
bool config_in_collision(const RobotModel& robot, const double* q,
                         const Environment& env, double padding = 0.0);

// Checks interpolated configurations along [q_a, q_b] at spacing <= resolution.
// The sample count is rounded up to a power of two, so halving the resolution
// refines onto a superset of the coarser samples (collision verdicts are
// monotone under refinement), and the endpoints are canonically ordered so the
// check is exactly symmetric.
bool segment_in_collision(const RobotModel& robot, const double* q_a,
                          const double* q_b, const Environment& env,
                          double resolution, double padding = 0.0);

struct EnvSampleParams {
  int n_min = 1, n_max = 5;
  double r_min = 0.05, r_max = 0.15;
  double clearance = 0.1;  // minimum surface-to-surface gap between obstacles
  int max_attempts = 10000;
};

// Rejection-samples obstacle placements inside the unit square until all
// pairwise surface gaps reach the clearance. Deterministic per seed.
Environment sample_environment(uint64_t seed, const EnvSampleParams& params);

// Rejection-samples a collision-free start/goal pair with configuration-space
// separation >= min_separation. Deterministic per seed.
PlanningProblem sample_problem(const Environment& env, const RobotModel& robot,
                               uint64_t seed, double min_separation,
                               int max_attempts = 100000);

// Text record format: header lines (robot kind, bounds, seed), one "x y r"
// line per obstacle in creation order. Doubles round-trip exactly.
std::string env_to_text(const Environment& env, RobotKind kind);
Environment env_from_text(const std::string& text, RobotKind* kind_out = nullptr);
void save_env_file(const std::string& path, const Environment& env, RobotKind kind);
Environment load_env_file(const std::string& path, RobotKind* kind_out = nullptr);

}  // namespace campd
