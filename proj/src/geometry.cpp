#include "campd/geometry.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace campd {

std::string robot_kind_name(RobotKind kind) {
  return kind == RobotKind::point2d ? "point2d" : "arm2";
}

RobotKind robot_kind_from(const std::string& name) {
  if (name == "point2d") return RobotKind::point2d;
  if (name == "arm2") return RobotKind::arm2;
  throw GeometryError("unknown robot kind: " + name);
}

RobotModel RobotModel::point2d() {
  RobotModel m;
  m.kind = RobotKind::point2d;
  m.d_q = 2;
  m.q_lo = {0.0, 0.0};
  m.q_hi = {1.0, 1.0};
  return m;
}

RobotModel RobotModel::arm2() {
  RobotModel m;
  m.kind = RobotKind::arm2;
  m.d_q = 2;
  m.q_lo = {-3.141592653589793, -3.141592653589793};
  m.q_hi = {3.141592653589793, 3.141592653589793};
  return m;
}

std::array<std::array<double, 2>, 3> arm2_points(const RobotModel& robot,
                                                 const double* q) {
  const double a1 = q[0], a2 = q[0] + q[1];
  std::array<std::array<double, 2>, 3> p;
  p[0] = robot.base;
  p[1] = {p[0][0] + robot.link1 * std::cos(a1),
          p[0][1] + robot.link1 * std::sin(a1)};
  p[2] = {p[1][0] + robot.link2 * std::cos(a2),
          p[1][1] + robot.link2 * std::sin(a2)};
  return p;
}

double point_segment_distance(double px, double py, double ax, double ay,
                              double bx, double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) {
    t = ((px - ax) * dx + (py - ay) * dy) / len2;
    t = std::min(1.0, std::max(0.0, t));
  }
  const double cx = ax + t * dx - px, cy = ay + t * dy - py;
  return std::sqrt(cx * cx + cy * cy);
}

namespace {

bool point_outside(const std::array<double, 4>& b, double x, double y) {
  return x < b[0] || y < b[1] || x > b[2] || y > b[3];
}

}  // namespace

bool config_in_collision(const RobotModel& robot, const double* q,
                         const Environment& env, double padding) {
  if (robot.kind == RobotKind::point2d) {
    if (point_outside(env.bounds, q[0], q[1])) return true;
    for (const auto& o : env.obstacles) {
      const double dx = q[0] - o.x, dy = q[1] - o.y;
      const double rr = o.r + padding;
      if (dx * dx + dy * dy <= rr * rr) return true;
    }
    return false;
  }
  const auto p = arm2_points(robot, q);
  for (const auto& pt : p)
    if (point_outside(env.bounds, pt[0], pt[1])) return true;
  for (const auto& o : env.obstacles) {
    const double reach = o.r + robot.capsule_radius + padding;
    for (int link = 0; link < 2; ++link) {
      const double d = point_segment_distance(o.x, o.y, p[link][0], p[link][1],
                                              p[link + 1][0], p[link + 1][1]);
      if (d <= reach) return true;
    }
  }
  return false;
}

bool segment_in_collision(const RobotModel& robot, const double* q_a,
                          const double* q_b, const Environment& env,
                          double resolution, double padding) {
  if (resolution <= 0.0) throw GeometryError("segment check: resolution must be > 0");
  const int d = robot.d_q;
  // Canonical endpoint order makes the check exactly symmetric in (a, b).
  for (int i = 0; i < d; ++i) {
    if (q_a[i] < q_b[i]) break;
    if (q_a[i] > q_b[i]) {
      std::swap(q_a, q_b);
      break;
    }
  }
  double dist2 = 0.0;
  for (int i = 0; i < d; ++i) {
    const double di = q_b[i] - q_a[i];
    dist2 += di * di;
  }
  const double dist = std::sqrt(dist2);
  uint64_t n = 1;
  if (dist > resolution)
    n = std::bit_ceil(static_cast<uint64_t>(std::ceil(dist / resolution)));
  std::vector<double> q(static_cast<size_t>(d));
  for (uint64_t i = 0; i <= n; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n);
    for (int k = 0; k < d; ++k) q[static_cast<size_t>(k)] = q_a[k] + t * (q_b[k] - q_a[k]);
    if (config_in_collision(robot, q.data(), env, padding)) return true;
  }
  return false;
}

Environment sample_environment(uint64_t seed, const EnvSampleParams& p) {
  if (p.n_min < 1 || p.n_max < p.n_min || p.r_min <= 0.0 || p.r_max < p.r_min ||
      p.clearance < 0.0)
    throw GeometryError("sample_environment: invalid parameter ranges");
  Environment env;
  env.seed = seed;
  Rng rng(seed);
  const int n = p.n_min + static_cast<int>(rng.below(
                              static_cast<uint64_t>(p.n_max - p.n_min + 1)));
  int attempts = 0;
  while (static_cast<int>(env.obstacles.size()) < n) {
    if (++attempts > p.max_attempts)
      throw GeometryError("sample_environment: attempt budget exhausted (" +
                          std::to_string(p.max_attempts) + ") for seed " +
                          std::to_string(seed));
    SphereObstacle o;
    o.r = rng.uniform(p.r_min, p.r_max);
    o.x = rng.uniform(env.bounds[0] + o.r, env.bounds[2] - o.r);
    o.y = rng.uniform(env.bounds[1] + o.r, env.bounds[3] - o.r);
    bool ok = true;
    for (const auto& e : env.obstacles) {
      const double dx = o.x - e.x, dy = o.y - e.y;
      const double gap = std::sqrt(dx * dx + dy * dy) - o.r - e.r;
      if (gap < p.clearance) {
        ok = false;
        break;
      }
    }
    if (ok) env.obstacles.push_back(o);
  }
  return env;
}

PlanningProblem sample_problem(const Environment& env, const RobotModel& robot,
                               uint64_t seed, double min_separation,
                               int max_attempts) {
  Rng rng(seed);
  const int d = robot.d_q;
  auto draw = [&](std::vector<double>& q) {
    q.resize(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i)
      q[static_cast<size_t>(i)] =
          rng.uniform(robot.q_lo[static_cast<size_t>(i)],
                      robot.q_hi[static_cast<size_t>(i)]);
  };
  PlanningProblem prob;
  prob.env = env;
  std::vector<double> qs, qg;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    draw(qs);
    if (config_in_collision(robot, qs.data(), env)) continue;
    draw(qg);
    if (config_in_collision(robot, qg.data(), env)) continue;
    double dist2 = 0.0;
    for (int i = 0; i < d; ++i) {
      const double di = qg[static_cast<size_t>(i)] - qs[static_cast<size_t>(i)];
      dist2 += di * di;
    }
    if (std::sqrt(dist2) < min_separation) continue;
    prob.q_start = qs;
    prob.q_goal = qg;
    return prob;
  }
  throw GeometryError("sample_problem: attempt budget exhausted for seed " +
                      std::to_string(seed));
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string env_to_text(const Environment& env, RobotKind kind) {
  std::ostringstream os;
  os << "robot " << robot_kind_name(kind) << "\n";
  os << "bounds " << fmt_double(env.bounds[0]) << ' ' << fmt_double(env.bounds[1])
     << ' ' << fmt_double(env.bounds[2]) << ' ' << fmt_double(env.bounds[3])
     << "\n";
  os << "seed " << env.seed << "\n";
  for (const auto& o : env.obstacles)
    os << fmt_double(o.x) << ' ' << fmt_double(o.y) << ' ' << fmt_double(o.r)
       << "\n";
  return os.str();
}

Environment env_from_text(const std::string& text, RobotKind* kind_out) {
  Environment env;
  std::istringstream is(text);
  std::string line;
  bool have_bounds = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    if (head == "robot") {
      std::string name;
      ls >> name;
      if (kind_out) *kind_out = robot_kind_from(name);
    } else if (head == "bounds") {
      if (!(ls >> env.bounds[0] >> env.bounds[1] >> env.bounds[2] >> env.bounds[3]))
        throw GeometryError("environment text: malformed bounds line");
      have_bounds = true;
    } else if (head == "seed") {
      if (!(ls >> env.seed))
        throw GeometryError("environment text: malformed seed line");
    } else {
      SphereObstacle o;
      std::istringstream os_line(line);
      if (!(os_line >> o.x >> o.y >> o.r))
        throw GeometryError("environment text: malformed obstacle line: " + line);
      env.obstacles.push_back(o);
    }
  }
  if (!have_bounds)
    throw GeometryError("environment text: missing bounds header");
  return env;
}

void save_env_file(const std::string& path, const Environment& env,
                   RobotKind kind) {
  std::ofstream f(path);
  if (!f) throw GeometryError("cannot open for writing: " + path);
  f << env_to_text(env, kind);
  if (!f) throw GeometryError("write failed: " + path);
}

Environment load_env_file(const std::string& path, RobotKind* kind_out) {
  std::ifstream f(path);
  if (!f) throw GeometryError("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return env_from_text(ss.str(), kind_out);
}

}  // namespace campd
