#include "campd/planner.hpp"

#include <algorithm>
#include <cmath>

namespace campd {

namespace {

double dist(const double* a, const double* b, int d) {
  double s = 0.0;
  for (int i = 0; i < d; ++i) {
    const double di = a[i] - b[i];
    s += di * di;
  }
  return std::sqrt(s);
}

// One RRT tree: flat node storage plus parent links.
struct Tree {
  int d_q;
  std::vector<double> pts;
  std::vector<int> parent;
  explicit Tree(int d) : d_q(d) {}
  int size() const { return static_cast<int>(parent.size()); }
  const double* at(int i) const { return pts.data() + static_cast<int64_t>(i) * d_q; }
  int add(const double* q, int par) {
    pts.insert(pts.end(), q, q + d_q);
    parent.push_back(par);
    return size() - 1;
  }
  int nearest(const double* q) const {
    int best = 0;
    double best_d = dist(at(0), q, d_q);
    for (int i = 1; i < size(); ++i) {
      const double d = dist(at(i), q, d_q);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }
};

enum class Extend { trapped, advanced, reached };

// Moves from the nearest tree node one step toward q_target; adds the new
// node when the connecting segment is collision-free.
Extend extend_tree(Tree& tree, const double* q_target, const RobotModel& robot,
                   const Environment& env, const PlannerParams& pp,
                   int& new_idx) {
  const int d = tree.d_q;
  const int near = tree.nearest(q_target);
  const double* q_near = tree.at(near);
  const double gap = dist(q_near, q_target, d);
  std::vector<double> q_new(static_cast<size_t>(d));
  bool reaches = gap <= pp.step_size;
  if (reaches) {
    std::copy(q_target, q_target + d, q_new.begin());
  } else {
    const double t = pp.step_size / gap;
    for (int i = 0; i < d; ++i) q_new[static_cast<size_t>(i)] = q_near[i] + t * (q_target[i] - q_near[i]);
  }
  if (segment_in_collision(robot, q_near, q_new.data(), env, pp.resolution,
                           pp.padding))
    return Extend::trapped;
  new_idx = tree.add(q_new.data(), near);
  return reaches ? Extend::reached : Extend::advanced;
}

Extend connect_tree(Tree& tree, const double* q_target, const RobotModel& robot,
                    const Environment& env, const PlannerParams& pp,
                    int& last_idx) {
  Extend s;
  do {
    s = extend_tree(tree, q_target, robot, env, pp, last_idx);
  } while (s == Extend::advanced);
  return s;
}

std::vector<int> chain_to_root(const Tree& tree, int idx) {
  std::vector<int> chain;
  for (int i = idx; i >= 0; i = tree.parent[static_cast<size_t>(i)])
    chain.push_back(i);
  return chain;
}

}  // namespace

double Path::length() const {
  double total = 0.0;
  for (int64_t i = 0; i + 1 < n(); ++i) total += dist(at(i), at(i + 1), d_q);
  return total;
}

Path rrt_connect(const RobotModel& robot, const PlanningProblem& problem,
                 const PlannerParams& params, uint64_t seed) {
  const int d = robot.d_q;
  if (static_cast<int>(problem.q_start.size()) != d ||
      static_cast<int>(problem.q_goal.size()) != d)
    throw GeometryError("rrt_connect: endpoint dimension mismatch");
  Rng rng(seed);
  Tree ta(d), tb(d);
  ta.add(problem.q_start.data(), -1);
  tb.add(problem.q_goal.data(), -1);
  Tree* grow = &ta;
  Tree* join = &tb;
  bool grow_is_start = true;
  std::vector<double> q_rand(static_cast<size_t>(d));

  for (int iter = 0; iter < params.max_iters; ++iter) {
    for (int i = 0; i < d; ++i)
      q_rand[static_cast<size_t>(i)] =
          rng.uniform(robot.q_lo[static_cast<size_t>(i)],
                      robot.q_hi[static_cast<size_t>(i)]);
    int new_idx = -1;
    if (extend_tree(*grow, q_rand.data(), robot, problem.env, params, new_idx) !=
        Extend::trapped) {
      int join_idx = -1;
      if (connect_tree(*join, grow->at(new_idx), robot, problem.env, params,
                       join_idx) == Extend::reached) {
        // grow-tree chain runs meet -> root; join-tree chain root -> meet.
        std::vector<int> gc = chain_to_root(*grow, new_idx);
        std::vector<int> jc = chain_to_root(*join, join_idx);
        Path path;
        path.d_q = d;
        const Tree& start_tree = grow_is_start ? *grow : *join;
        const Tree& goal_tree = grow_is_start ? *join : *grow;
        const std::vector<int>& sc = grow_is_start ? gc : jc;
        const std::vector<int>& gchain = grow_is_start ? jc : gc;
        for (auto it = sc.rbegin(); it != sc.rend(); ++it)
          path.pts.insert(path.pts.end(), start_tree.at(*it),
                          start_tree.at(*it) + d);
        // Skip the duplicated meet configuration at the junction.
        bool first = true;
        for (int idx : gchain) {
          if (first) {
            first = false;
            if (dist(goal_tree.at(idx), path.at(path.n() - 1), d) == 0.0)
              continue;
          }
          path.pts.insert(path.pts.end(), goal_tree.at(idx),
                          goal_tree.at(idx) + d);
        }
        return path;
      }
    }
    std::swap(grow, join);
    grow_is_start = !grow_is_start;
  }
  throw PlanNotFound("rrt_connect: no path after " +
                     std::to_string(params.max_iters) + " iterations");
}

Path shortcut_smooth(const RobotModel& robot, const Path& path,
                     const Environment& env, const PlannerParams& params,
                     uint64_t seed) {
  Path out = path;
  if (out.n() < 3 || params.shortcut_iters <= 0) return out;
  Rng rng(seed);
  for (int iter = 0; iter < params.shortcut_iters; ++iter) {
    const int64_t n = out.n();
    if (n < 3) break;
    int64_t i = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n - 2)));
    int64_t j = i + 2 +
                static_cast<int64_t>(rng.below(static_cast<uint64_t>(n - i - 2)));
    double chain_len = 0.0;
    for (int64_t k = i; k < j; ++k)
      chain_len += dist(out.at(k), out.at(k + 1), out.d_q);
    const double direct = dist(out.at(i), out.at(j), out.d_q);
    if (direct >= chain_len) continue;  // no gain (collinear or equal)
    if (segment_in_collision(robot, out.at(i), out.at(j), env,
                             params.resolution, params.padding))
      continue;
    out.pts.erase(out.pts.begin() + (i + 1) * out.d_q,
                  out.pts.begin() + j * out.d_q);
  }
  return out;
}

Path resample_to_horizon(const Path& path, int H) {
  if (H < 2) throw GeometryError("resample_to_horizon: H must be >= 2");
  if (path.n() < 1) throw GeometryError("resample_to_horizon: empty path");
  const int d = path.d_q;
  Path out;
  out.d_q = d;
  out.pts.resize(static_cast<size_t>(H) * d);

  const int64_t n = path.n();
  std::vector<double> cum(static_cast<size_t>(n), 0.0);
  for (int64_t i = 1; i < n; ++i)
    cum[static_cast<size_t>(i)] =
        cum[static_cast<size_t>(i - 1)] + dist(path.at(i - 1), path.at(i), d);
  const double total = cum[static_cast<size_t>(n - 1)];

  if (total == 0.0) {
    for (int k = 0; k < H; ++k)
      std::copy(path.at(0), path.at(0) + d, out.at(k));
    return out;
  }

  int64_t seg = 0;
  for (int k = 0; k < H; ++k) {
    const double s = total * static_cast<double>(k) / static_cast<double>(H - 1);
    while (seg + 2 < n && cum[static_cast<size_t>(seg + 1)] < s) ++seg;
    const double s0 = cum[static_cast<size_t>(seg)];
    const double s1 = cum[static_cast<size_t>(seg + 1)];
    const double t = s1 > s0 ? (s - s0) / (s1 - s0) : 0.0;
    const double* a = path.at(seg);
    const double* b = path.at(seg + 1);
    for (int i = 0; i < d; ++i)
      out.at(k)[i] = a[i] + t * (b[i] - a[i]);
  }
  // Endpoints are exact by contract, immune to arc-length rounding.
  std::copy(path.at(0), path.at(0) + d, out.at(0));
  std::copy(path.at(n - 1), path.at(n - 1) + d, out.at(H - 1));
  return out;
}

Path plan_expert(const RobotModel& robot, const PlanningProblem& problem,
                 const PlannerParams& params, int H, uint64_t seed) {
  Path raw = rrt_connect(robot, problem, params, seed);
  Path smooth = shortcut_smooth(robot, raw, problem.env, params,
                                mix_seed(seed, 0x500));
  return resample_to_horizon(smooth, H);
}

}  // namespace campd
