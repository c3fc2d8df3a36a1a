#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "campd/dataset.hpp"
#include "campd/evaluation.hpp"
#include "campd/geometry.hpp"
#include "campd/model.hpp"
#include "campd/rng.hpp"
#include "campd/training.hpp"

using namespace campd;

namespace {

// Straight line between endpoints with H waypoints, flat H x 2.
std::vector<double> line_traj(double x0, double y0, double x1, double y1, int H) {
  std::vector<double> t(static_cast<size_t>(H) * 2);
  for (int h = 0; h < H; ++h) {
    double s = static_cast<double>(h) / (H - 1);
    t[static_cast<size_t>(h) * 2] = x0 + s * (x1 - x0);
    t[static_cast<size_t>(h) * 2 + 1] = y0 + s * (y1 - y0);
  }
  return t;
}

PlanningProblem empty_problem(double x0, double y0, double x1, double y1) {
  PlanningProblem p;
  p.env.bounds = {0.0, 0.0, 1.0, 1.0};
  p.q_start = {x0, y0};
  p.q_goal = {x1, y1};
  return p;
}

}  // namespace

TEST_CASE("smoothness: zero on lines, analytic kink, translation invariant") {
  const int H = 10;
  // Steps of 1/16 and 1/32 are exact in binary floating point, so the second
  // differences cancel exactly.
  std::vector<double> exact(static_cast<size_t>(H) * 2);
  for (int h = 0; h < H; ++h) {
    exact[static_cast<size_t>(h) * 2] = 0.125 + h * 0.0625;
    exact[static_cast<size_t>(h) * 2 + 1] = 0.25 + h * 0.03125;
  }
  CHECK(smoothness(exact, 2) == 0.0);
  // A general collinear line only cancels to rounding error.
  auto line = line_traj(0.1, 0.2, 0.9, 0.8, H);
  CHECK(smoothness(line, 2) <= 1e-28);

  // A single bump of height b at waypoint j contributes to the three second
  // differences centered at j-1, j, j+1: b^2 + (2b)^2 + b^2 = 6 b^2.
  const double b = 0.3;
  auto kinked = line;
  kinked[5 * 2] += b;
  CHECK(smoothness(kinked, 2) == doctest::Approx(6.0 * b * b).epsilon(1e-12));

  // Translating every waypoint by a constant leaves the energy unchanged.
  auto shifted = kinked;
  for (size_t i = 0; i < shifted.size(); i += 2) {
    shifted[i] += 17.25;
    shifted[i + 1] -= 3.5;
  }
  CHECK(smoothness(shifted, 2) == doctest::Approx(smoothness(kinked, 2)).epsilon(1e-9));

  CHECK_THROWS_AS(smoothness(std::vector<double>{0, 0, 1, 1}, 2), EvalError);  // H=2
  CHECK_THROWS_AS(smoothness(std::vector<double>{0, 0, 1}, 2), EvalError);     // ragged
}

TEST_CASE("is_feasible: endpoints, limits, collisions") {
  RobotModel robot = RobotModel::point2d();
  const int H = 8;

  // Straight line in an empty environment.
  PlanningProblem p = empty_problem(0.1, 0.5, 0.9, 0.5);
  auto line = line_traj(0.1, 0.5, 0.9, 0.5, H);
  CHECK(is_feasible(line, p, robot, 0.01));

  // Endpoint tolerance: 5e-10 off is still feasible, 5e-9 off is not.
  auto nearly = line;
  nearly[0] += 5e-10;
  CHECK(is_feasible(nearly, p, robot, 0.01));
  auto off = line;
  off[0] += 5e-9;
  CHECK_FALSE(is_feasible(off, p, robot, 0.01));
  auto goal_off = line;
  goal_off[(H - 1) * 2 + 1] -= 5e-9;
  CHECK_FALSE(is_feasible(goal_off, p, robot, 0.01));

  // A waypoint outside joint limits.
  auto out = line;
  out[3 * 2 + 1] = 1.5;
  CHECK_FALSE(is_feasible(out, p, robot, 0.01));
  auto nan_wp = line;
  nan_wp[3 * 2] = std::nan("");
  CHECK_FALSE(is_feasible(nan_wp, p, robot, 0.01));

  // A disc squarely on the path.
  PlanningProblem blocked = p;
  blocked.env.obstacles.push_back({0.5, 0.5, 0.1});
  CHECK_FALSE(is_feasible(line, blocked, robot, 0.01));
  // Same obstacle, path shifted well clear of it.
  PlanningProblem clear = blocked;
  clear.q_start = {0.1, 0.9};
  clear.q_goal = {0.9, 0.9};
  CHECK(is_feasible(line_traj(0.1, 0.9, 0.9, 0.9, H), clear, robot, 0.01));

  // Dimension mismatches throw.
  std::vector<double> ragged(H * 2 - 1, 0.5);
  CHECK_THROWS_AS(is_feasible(ragged, p, robot, 0.01), EvalError);
  std::vector<double> single = {0.1, 0.5};
  CHECK_THROWS_AS(is_feasible(single, p, robot, 0.01), EvalError);
  PlanningProblem bad_dims = p;
  bad_dims.q_start = {0.1};
  CHECK_THROWS_AS(is_feasible(line, bad_dims, robot, 0.01), EvalError);
  CHECK_THROWS_AS(is_feasible(line, p, robot, 0.0), EvalError);
}

TEST_CASE("is_feasible: obstacle order invariance and refinement agreement") {
  RobotModel robot = RobotModel::point2d();
  const int H = 8;

  PlanningProblem p = empty_problem(0.05, 0.5, 0.95, 0.5);
  p.env.obstacles = {{0.3, 0.55, 0.08}, {0.6, 0.4, 0.1}, {0.8, 0.62, 0.07}};
  PlanningProblem shuffled = p;
  shuffled.env.obstacles = {{0.8, 0.62, 0.07}, {0.3, 0.55, 0.08}, {0.6, 0.4, 0.1}};

  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    auto traj = line_traj(0.05, 0.5, 0.95, 0.5, H);
    for (int h = 1; h + 1 < H; ++h) {
      traj[static_cast<size_t>(h) * 2] += rng.uniform(-0.05, 0.05);
      traj[static_cast<size_t>(h) * 2 + 1] += rng.uniform(-0.3, 0.3);
    }
    CHECK(is_feasible(traj, p, robot, 0.01) == is_feasible(traj, shuffled, robot, 0.01));
  }

  // Grazing chords past a disc: the 0.01-resolution verdict matches a 10x
  // finer check. Offsets keep a margin above the sampling error bound.
  PlanningProblem graze = empty_problem(0.05, 0.0, 0.95, 0.0);
  graze.env.obstacles = {{0.5, 0.5, 0.2}};
  for (double y : {0.71, 0.72, 0.735, 0.69, 0.68, 0.665}) {
    PlanningProblem gp = graze;
    gp.q_start = {0.05, y};
    gp.q_goal = {0.95, y};
    auto traj = line_traj(0.05, y, 0.95, y, H);
    CHECK(is_feasible(traj, gp, robot, 0.01) == is_feasible(traj, gp, robot, 0.001));
  }
}

TEST_CASE("batch_metrics: definitions on constructed batches") {
  RobotModel robot = RobotModel::point2d();
  const int H = 8;
  PlanningProblem p = empty_problem(0.1, 0.5, 0.9, 0.5);
  auto good = line_traj(0.1, 0.5, 0.9, 0.5, H);
  auto bad = good;
  bad[0] += 1e-3;  // endpoint violation

  // 10 samples, exactly 1 feasible.
  {
    std::vector<std::vector<double>> batch(10, bad);
    batch[7] = good;
    ProblemMetrics m = batch_metrics(batch, p, robot, 0.01, std::nullopt);
    CHECK(m.success);
    CHECK(m.ftr == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(m.n_feasible == 1);
    CHECK(m.best_index == 7);
    CHECK_FALSE(m.var_defined);  // <= 1 feasible: flagged
    CHECK(m.var == 0.0);
    CHECK_FALSE(m.bsd_defined);  // no baseline given
  }

  // All samples identical: zero variance, defined.
  {
    std::vector<std::vector<double>> batch(4, good);
    ProblemMetrics m = batch_metrics(batch, p, robot, 0.01, std::nullopt);
    CHECK(m.n_feasible == 4);
    CHECK(m.ftr == 1.0);
    CHECK(m.var_defined);
    CHECK(m.var == 0.0);
    CHECK(m.best_index == 0);  // tie broken by lowest index
  }

  // Two feasible samples offset by a constant d: Var = H * |d|^2 / 4. The
  // offset must stay inside the 1e-9 endpoint tolerance to keep both
  // feasible, which the formula does not care about.
  {
    const double dx = 8e-10, dy = -6e-10;  // |d| = 1e-9
    auto a = good;
    auto b = good;
    for (size_t i = 0; i < a.size(); i += 2) {
      a[i] += dx / 2;
      a[i + 1] += dy / 2;
      b[i] -= dx / 2;
      b[i + 1] -= dy / 2;
    }
    std::vector<std::vector<double>> batch = {a, b};
    ProblemMetrics m = batch_metrics(batch, p, robot, 0.01, std::nullopt);
    REQUIRE(m.n_feasible == 2);
    double expected = H * (dx * dx + dy * dy) / 4.0;
    CHECK(m.var == doctest::Approx(expected).epsilon(1e-9));
  }

  // BSD sign convention: smoother than baseline -> negative.
  {
    auto kinked = good;
    kinked[4 * 2 + 1] += 0.2;
    std::vector<std::vector<double>> batch = {kinked, good};
    double base = smoothness(kinked, 2);
    ProblemMetrics m = batch_metrics(batch, p, robot, 0.01, base);
    REQUIRE(m.bsd_defined);
    CHECK(m.best_index == 1);  // the straight line is smoother
    CHECK(m.bsd == doctest::Approx((0.0 - base) / base).epsilon(1e-12));
    CHECK(m.bsd < 0.0);

    // Baseline provided but nothing feasible: flagged undefined.
    std::vector<std::vector<double>> all_bad(3, bad);
    ProblemMetrics mb = batch_metrics(all_bad, p, robot, 0.01, base);
    CHECK_FALSE(mb.success);
    CHECK_FALSE(mb.bsd_defined);
  }

  CHECK_THROWS_AS(batch_metrics({}, p, robot, 0.01, std::nullopt), EvalError);
}

TEST_CASE("batch_metrics matches brute-force oracles on random batches") {
  RobotModel robot = RobotModel::point2d();
  const int H = 8;
  PlanningProblem p = empty_problem(0.2, 0.3, 0.8, 0.7);
  p.env.obstacles = {{0.5, 0.8, 0.1}};

  Rng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> batch;
    int n = 3 + static_cast<int>(rng.below(6));
    for (int i = 0; i < n; ++i) {
      auto t = line_traj(0.2, 0.3, 0.8, 0.7, H);
      for (int h = 1; h + 1 < H; ++h) {
        t[static_cast<size_t>(h) * 2] += rng.uniform(-0.15, 0.15);
        t[static_cast<size_t>(h) * 2 + 1] += rng.uniform(-0.25, 0.25);
      }
      if (rng.uniform() < 0.25) t[0] += 1e-3;  // sprinkle infeasible samples
      batch.push_back(std::move(t));
    }

    ProblemMetrics m = batch_metrics(batch, p, robot, 0.01, std::nullopt);

    // Oracle: feasibility per sample, then direct per-waypoint variance.
    std::vector<int> feas;
    for (int i = 0; i < n; ++i) {
      if (is_feasible(batch[static_cast<size_t>(i)], p, robot, 0.01)) feas.push_back(i);
    }
    CHECK(m.n_feasible == static_cast<int>(feas.size()));
    CHECK(m.success == !feas.empty());
    CHECK(m.ftr == static_cast<double>(feas.size()) / n);

    if (feas.size() >= 2) {
      double oracle = 0.0;
      for (int h = 0; h < H; ++h) {
        for (int k = 0; k < 2; ++k) {
          double mean = 0.0;
          for (int i : feas) mean += batch[static_cast<size_t>(i)][static_cast<size_t>(h) * 2 + k];
          mean /= static_cast<double>(feas.size());
          for (int i : feas) {
            double d = batch[static_cast<size_t>(i)][static_cast<size_t>(h) * 2 + k] - mean;
            oracle += d * d / static_cast<double>(feas.size());
          }
        }
      }
      REQUIRE(m.var_defined);
      CHECK(std::abs(m.var - oracle) <= 1e-9);
    } else {
      CHECK_FALSE(m.var_defined);
    }
  }
}

namespace {

Dataset synthetic_dataset(int n_records, uint64_t seed) {
  Dataset ds;
  ds.robot = RobotKind::point2d;
  ds.H = 8;
  ds.d_q = 2;
  ds.norm.q_lo = {0.0, 0.0};
  ds.norm.q_hi = {1.0, 1.0};
  ContextTypeSpec sphere;
  sphere.name = "sphere2d";
  sphere.lo = {0.0, 0.0, 0.05};
  sphere.hi = {1.0, 1.0, 0.2};
  ds.norm.types.push_back(sphere);
  Rng rng(seed);
  for (int r = 0; r < n_records; ++r) {
    DatasetRecord rec;
    double ax = rng.uniform(-0.9, 0.9), ay = rng.uniform(-0.9, 0.9);
    double bx = rng.uniform(-0.9, 0.9), by = rng.uniform(-0.9, 0.9);
    rec.traj.resize(16);
    for (int h = 0; h < 8; ++h) {
      double s = h / 7.0;
      rec.traj[static_cast<size_t>(h) * 2] = ax + s * (bx - ax);
      rec.traj[static_cast<size_t>(h) * 2 + 1] = ay + s * (by - ay);
    }
    ContextInstance item;
    item.type_id = kSphere2dType;
    item.params = {rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)};
    rec.context.items.push_back(item);
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

Checkpoint tiny_checkpoint() {
  Dataset ds = synthetic_dataset(8, 5);
  ModelConfig mc = ModelConfig::tiny();
  mc.H = 8;
  mc.d_q = 2;
  mc.context_dims = {3};
  TrainConfig tc;
  tc.batch_size = 8;
  tc.lr = 1e-3;
  tc.p_d = 0.5;
  tc.total_steps = 20;
  tc.checkpoint_every = 0;
  tc.seed = 17;
  auto dir = (std::filesystem::temp_directory_path() / "campd_eval_fixture").string();
  std::filesystem::remove_all(dir);
  TrainResult res = train_loop(ds, mc, tc, dir);
  Checkpoint ck = load_model_checkpoint(res.checkpoint_path);
  std::filesystem::remove_all(dir);
  return ck;
}

// Strips the time_s column (index 1) from a report CSV for determinism
// comparisons; wall-clock timing legitimately varies between runs.
std::string csv_without_time(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col != 1) out << cell << ",";
      ++col;
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace

TEST_CASE("run_benchmark end to end with baseline") {
  static Checkpoint ckpt = tiny_checkpoint();

  RobotModel robot = RobotModel::point2d();
  std::vector<PlanningProblem> problems;
  for (uint64_t s = 0; s < 3; ++s) {
    EnvSampleParams ep;
    ep.n_min = 1;
    ep.n_max = 2;
    Environment env = sample_environment(1000 + s, ep);
    problems.push_back(sample_problem(env, robot, 2000 + s, 0.4));
  }

  BenchmarkConfig cfg;
  cfg.inference.sampler = "ddim";
  cfg.inference.T_inf = 4;
  cfg.inference.w = 1.0;
  cfg.inference.n_batch = 6;
  cfg.inference.smooth_window = 7;
  cfg.inference.seed = 9;
  cfg.resolution = 0.01;
  cfg.run_baseline = true;
  cfg.planner.max_iters = 4000;
  cfg.baseline_seed = 77;

  auto dir = std::filesystem::temp_directory_path() / "campd_eval_run";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::string csv_a = (dir / "report_a.csv").string();

  EvalReport rep = run_benchmark(ckpt, problems, cfg, csv_a);

  REQUIRE(rep.rows.size() == 3);
  REQUIRE(rep.baseline_rows.size() == 3);
  for (int i = 0; i < 3; ++i) {
    const ProblemMetrics& r = rep.rows[static_cast<size_t>(i)];
    CHECK(r.problem_id == i);
    CHECK(r.time_s > 0.0);
    CHECK(r.ftr >= 0.0);
    CHECK(r.ftr <= 1.0);
    CHECK(r.success == (r.n_feasible > 0));
    CHECK(r.ftr == doctest::Approx(r.n_feasible / 6.0).epsilon(1e-15));
    const ProblemMetrics& b = rep.baseline_rows[static_cast<size_t>(i)];
    CHECK(b.time_s > 0.0);
    CHECK_FALSE(b.bsd_defined);  // the baseline has no baseline
    // The expert baseline on these simple problems should succeed.
    CHECK(b.success);
    // Model BSD defined exactly when both sides are feasible.
    CHECK(r.bsd_defined == (r.success && b.success));
  }

  // Files: report, baseline report, summary.
  CHECK(std::filesystem::exists(csv_a));
  CHECK(std::filesystem::exists(dir / "report_a_baseline.csv"));
  CHECK(std::filesystem::exists(dir / "report_a_summary.txt"));
  {
    std::ifstream in(csv_a);
    std::string header;
    REQUIRE(std::getline(in, header));
    CHECK(header == "problem_id,time_s,success,ftr,bsd,var,n_feasible");
    int rows = 0;
    std::string line;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 3);
  }
  {
    std::ifstream in(dir / "report_a_summary.txt");
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    CHECK(text.find("FTR") != std::string::npos);
    CHECK(text.find("expert baseline") != std::string::npos);
  }

  // Aggregates recomputed from rows.
  {
    double mean_ftr = 0.0;
    for (const auto& r : rep.rows) mean_ftr += r.ftr;
    mean_ftr /= 3.0;
    CHECK(rep.ftr.mean == doctest::Approx(mean_ftr).epsilon(1e-12));
    CHECK(rep.ftr.n == 3);
    int succ = 0;
    for (const auto& r : rep.rows) succ += r.success ? 1 : 0;
    CHECK(rep.success_rate == doctest::Approx(succ / 3.0).epsilon(1e-15));
  }

  // Determinism: identical seeds reproduce every metric column; only the
  // wall-clock column may differ.
  std::string csv_b = (dir / "report_b.csv").string();
  EvalReport rep2 = run_benchmark(ckpt, problems, cfg, csv_b);
  CHECK(csv_without_time(csv_a) == csv_without_time(csv_b));
  CHECK(csv_without_time((dir / "report_a_baseline.csv").string()) ==
        csv_without_time((dir / "report_b_baseline.csv").string()));

  // Parallel evaluation merges identical metric rows in problem order.
  BenchmarkConfig par = cfg;
  par.threads = 3;
  std::string csv_c = (dir / "report_c.csv").string();
  EvalReport rep3 = run_benchmark(ckpt, problems, par, csv_c);
  CHECK(csv_without_time(csv_a) == csv_without_time(csv_c));
  REQUIRE(rep3.rows.size() == rep.rows.size());
  for (size_t i = 0; i < rep.rows.size(); ++i) {
    CHECK(rep3.rows[i].ftr == rep.rows[i].ftr);
    CHECK(rep3.rows[i].n_feasible == rep.rows[i].n_feasible);
  }

  // Single problem, batch 1.
  BenchmarkConfig one = cfg;
  one.run_baseline = false;
  one.inference.n_batch = 1;
  std::string csv_d = (dir / "report_d.csv").string();
  EvalReport rep4 = run_benchmark(ckpt, {problems[0]}, one, csv_d);
  CHECK(rep4.rows.size() == 1);
  CHECK_FALSE(rep4.rows[0].var_defined);  // batch of 1: flagged
  CHECK_FALSE(rep4.has_baseline);

  CHECK_THROWS_AS(run_benchmark(ckpt, {}, cfg, (dir / "x.csv").string()), EvalError);
  BenchmarkConfig bad = cfg;
  bad.threads = 0;
  CHECK_THROWS_AS(run_benchmark(ckpt, problems, bad, (dir / "x.csv").string()), EvalError);

  std::filesystem::remove_all(dir);
}
