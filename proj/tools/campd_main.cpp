// campd: command-line pipeline driver.
//
//   gen-env   sample obstacle environments and write them as text files
//   gen-data  run the expert planner over sampled environments -> dataset
//   train     fit the noise-prediction network on a dataset
//   sample    draw a trajectory batch for one problem from a checkpoint
//   eval      benchmark a checkpoint on held-out problems
//   plot      render artifacts (environment + batch, or CSV curves) to SVG
//
// Flags override values from --config; every run writes a manifest with the
// fully resolved configuration next to its outputs.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "campd/config.hpp"
#include "campd/dataset.hpp"
#include "campd/evaluation.hpp"
#include "campd/geometry.hpp"
#include "campd/inference.hpp"
#include "campd/model.hpp"
#include "campd/parallel.hpp"
#include "campd/rng.hpp"
#include "campd/svg.hpp"
#include "campd/training.hpp"

namespace fs = std::filesystem;
using namespace campd;

namespace {

// Raw flag text captured per config key; merged over the config file so the
// same typed parser (config_from_map) handles both sources.
struct FlagOverrides {
  std::string config_path;
  std::map<std::string, std::string> values;
};

void add_cfg_option(CLI::App* cmd, FlagOverrides& fo, const std::string& flag,
                    const std::string& key, const std::string& desc) {
  cmd->add_option_function<std::string>(
      flag, [&fo, key](const std::string& v) { fo.values[key] = v; }, desc);
}

// Registers --config plus the stable tuning flags shared by all subcommands.
void add_common_flags(CLI::App* cmd, FlagOverrides& fo) {
  cmd->add_option("--config", fo.config_path, "key = value config file");
  add_cfg_option(cmd, fo, "--seed", "seed", "master RNG seed");
  add_cfg_option(cmd, fo, "--robot", "robot", "robot kind: point2d | arm2");
  add_cfg_option(cmd, fo, "--n-envs", "n_envs", "number of environments");
  add_cfg_option(cmd, fo, "--horizon", "horizon", "waypoints per trajectory");
  add_cfg_option(cmd, fo, "--steps", "steps", "optimization steps");
  add_cfg_option(cmd, fo, "--batch", "batch", "training batch size");
  add_cfg_option(cmd, fo, "--sampler", "sampler", "reverse sampler: ddim | ddpm");
  add_cfg_option(cmd, fo, "--t-inf", "t_inf", "reverse diffusion steps");
  add_cfg_option(cmd, fo, "--w", "w", "guidance strength");
  add_cfg_option(cmd, fo, "--p-d", "p_d", "context dropout probability");
  add_cfg_option(cmd, fo, "--sigma", "sigma", "trajectory smoother width");
  add_cfg_option(cmd, fo, "--window", "window", "trajectory smoother window (odd)");
  add_cfg_option(cmd, fo, "--n-batch", "n_batch", "samples per inference batch");
  add_cfg_option(cmd, fo, "--n-problems", "n_problems", "evaluation problem count");
  add_cfg_option(cmd, fo, "--baseline", "baseline", "also run the expert baseline");
}

RunConfig resolve_config(const FlagOverrides& fo) {
  std::map<std::string, std::string> kv;
  if (!fo.config_path.empty()) kv = load_key_values(fo.config_path);
  for (const auto& [k, v] : fo.values) kv[k] = v;  // flags win
  RunConfig cfg = config_from_map(kv);
  validate_config(cfg);
  return cfg;
}

std::vector<std::string> manifest_inputs(const FlagOverrides& fo,
                                         std::vector<std::string> extra = {}) {
  std::vector<std::string> in;
  if (!fo.config_path.empty()) in.push_back(fo.config_path);
  for (auto& e : extra) in.push_back(std::move(e));
  return in;
}

EnvSampleParams env_params_from(const RunConfig& cfg) {
  EnvSampleParams ep;
  ep.r_min = cfg.r_min;
  ep.r_max = cfg.r_max;
  ep.clearance = cfg.clearance;
  return ep;
}

InferenceConfig inference_from(const RunConfig& cfg) {
  InferenceConfig ic;
  ic.sampler = cfg.sampler;
  ic.T_inf = cfg.t_inf;
  ic.w = cfg.w;
  ic.eta = cfg.eta;
  ic.n_batch = cfg.n_batch;
  ic.smooth_sigma = cfg.sigma;
  ic.smooth_window = cfg.window;
  ic.seed = cfg.seed;
  return ic;
}

ModelConfig model_from(const RunConfig& cfg, const Dataset& ds) {
  ModelConfig mc;
  if (cfg.model_size == "desk") {
    mc = ModelConfig::desk();
  } else if (cfg.model_size == "paper") {
    mc = ModelConfig::paper();
  } else {
    mc = ModelConfig::tiny();
  }
  mc.H = ds.H;
  mc.d_q = ds.d_q;
  mc.T_train = cfg.t_train;
  mc.context_dims.clear();
  for (const auto& t : ds.norm.types) mc.context_dims.push_back(t.dim());
  mc.validate();
  return mc;
}

// The checkpoint is authoritative for what the network was trained with;
// reflect that into the resolved config so the manifest records the truth.
void align_with_checkpoint(RunConfig& cfg, const Checkpoint& ckpt) {
  cfg.robot = robot_kind_name(ckpt.robot);
  cfg.horizon = ckpt.config.H;
  cfg.t_train = ckpt.config.T_train;
  cfg.schedule = ckpt.schedule_kind;
  validate_config(cfg);
}

std::vector<double> parse_point(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError(flag + ": expected comma-separated numbers, got \"" + text + "\"");
    }
  }
  if (out.empty()) throw ConfigError(flag + ": empty coordinate list");
  return out;
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// ---------------------------------------------------------------- gen-env --

int cmd_gen_env(const FlagOverrides& fo, const std::string& out_dir) {
  RunConfig cfg = resolve_config(fo);
  fs::create_directories(out_dir);
  RobotKind kind = robot_kind_from(cfg.robot);
  EnvSampleParams ep = env_params_from(cfg);
  std::vector<std::string> outputs;
  for (int i = 0; i < cfg.n_envs; ++i) {
    Environment env = sample_environment(mix_seed(cfg.seed, static_cast<uint64_t>(i)), ep);
    char name[32];
    std::snprintf(name, sizeof(name), "env_%05d.txt", i);
    std::string path = join_path(out_dir, name);
    save_env_file(path, env, kind);
    outputs.push_back(path);
  }
  write_manifest(join_path(out_dir, "manifest.json"), "gen-env", cfg,
                 manifest_inputs(fo), outputs);
  std::printf("wrote %d environment files to %s\n", cfg.n_envs, out_dir.c_str());
  return 0;
}

// --------------------------------------------------------------- gen-data --

int cmd_gen_data(const FlagOverrides& fo, const std::string& out_dir) {
  RunConfig cfg = resolve_config(fo);
  fs::create_directories(out_dir);
  GenParams gp;
  gp.robot = robot_kind_from(cfg.robot);
  gp.n_envs = cfg.n_envs;
  gp.problems_per_env = cfg.problems_per_env;
  gp.trajs_per_problem = cfg.trajs_per_problem;
  gp.H = cfg.horizon;
  gp.seed = cfg.seed;
  gp.min_separation = cfg.min_separation;
  gp.env_params = env_params_from(cfg);

  GenStats stats;
  Dataset ds = generate_dataset(gp, &stats);
  std::string data_path = join_path(out_dir, "dataset.bin");
  save_dataset(data_path, ds);

  // JSON-lines stats sidecar: one object per counter, failure reasons inline.
  std::string stats_path = join_path(out_dir, "gen_stats.jsonl");
  {
    std::ofstream os(stats_path);
    os << "{\"stat\":\"attempted\",\"count\":" << stats.attempted << "}\n"
       << "{\"stat\":\"succeeded\",\"count\":" << stats.succeeded << "}\n"
       << "{\"stat\":\"plan_failures\",\"count\":" << stats.plan_failures
       << ",\"reason\":\"expert planner exhausted its iteration budget\"}\n"
       << "{\"stat\":\"resample_collisions\",\"count\":" << stats.resample_collisions
       << ",\"reason\":\"resampled waypoint re-check hit an obstacle\"}\n"
       << "{\"stat\":\"problem_failures\",\"count\":" << stats.problem_failures
       << ",\"reason\":\"start/goal sampling exhausted its attempts\"}\n";
    if (!os) throw ConfigError("cannot write " + stats_path);
  }
  write_manifest(join_path(out_dir, "manifest.json"), "gen-data", cfg,
                 manifest_inputs(fo), {data_path, stats_path});
  std::printf("dataset: %s (%zu records; %lld planned, %lld plan failures)\n",
              data_path.c_str(), ds.records.size(),
              static_cast<long long>(stats.attempted),
              static_cast<long long>(stats.plan_failures));
  return 0;
}

// ------------------------------------------------------------------ train --

int cmd_train(const FlagOverrides& fo, const std::string& data_path,
              const std::string& out_dir) {
  RunConfig cfg = resolve_config(fo);
  Dataset ds = load_dataset(data_path);
  cfg.robot = robot_kind_name(ds.robot);
  cfg.horizon = ds.H;
  validate_config(cfg);

  ModelConfig mc = model_from(cfg, ds);
  TrainConfig tc;
  tc.batch_size = cfg.batch;
  tc.lr = cfg.lr;
  tc.p_d = cfg.p_d;
  tc.total_steps = cfg.steps;
  tc.checkpoint_every = cfg.checkpoint_every;
  tc.seed = cfg.seed;
  tc.schedule_kind = cfg.schedule;

  TrainResult res = train_loop(ds, mc, tc, out_dir);
  write_manifest(join_path(out_dir, "manifest.json"), "train", cfg,
                 manifest_inputs(fo, {data_path}),
                 {res.checkpoint_path, res.loss_log_path});
  std::printf("trained %d steps; final loss %.6g\ncheckpoint: %s\n",
              cfg.steps, res.losses.back(), res.checkpoint_path.c_str());
  return 0;
}

// ----------------------------------------------------------------- sample --

int cmd_sample(const FlagOverrides& fo, const std::string& ckpt_path,
               const std::string& env_path, const std::string& start_text,
               const std::string& goal_text, const std::string& out_dir) {
  RunConfig cfg = resolve_config(fo);
  Checkpoint ckpt = load_model_checkpoint(ckpt_path);
  align_with_checkpoint(cfg, ckpt);

  RobotKind env_kind;
  Environment env = load_env_file(env_path, &env_kind);
  if (env_kind != ckpt.robot)
    throw ConfigError("environment robot kind (" + robot_kind_name(env_kind) +
                      ") does not match checkpoint (" + robot_kind_name(ckpt.robot) + ")");
  RobotModel robot = ckpt.robot == RobotKind::point2d ? RobotModel::point2d()
                                                      : RobotModel::arm2();

  PlanningProblem problem;
  problem.env = env;
  if (!start_text.empty() || !goal_text.empty()) {
    if (start_text.empty() || goal_text.empty())
      throw ConfigError("--start and --goal must be given together");
    problem.q_start = parse_point(start_text, "--start");
    problem.q_goal = parse_point(goal_text, "--goal");
  } else {
    PlanningProblem drawn =
        sample_problem(env, robot, mix_seed(cfg.seed, 0x5A3Bu), cfg.min_separation);
    problem.q_start = drawn.q_start;
    problem.q_goal = drawn.q_goal;
  }

  Model model(ckpt.config, ckpt.weights);
  NoiseSchedule sched = build_schedule(ckpt.schedule_kind, ckpt.config.T_train);
  InferenceConfig ic = inference_from(cfg);
  TimedBatch batch = timed_batch(model, ckpt.norm, problem,
                                 context_from_env(env), sched, ic);

  fs::create_directories(out_dir);
  std::string bin_path = join_path(out_dir, "trajectories.bin");
  std::string csv_path = join_path(out_dir, "trajectories.csv");
  save_trajectory_batch(bin_path, batch.trajs, ckpt.config.H, ckpt.config.d_q);
  export_trajectory_csv(csv_path, batch.trajs, ckpt.config.H, ckpt.config.d_q);
  write_manifest(join_path(out_dir, "manifest.json"), "sample", cfg,
                 manifest_inputs(fo, {ckpt_path, env_path}), {bin_path, csv_path});
  std::printf("sampled %zu trajectories (H=%d, d_q=%d) in %.3f s -> %s\n",
              batch.trajs.size(), ckpt.config.H, ckpt.config.d_q, batch.seconds,
              bin_path.c_str());
  return 0;
}

// ------------------------------------------------------------------- eval --

int cmd_eval(const FlagOverrides& fo, const std::string& ckpt_path,
             const std::string& out_dir) {
  RunConfig cfg = resolve_config(fo);
  Checkpoint ckpt = load_model_checkpoint(ckpt_path);
  align_with_checkpoint(cfg, ckpt);
  RobotModel robot = ckpt.robot == RobotKind::point2d ? RobotModel::point2d()
                                                      : RobotModel::arm2();

  // Held-out problems: a fresh environment stream keyed off the eval seed,
  // disjoint from any training seed by construction of the mix.
  EnvSampleParams ep = env_params_from(cfg);
  uint64_t base = mix_seed(cfg.seed, 0xE7A1u);
  std::vector<PlanningProblem> problems;
  problems.reserve(cfg.n_problems);
  for (int i = 0; i < cfg.n_problems; ++i) {
    Environment env = sample_environment(mix_seed(base, 2 * static_cast<uint64_t>(i)), ep);
    problems.push_back(sample_problem(env, robot,
                                      mix_seed(base, 2 * static_cast<uint64_t>(i) + 1),
                                      cfg.min_separation));
  }

  BenchmarkConfig bc;
  bc.inference = inference_from(cfg);
  bc.resolution = cfg.resolution;
  bc.run_baseline = cfg.baseline;
  bc.baseline_seed = mix_seed(cfg.seed, 0xBA5Eu);
  bc.threads = max_threads();

  fs::create_directories(out_dir);
  std::string csv_path = join_path(out_dir, "eval.csv");
  EvalReport report = run_benchmark(ckpt, problems, bc, csv_path);

  std::vector<std::string> outputs = {csv_path, join_path(out_dir, "eval_summary.txt")};
  if (cfg.baseline) outputs.push_back(join_path(out_dir, "eval_baseline.csv"));
  write_manifest(join_path(out_dir, "manifest.json"), "eval", cfg,
                 manifest_inputs(fo, {ckpt_path}), outputs);
  std::fputs(format_summary(report).c_str(), stdout);
  return 0;
}

// ------------------------------------------------------------------- plot --

std::vector<CurveSeries> curves_from_csv(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw ConfigError("cannot open " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(csv_path + ": empty file");
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) cols.push_back(tok);
  }
  if (cols.size() < 2)
    throw ConfigError(csv_path + ": need at least two columns to plot");

  std::vector<CurveSeries> series(cols.size() - 1);
  for (size_t c = 1; c < cols.size(); ++c) series[c - 1].label = cols[c];

  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<double> vals;
    while (std::getline(ss, tok, ',')) {
      try {
        vals.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ConfigError(csv_path + " line " + std::to_string(row) +
                          ": non-numeric cell \"" + tok + "\"");
      }
    }
    if (vals.size() != cols.size())
      throw ConfigError(csv_path + " line " + std::to_string(row) +
                        ": expected " + std::to_string(cols.size()) + " cells");
    for (size_t c = 1; c < vals.size(); ++c)
      if (std::isfinite(vals[c]))  // undefined metrics serialize as nan
        series[c - 1].points.emplace_back(vals[0], vals[c]);
  }
  series.erase(std::remove_if(series.begin(), series.end(),
                              [](const CurveSeries& s) { return s.points.empty(); }),
               series.end());
  if (series.empty()) throw ConfigError(csv_path + ": no plottable data rows");
  return series;
}

int cmd_plot(const FlagOverrides& fo, const std::string& env_path,
             const std::string& batch_path, const std::string& csv_path,
             std::string title, const std::string& out_path) {
  RunConfig cfg = resolve_config(fo);
  bool scene = !env_path.empty();
  bool curves = !csv_path.empty();
  if (scene == curves)
    throw ConfigError("plot needs either --env (scene) or --csv (curves), not both");

  std::string svg;
  std::vector<std::string> inputs;
  if (scene) {
    RobotKind kind;
    Environment env = load_env_file(env_path, &kind);
    RobotModel robot =
        kind == RobotKind::point2d ? RobotModel::point2d() : RobotModel::arm2();
    inputs.push_back(env_path);
    std::vector<std::vector<double>> trajs;
    const std::vector<double>*start = nullptr, *goal = nullptr;
    std::vector<double> s, g;
    if (!batch_path.empty()) {
      TrajectoryBatch batch = load_trajectory_batch(batch_path);
      inputs.push_back(batch_path);
      trajs = std::move(batch.trajs);
      if (!trajs.empty()) {
        // Sampled batches pin every trajectory to the same endpoints, so the
        // first one is representative.
        s.assign(trajs[0].begin(), trajs[0].begin() + batch.d_q);
        g.assign(trajs[0].end() - batch.d_q, trajs[0].end());
        start = &s;
        goal = &g;
      }
    }
    svg = render_env_svg(env, robot, trajs, start, goal);
  } else {
    if (!batch_path.empty())
      throw ConfigError("--batch applies to scene plots; use it with --env");
    if (title.empty()) title = fs::path(csv_path).stem().string();
    svg = render_curve_svg(curves_from_csv(csv_path), "", "", title);
    inputs.push_back(csv_path);
  }

  if (fs::path(out_path).has_parent_path())
    fs::create_directories(fs::path(out_path).parent_path());
  save_svg(out_path, svg);
  fs::path manifest = fs::path(out_path).parent_path() /
                      (fs::path(out_path).stem().string() + "_manifest.json");
  write_manifest(manifest.string(), "plot", cfg, manifest_inputs(fo, std::move(inputs)),
                 {out_path});
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"context-aware diffusion motion planning pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", campd_version());

  FlagOverrides fo_env, fo_data, fo_train, fo_sample, fo_eval, fo_plot;
  std::string out_env = "envs", out_data = "data", out_train = "runs/train";
  std::string out_sample = "runs/sample", out_eval = "runs/eval";
  std::string data_path, ckpt_train_out, ckpt_path_sample, ckpt_path_eval;
  std::string env_path_sample, start_text, goal_text;
  std::string plot_env, plot_batch, plot_csv, plot_title, plot_out = "plot.svg";

  CLI::App* c_env = app.add_subcommand("gen-env", "sample environments to text files");
  add_common_flags(c_env, fo_env);
  c_env->add_option("--out", out_env, "output directory");

  CLI::App* c_data = app.add_subcommand("gen-data", "generate an expert dataset");
  add_common_flags(c_data, fo_data);
  c_data->add_option("--out", out_data, "output directory");

  CLI::App* c_train = app.add_subcommand("train", "train the denoiser on a dataset");
  add_common_flags(c_train, fo_train);
  c_train->add_option("--data", data_path, "dataset file from gen-data")->required();
  c_train->add_option("--out", out_train, "output directory");

  CLI::App* c_sample = app.add_subcommand("sample", "sample trajectories for one problem");
  add_common_flags(c_sample, fo_sample);
  c_sample->add_option("--ckpt", ckpt_path_sample, "model checkpoint")->required();
  c_sample->add_option("--env", env_path_sample, "environment file")->required();
  c_sample->add_option("--start", start_text, "start configuration: x,y[,..]");
  c_sample->add_option("--goal", goal_text, "goal configuration: x,y[,..]");
  c_sample->add_option("--out", out_sample, "output directory");

  CLI::App* c_eval = app.add_subcommand("eval", "benchmark on held-out problems");
  add_common_flags(c_eval, fo_eval);
  c_eval->add_option("--ckpt", ckpt_path_eval, "model checkpoint")->required();
  c_eval->add_option("--out", out_eval, "output directory");

  // plot reads only serialized artifacts, so it skips the tuning flags (and
  // its --batch names a file, not a size).
  CLI::App* c_plot = app.add_subcommand("plot", "render artifacts to SVG");
  c_plot->add_option("--config", fo_plot.config_path, "key = value config file");
  add_cfg_option(c_plot, fo_plot, "--seed", "seed", "master RNG seed");
  c_plot->add_option("--env", plot_env, "environment file (scene mode)");
  c_plot->add_option("--batch", plot_batch, "trajectory batch file (scene mode)");
  c_plot->add_option("--csv", plot_csv, "metric/loss CSV (curve mode)");
  c_plot->add_option("--title", plot_title, "curve chart title");
  c_plot->add_option("--out", plot_out, "output SVG path");

  CLI11_PARSE(app, argc, argv);

  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    if (c_env->parsed()) return cmd_gen_env(fo_env, out_env);
    if (c_data->parsed()) return cmd_gen_data(fo_data, out_data);
    if (c_train->parsed()) return cmd_train(fo_train, data_path, out_train);
    if (c_sample->parsed())
      return cmd_sample(fo_sample, ckpt_path_sample, env_path_sample, start_text,
                        goal_text, out_sample);
    if (c_eval->parsed()) return cmd_eval(fo_eval, ckpt_path_eval, out_eval);
    if (c_plot->parsed())
      return cmd_plot(fo_plot, plot_env, plot_batch, plot_csv, plot_title, plot_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "campd %s: %s\n", sub.c_str(), e.what());
    return 1;
  }
  std::fprintf(stderr, "campd: no subcommand\n");
  return 1;
}
