// Python bindings: numpy-facing wrappers over the pipeline's main
// operations (environment sampling, expert planning, dataset generation,
// training, diffusion sampling, metrics, rendering).
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "campd/config.hpp"
#include "campd/dataset.hpp"
#include "campd/evaluation.hpp"
#include "campd/geometry.hpp"
#include "campd/inference.hpp"
#include "campd/model.hpp"
#include "campd/planner.hpp"
#include "campd/svg.hpp"
#include "campd/training.hpp"

namespace py = pybind11;
using namespace campd;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const DArray& a, const char* what) {
  py::buffer_info info = a.request();
  if (info.ndim != 1)
    throw py::value_error(std::string(what) + ": expected a 1-D array");
  const double* p = static_cast<const double*>(info.ptr);
  return std::vector<double>(p, p + info.shape[0]);
}

// [H, d_q] -> flat row-major vector.
std::vector<double> traj_to_flat(const DArray& a, int* H, int* d_q, const char* what) {
  py::buffer_info info = a.request();
  if (info.ndim != 2)
    throw py::value_error(std::string(what) + ": expected a 2-D [H, d_q] array");
  *H = static_cast<int>(info.shape[0]);
  *d_q = static_cast<int>(info.shape[1]);
  const double* p = static_cast<const double*>(info.ptr);
  return std::vector<double>(p, p + info.shape[0] * info.shape[1]);
}

// [N, H, d_q] -> one flat vector per trajectory.
std::vector<std::vector<double>> batch_to_flat(const DArray& a, int* H, int* d_q) {
  py::buffer_info info = a.request();
  if (info.ndim != 3)
    throw py::value_error("trajs: expected a 3-D [N, H, d_q] array");
  *H = static_cast<int>(info.shape[1]);
  *d_q = static_cast<int>(info.shape[2]);
  const double* p = static_cast<const double*>(info.ptr);
  std::vector<std::vector<double>> out(info.shape[0]);
  size_t stride = static_cast<size_t>(info.shape[1] * info.shape[2]);
  for (py::ssize_t n = 0; n < info.shape[0]; ++n)
    out[n].assign(p + n * stride, p + (n + 1) * stride);
  return out;
}

py::array flat_to_traj(const std::vector<double>& flat, int H, int d_q) {
  py::array_t<double> out({H, d_q});
  std::copy(flat.begin(), flat.end(), out.mutable_data());
  return out;
}

py::array flat_to_batch(const std::vector<std::vector<double>>& trajs, int H, int d_q) {
  py::array_t<double> out({static_cast<int>(trajs.size()), H, d_q});
  double* p = out.mutable_data();
  for (const auto& t : trajs) p = std::copy(t.begin(), t.end(), p);
  return out;
}

RobotModel robot_from_name(const std::string& name) {
  return robot_kind_from(name) == RobotKind::point2d ? RobotModel::point2d()
                                                     : RobotModel::arm2();
}

PlanningProblem make_problem(const Environment& env, const DArray& start,
                             const DArray& goal) {
  PlanningProblem p;
  p.env = env;
  p.q_start = to_vector(start, "start");
  p.q_goal = to_vector(goal, "goal");
  return p;
}

EnvSampleParams env_params(int n_min, int n_max, double r_min, double r_max,
                           double clearance) {
  EnvSampleParams ep;
  ep.n_min = n_min;
  ep.n_max = n_max;
  ep.r_min = r_min;
  ep.r_max = r_max;
  ep.clearance = clearance;
  return ep;
}

py::dict metrics_to_dict(const ProblemMetrics& m) {
  py::dict d;
  d["success"] = m.success;
  d["ftr"] = m.ftr;
  d["n_feasible"] = m.n_feasible;
  d["time_s"] = m.time_s;
  d["var"] = m.var_defined ? py::object(py::float_(m.var)) : py::object(py::none());
  d["bsd"] = m.bsd_defined ? py::object(py::float_(m.bsd)) : py::object(py::none());
  d["best_smoothness"] = m.best_index >= 0 ? py::object(py::float_(m.best_smoothness))
                                           : py::object(py::none());
  d["best_index"] = m.best_index >= 0 ? py::object(py::int_(m.best_index))
                                      : py::object(py::none());
  return d;
}

py::dict aggregate_to_dict(const MetricAggregate& a) {
  py::dict d;
  d["mean"] = a.mean;
  d["stddev"] = a.stddev;
  d["n"] = a.n;
  return d;
}

InferenceConfig make_inference_config(const std::string& sampler, int t_inf, double w,
                                      double eta, int n_batch, double sigma,
                                      int window, uint64_t seed) {
  InferenceConfig ic;
  ic.sampler = sampler;
  ic.T_inf = t_inf;
  ic.w = w;
  ic.eta = eta;
  ic.n_batch = n_batch;
  ic.smooth_sigma = sigma;
  ic.smooth_window = window;
  ic.seed = seed;
  return ic;
}

}  // namespace

PYBIND11_MODULE(_campd, m) {
  m.doc() = "Context-aware diffusion motion planning (C++ core)";
  m.attr("__version__") = campd_version();

  m.def("version", &campd_version, "Build version string");

  py::class_<Environment>(m, "Environment",
                          "Axis-aligned workspace with disc obstacles")
      .def(py::init<>())
      .def_property(
          "bounds",
          [](const Environment& e) {
            return py::make_tuple(e.bounds[0], e.bounds[1], e.bounds[2], e.bounds[3]);
          },
          [](Environment& e, py::sequence s) {
            if (py::len(s) != 4)
              throw py::value_error("bounds: expected (xmin, ymin, xmax, ymax)");
            for (int i = 0; i < 4; ++i) e.bounds[i] = s[i].cast<double>();
          })
      .def_property(
          "obstacles",
          [](const Environment& e) {
            py::array_t<double> out({static_cast<int>(e.obstacles.size()), 3});
            double* p = out.mutable_data();
            for (const auto& o : e.obstacles) {
              *p++ = o.x;
              *p++ = o.y;
              *p++ = o.r;
            }
            return out;
          },
          [](Environment& e, DArray a) {
            py::buffer_info info = a.request();
            if (info.ndim != 2 || info.shape[1] != 3)
              throw py::value_error("obstacles: expected an [N, 3] array of x, y, r");
            const double* p = static_cast<const double*>(info.ptr);
            e.obstacles.clear();
            for (py::ssize_t i = 0; i < info.shape[0]; ++i)
              e.obstacles.push_back({p[3 * i], p[3 * i + 1], p[3 * i + 2]});
          })
      .def_readwrite("seed", &Environment::seed)
      .def(
          "to_text",
          [](const Environment& e, const std::string& robot) {
            return env_to_text(e, robot_kind_from(robot));
          },
          py::arg("robot") = "point2d")
      .def_static(
          "from_text",
          [](const std::string& text) {
            RobotKind kind;
            Environment env = env_from_text(text, &kind);
            return py::make_tuple(env, robot_kind_name(kind));
          },
          "Parse the text format; returns (env, robot_kind)")
      .def(
          "save",
          [](const Environment& e, const std::string& path, const std::string& robot) {
            save_env_file(path, e, robot_kind_from(robot));
          },
          py::arg("path"), py::arg("robot") = "point2d")
      .def_static("load", [](const std::string& path) {
        RobotKind kind;
        Environment env = load_env_file(path, &kind);
        return py::make_tuple(env, robot_kind_name(kind));
      });

  m.def(
      "sample_environment",
      [](uint64_t seed, int n_min, int n_max, double r_min, double r_max,
         double clearance) {
        return sample_environment(seed, env_params(n_min, n_max, r_min, r_max, clearance));
      },
      py::arg("seed"), py::arg("n_min") = 1, py::arg("n_max") = 5,
      py::arg("r_min") = 0.05, py::arg("r_max") = 0.15, py::arg("clearance") = 0.1,
      "Rejection-sample disc obstacles; deterministic per seed");

  m.def(
      "sample_problem",
      [](const Environment& env, const std::string& robot, uint64_t seed,
         double min_separation) {
        PlanningProblem p = sample_problem(env, robot_from_name(robot), seed, min_separation);
        int d = static_cast<int>(p.q_start.size());
        py::array_t<double> s(d), g(d);
        std::copy(p.q_start.begin(), p.q_start.end(), s.mutable_data());
        std::copy(p.q_goal.begin(), p.q_goal.end(), g.mutable_data());
        return py::make_tuple(s, g);
      },
      py::arg("env"), py::arg("robot"), py::arg("seed"),
      py::arg("min_separation") = 0.4,
      "Collision-free start/goal pair; returns (start, goal)");

  m.def(
      "config_in_collision",
      [](const DArray& q, const Environment& env, const std::string& robot,
         double padding) {
        std::vector<double> qv = to_vector(q, "q");
        RobotModel rm = robot_from_name(robot);
        if (static_cast<int>(qv.size()) != rm.d_q)
          throw py::value_error("q: wrong dimension for robot");
        return config_in_collision(rm, qv.data(), env, padding);
      },
      py::arg("q"), py::arg("env"), py::arg("robot") = "point2d",
      py::arg("padding") = 0.0);

  m.def(
      "segment_in_collision",
      [](const DArray& qa, const DArray& qb, const Environment& env,
         const std::string& robot, double resolution, double padding) {
        std::vector<double> a = to_vector(qa, "qa"), b = to_vector(qb, "qb");
        RobotModel rm = robot_from_name(robot);
        if (static_cast<int>(a.size()) != rm.d_q || a.size() != b.size())
          throw py::value_error("qa/qb: wrong dimension for robot");
        return segment_in_collision(rm, a.data(), b.data(), env, resolution, padding);
      },
      py::arg("qa"), py::arg("qb"), py::arg("env"), py::arg("robot") = "point2d",
      py::arg("resolution") = 0.01, py::arg("padding") = 0.0);

  m.def(
      "plan_expert",
      [](const Environment& env, const std::string& robot, const DArray& start,
         const DArray& goal, int horizon, uint64_t seed, double step_size,
         int max_iters, int shortcut_iters, double resolution, double padding) {
        PlanningProblem p = make_problem(env, start, goal);
        PlannerParams pp;
        pp.step_size = step_size;
        pp.max_iters = max_iters;
        pp.shortcut_iters = shortcut_iters;
        pp.resolution = resolution;
        pp.padding = padding;
        Path path;
        {
          py::gil_scoped_release release;
          path = plan_expert(robot_from_name(robot), p, pp, horizon, seed);
        }
        return flat_to_traj(path.pts, horizon, path.d_q);
      },
      py::arg("env"), py::arg("robot"), py::arg("start"), py::arg("goal"),
      py::arg("horizon"), py::arg("seed"), py::arg("step_size") = 0.05,
      py::arg("max_iters") = 5000, py::arg("shortcut_iters") = 200,
      py::arg("resolution") = 0.01, py::arg("padding") = 0.01,
      "Expert demonstration resampled to `horizon` waypoints");

  m.def(
      "generate_dataset",
      [](const std::string& out_path, const std::string& robot, int n_envs,
         int problems_per_env, int trajs_per_problem, int horizon, uint64_t seed,
         double min_separation, int n_min, int n_max, double r_min, double r_max,
         double clearance) {
        GenParams gp;
        gp.robot = robot_kind_from(robot);
        gp.n_envs = n_envs;
        gp.problems_per_env = problems_per_env;
        gp.trajs_per_problem = trajs_per_problem;
        gp.H = horizon;
        gp.seed = seed;
        gp.min_separation = min_separation;
        gp.env_params = env_params(n_min, n_max, r_min, r_max, clearance);
        GenStats stats;
        {
          py::gil_scoped_release release;
          Dataset ds = generate_dataset(gp, &stats);
          save_dataset(out_path, ds);
        }
        py::dict d;
        d["attempted"] = stats.attempted;
        d["succeeded"] = stats.succeeded;
        d["plan_failures"] = stats.plan_failures;
        d["resample_collisions"] = stats.resample_collisions;
        d["problem_failures"] = stats.problem_failures;
        return d;
      },
      py::arg("out_path"), py::arg("robot") = "point2d", py::arg("n_envs") = 2000,
      py::arg("problems_per_env") = 2, py::arg("trajs_per_problem") = 10,
      py::arg("horizon") = 64, py::arg("seed") = 0, py::arg("min_separation") = 0.4,
      py::arg("n_min") = 1, py::arg("n_max") = 5, py::arg("r_min") = 0.05,
      py::arg("r_max") = 0.15, py::arg("clearance") = 0.1,
      "Expert dataset over procedurally sampled environments; returns stats");

  m.def(
      "dataset_info",
      [](const std::string& path) {
        Dataset ds = load_dataset(path);
        int64_t n_envs = 0;
        for (const auto& r : ds.records) n_envs = std::max(n_envs, r.env_id + 1);
        py::dict d;
        d["robot"] = robot_kind_name(ds.robot);
        d["H"] = ds.H;
        d["d_q"] = ds.d_q;
        d["n_records"] = ds.records.size();
        d["n_envs"] = n_envs;
        return d;
      },
      py::arg("path"), "Header summary of a dataset file");

  m.def(
      "train",
      [](const std::string& data_path, const std::string& out_dir,
         const std::string& model_size, int t_train, int steps, int batch, double lr,
         double p_d, const std::string& schedule, int checkpoint_every, uint64_t seed) {
        TrainResult res;
        {
          py::gil_scoped_release release;
          Dataset ds = load_dataset(data_path);
          ModelConfig mc = model_size == "desk"    ? ModelConfig::desk()
                           : model_size == "paper" ? ModelConfig::paper()
                                                   : ModelConfig::tiny();
          mc.H = ds.H;
          mc.d_q = ds.d_q;
          mc.T_train = t_train;
          mc.context_dims.clear();
          for (const auto& t : ds.norm.types) mc.context_dims.push_back(t.dim());
          mc.validate();
          TrainConfig tc;
          tc.batch_size = batch;
          tc.lr = lr;
          tc.p_d = p_d;
          tc.total_steps = steps;
          tc.checkpoint_every = checkpoint_every;
          tc.seed = seed;
          tc.schedule_kind = schedule;
          res = train_loop(ds, mc, tc, out_dir);
        }
        py::dict d;
        d["checkpoint"] = res.checkpoint_path;
        d["loss_log"] = res.loss_log_path;
        d["final_loss"] = res.losses.back();
        py::array_t<double> losses(static_cast<py::ssize_t>(res.losses.size()));
        std::copy(res.losses.begin(), res.losses.end(), losses.mutable_data());
        d["losses"] = losses;
        return d;
      },
      py::arg("data_path"), py::arg("out_dir"), py::arg("model_size") = "desk",
      py::arg("t_train") = 25, py::arg("steps") = 5000, py::arg("batch") = 128,
      py::arg("lr") = 1e-4, py::arg("p_d") = 0.33, py::arg("schedule") = "cosine",
      py::arg("checkpoint_every") = 1000, py::arg("seed") = 0,
      "Fit the denoiser on a dataset file; writes checkpoint + loss log");

  m.def(
      "sample",
      [](const std::string& ckpt_path, const Environment& env, const DArray& start,
         const DArray& goal, const std::string& sampler, int t_inf, double w,
         double eta, int n_batch, double sigma, int window, uint64_t seed) {
        PlanningProblem p = make_problem(env, start, goal);
        InferenceConfig ic =
            make_inference_config(sampler, t_inf, w, eta, n_batch, sigma, window, seed);
        std::vector<std::vector<double>> trajs;
        int H, d_q;
        {
          py::gil_scoped_release release;
          Checkpoint ckpt = load_model_checkpoint(ckpt_path);
          Model model(ckpt.config, ckpt.weights);
          NoiseSchedule sched = build_schedule(ckpt.schedule_kind, ckpt.config.T_train);
          trajs = sample_trajectories(model, ckpt.norm, p, context_from_env(env),
                                      sched, ic);
          H = ckpt.config.H;
          d_q = ckpt.config.d_q;
        }
        return flat_to_batch(trajs, H, d_q);
      },
      py::arg("ckpt_path"), py::arg("env"), py::arg("start"), py::arg("goal"),
      py::arg("sampler") = "ddim", py::arg("t_inf") = 10, py::arg("w") = 1.5,
      py::arg("eta") = 0.0, py::arg("n_batch") = 50, py::arg("sigma") = 2.0,
      py::arg("window") = 7, py::arg("seed") = 0,
      "Draw a guided trajectory batch; returns [n_batch, H, d_q]");

  m.def(
      "evaluate",
      [](const std::string& ckpt_path, const py::list& problems,
         const std::string& out_csv, const std::string& sampler, int t_inf, double w,
         double eta, int n_batch, double sigma, int window, double resolution,
         bool baseline, uint64_t seed, int threads) {
        std::vector<PlanningProblem> probs;
        for (const auto& item : problems) {
          py::tuple t = item.cast<py::tuple>();
          if (t.size() != 3)
            throw py::value_error("problems: expected (env, start, goal) tuples");
          probs.push_back(make_problem(t[0].cast<Environment>(), t[1].cast<DArray>(),
                                       t[2].cast<DArray>()));
        }
        EvalReport rep;
        {
          py::gil_scoped_release release;
          Checkpoint ckpt = load_model_checkpoint(ckpt_path);
          BenchmarkConfig bc;
          bc.inference =
              make_inference_config(sampler, t_inf, w, eta, n_batch, sigma, window, seed);
          bc.resolution = resolution;
          bc.run_baseline = baseline;
          bc.baseline_seed = mix_seed(seed, 0xBA5Eu);
          bc.threads = threads;
          rep = run_benchmark(ckpt, probs, bc, out_csv);
        }
        py::dict d;
        d["success_rate"] = rep.success_rate;
        d["time_s"] = aggregate_to_dict(rep.time_s);
        d["ftr"] = aggregate_to_dict(rep.ftr);
        d["bsd"] = aggregate_to_dict(rep.bsd);
        d["var"] = aggregate_to_dict(rep.var);
        py::list rows;
        for (const auto& r : rep.rows) rows.append(metrics_to_dict(r));
        d["rows"] = rows;
        if (rep.has_baseline) {
          d["baseline_success_rate"] = rep.baseline_success_rate;
          d["baseline_ftr"] = aggregate_to_dict(rep.baseline_ftr);
          d["baseline_time_s"] = aggregate_to_dict(rep.baseline_time_s);
        }
        return d;
      },
      py::arg("ckpt_path"), py::arg("problems"), py::arg("out_csv"),
      py::arg("sampler") = "ddim", py::arg("t_inf") = 10, py::arg("w") = 1.5,
      py::arg("eta") = 0.0, py::arg("n_batch") = 50, py::arg("sigma") = 2.0,
      py::arg("window") = 7, py::arg("resolution") = 0.01, py::arg("baseline") = false,
      py::arg("seed") = 0, py::arg("threads") = 1,
      "Benchmark a checkpoint on (env, start, goal) problems; writes CSV reports");

  m.def(
      "smoothness",
      [](const DArray& traj) {
        int H, d_q;
        std::vector<double> flat = traj_to_flat(traj, &H, &d_q, "traj");
        return smoothness(flat, d_q);
      },
      py::arg("traj"), "Sum of squared second differences over interior waypoints");

  m.def(
      "is_feasible",
      [](const DArray& traj, const Environment& env, const std::string& robot,
         const DArray& start, const DArray& goal, double resolution) {
        int H, d_q;
        std::vector<double> flat = traj_to_flat(traj, &H, &d_q, "traj");
        return is_feasible(flat, make_problem(env, start, goal),
                           robot_from_name(robot), resolution);
      },
      py::arg("traj"), py::arg("env"), py::arg("robot"), py::arg("start"),
      py::arg("goal"), py::arg("resolution") = 0.01,
      "Endpoint match + joint limits + collision-free interpolation");

  m.def(
      "batch_metrics",
      [](const DArray& trajs, const Environment& env, const std::string& robot,
         const DArray& start, const DArray& goal, double resolution,
         std::optional<double> baseline_best) {
        int H, d_q;
        std::vector<std::vector<double>> batch = batch_to_flat(trajs, &H, &d_q);
        ProblemMetrics pm = batch_metrics(batch, make_problem(env, start, goal),
                                          robot_from_name(robot), resolution,
                                          baseline_best);
        return metrics_to_dict(pm);
      },
      py::arg("trajs"), py::arg("env"), py::arg("robot"), py::arg("start"),
      py::arg("goal"), py::arg("resolution") = 0.01,
      py::arg("baseline_best") = py::none(),
      "Feasibility, FTR, Var, best smoothness (and BSD given a baseline)");

  m.def(
      "gaussian_smooth",
      [](const DArray& traj, double sigma, int window) {
        int H, d_q;
        std::vector<double> flat = traj_to_flat(traj, &H, &d_q, "traj");
        return flat_to_traj(gaussian_filter(flat, H, d_q, sigma, window), H, d_q);
      },
      py::arg("traj"), py::arg("sigma") = 2.0, py::arg("window") = 7,
      "Endpoint-preserving Gaussian waypoint smoother");

  m.def(
      "render_env_svg",
      [](const Environment& env, const std::string& robot, const DArray& trajs,
         std::optional<DArray> start, std::optional<DArray> goal) {
        int H = 0, d_q = 0;
        std::vector<std::vector<double>> batch;
        if (trajs.ndim() == 3) {
          batch = batch_to_flat(trajs, &H, &d_q);
        } else if (trajs.size() > 0) {
          batch.push_back(traj_to_flat(trajs, &H, &d_q, "trajs"));
        }
        std::vector<double> s, g;
        if (start) s = to_vector(*start, "start");
        if (goal) g = to_vector(*goal, "goal");
        return render_env_svg(env, robot_from_name(robot), batch,
                              start ? &s : nullptr, goal ? &g : nullptr);
      },
      py::arg("env"), py::arg("robot"), py::arg("trajs"),
      py::arg("start") = py::none(), py::arg("goal") = py::none(),
      "Workspace scene as SVG text");
}
