#include "campd/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "campd/parallel.hpp"
#include "io_util.hpp"

namespace campd {

ContextSet context_from_env(const Environment& env) {
  ContextSet c;
  for (const auto& o : env.obstacles)
    c.items.push_back({kSphere2dType, {o.x, o.y, o.r}});
  return c;
}

namespace {

double affine_norm(double v, double lo, double hi) {
  return 2.0 * (v - lo) / (hi - lo) - 1.0;
}

double affine_denorm(double v, double lo, double hi) {
  return lo + (v + 1.0) * 0.5 * (hi - lo);
}

void check_unit(double v, const char* what) {
  if (!(std::abs(v) <= 1.0 + 1e-9))
    throw DatasetError(std::string("normalize: ") + what +
                       " out of range (normalized value " + std::to_string(v) +
                       ")");
}

}  // namespace

Normalizer Normalizer::fit(const RobotModel& robot, const Environment& workspace,
                           double r_min, double r_max) {
  Normalizer n;
  n.q_lo = robot.q_lo;
  n.q_hi = robot.q_hi;
  ContextTypeSpec sphere;
  sphere.name = "sphere2d";
  sphere.lo = {workspace.bounds[0], workspace.bounds[1], r_min};
  sphere.hi = {workspace.bounds[2], workspace.bounds[3], r_max};
  n.types.push_back(std::move(sphere));
  return n;
}

double Normalizer::normalize_q(double v, int dim) const {
  return affine_norm(v, q_lo[static_cast<size_t>(dim)], q_hi[static_cast<size_t>(dim)]);
}

double Normalizer::denormalize_q(double v, int dim) const {
  return affine_denorm(v, q_lo[static_cast<size_t>(dim)], q_hi[static_cast<size_t>(dim)]);
}

std::vector<double> Normalizer::normalize_traj(const std::vector<double>& traj) const {
  const size_t d = q_lo.size();
  if (d == 0 || traj.size() % d != 0)
    throw DatasetError("normalize_traj: length " + std::to_string(traj.size()) +
                       " is not a multiple of d_q " + std::to_string(d));
  std::vector<double> out(traj.size());
  for (size_t i = 0; i < traj.size(); ++i) {
    out[i] = normalize_q(traj[i], static_cast<int>(i % d));
    check_unit(out[i], "configuration");
  }
  return out;
}

std::vector<double> Normalizer::denormalize_traj(const std::vector<double>& traj) const {
  const size_t d = q_lo.size();
  if (d == 0 || traj.size() % d != 0)
    throw DatasetError("denormalize_traj: length " + std::to_string(traj.size()) +
                       " is not a multiple of d_q " + std::to_string(d));
  std::vector<double> out(traj.size());
  for (size_t i = 0; i < traj.size(); ++i)
    out[i] = denormalize_q(traj[i], static_cast<int>(i % d));
  return out;
}

ContextSet Normalizer::normalize_context(const ContextSet& c) const {
  ContextSet out;
  for (const auto& inst : c.items) {
    if (inst.type_id < 0 || inst.type_id >= static_cast<int>(types.size()))
      throw DatasetError("normalize: unregistered context type " +
                         std::to_string(inst.type_id));
    const auto& spec = types[static_cast<size_t>(inst.type_id)];
    if (static_cast<int>(inst.params.size()) != spec.dim())
      throw DatasetError("normalize: context params size " +
                         std::to_string(inst.params.size()) + " != " +
                         std::to_string(spec.dim()) + " for type " + spec.name);
    ContextInstance ni;
    ni.type_id = inst.type_id;
    for (size_t j = 0; j < inst.params.size(); ++j) {
      ni.params.push_back(affine_norm(inst.params[j], spec.lo[j], spec.hi[j]));
      check_unit(ni.params.back(), "context parameter");
    }
    out.items.push_back(std::move(ni));
  }
  return out;
}

ContextSet Normalizer::denormalize_context(const ContextSet& c) const {
  ContextSet out;
  for (const auto& inst : c.items) {
    const auto& spec = types.at(static_cast<size_t>(inst.type_id));
    ContextInstance ni;
    ni.type_id = inst.type_id;
    for (size_t j = 0; j < inst.params.size(); ++j)
      ni.params.push_back(affine_denorm(inst.params[j], spec.lo[j], spec.hi[j]));
    out.items.push_back(std::move(ni));
  }
  return out;
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[] = "CAMPDDS";
constexpr size_t kMagicLen = 7;
constexpr unsigned char kVersion = 1;
}  // namespace

void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DatasetError("cannot open for writing: " + path);
  f.write(kMagic, kMagicLen);
  f.put(static_cast<char>(kVersion));
  io::put_str(f, robot_kind_name(ds.robot));
  io::put_u32(f, static_cast<uint32_t>(ds.H));
  io::put_u32(f, static_cast<uint32_t>(ds.d_q));
  for (int i = 0; i < ds.d_q; ++i) io::put_f64(f, ds.norm.q_lo[static_cast<size_t>(i)]);
  for (int i = 0; i < ds.d_q; ++i) io::put_f64(f, ds.norm.q_hi[static_cast<size_t>(i)]);
  io::put_u32(f, static_cast<uint32_t>(ds.norm.types.size()));
  for (const auto& t : ds.norm.types) {
    io::put_str(f, t.name);
    io::put_u32(f, static_cast<uint32_t>(t.dim()));
    for (double v : t.lo) io::put_f64(f, v);
    for (double v : t.hi) io::put_f64(f, v);
  }
  io::put_u64(f, ds.records.size());
  const size_t traj_len = static_cast<size_t>(ds.H) * static_cast<size_t>(ds.d_q);
  for (const auto& r : ds.records) {
    if (r.traj.size() != traj_len)
      throw DatasetError("save_dataset: record trajectory has wrong length");
    io::put_u64(f, static_cast<uint64_t>(r.env_id));
    io::put_u64(f, static_cast<uint64_t>(r.problem_id));
    io::put_u64(f, r.seed);
    for (double v : r.traj) io::put_f64(f, v);
    io::put_u32(f, static_cast<uint32_t>(r.context.size()));
    for (const auto& inst : r.context.items) {
      io::put_u32(f, static_cast<uint32_t>(inst.type_id));
      const auto& spec = ds.norm.types.at(static_cast<size_t>(inst.type_id));
      if (static_cast<int>(inst.params.size()) != spec.dim())
        throw DatasetError("save_dataset: context params mismatch for type " +
                           spec.name);
      for (double v : inst.params) io::put_f64(f, v);
    }
  }
  if (!f) throw DatasetError("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DatasetError("cannot open: " + path);
  char magic[kMagicLen];
  if (!f.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw DatasetError("dataset file: bad magic");
  const int version = f.get();
  if (version != kVersion)
    throw DatasetError("dataset file: unsupported version " +
                       std::to_string(version));
  try {
    Dataset ds;
    ds.robot = robot_kind_from(io::get_str(f));
    ds.H = static_cast<int>(io::get_u32(f));
    ds.d_q = static_cast<int>(io::get_u32(f));
    ds.norm.q_lo.resize(static_cast<size_t>(ds.d_q));
    ds.norm.q_hi.resize(static_cast<size_t>(ds.d_q));
    for (auto& v : ds.norm.q_lo) v = io::get_f64(f);
    for (auto& v : ds.norm.q_hi) v = io::get_f64(f);
    const uint32_t n_types = io::get_u32(f);
    for (uint32_t i = 0; i < n_types; ++i) {
      ContextTypeSpec t;
      t.name = io::get_str(f);
      const uint32_t dim = io::get_u32(f);
      t.lo.resize(dim);
      t.hi.resize(dim);
      for (auto& v : t.lo) v = io::get_f64(f);
      for (auto& v : t.hi) v = io::get_f64(f);
      ds.norm.types.push_back(std::move(t));
    }
    const uint64_t n_records = io::get_u64(f);
    const size_t traj_len = static_cast<size_t>(ds.H) * static_cast<size_t>(ds.d_q);
    ds.records.reserve(n_records);
    for (uint64_t i = 0; i < n_records; ++i) {
      DatasetRecord r;
      r.env_id = static_cast<int64_t>(io::get_u64(f));
      r.problem_id = static_cast<int64_t>(io::get_u64(f));
      r.seed = io::get_u64(f);
      r.traj.resize(traj_len);
      for (auto& v : r.traj) v = io::get_f64(f);
      const uint32_t n_items = io::get_u32(f);
      for (uint32_t j = 0; j < n_items; ++j) {
        ContextInstance inst;
        inst.type_id = static_cast<int>(io::get_u32(f));
        const auto& spec = ds.norm.types.at(static_cast<size_t>(inst.type_id));
        inst.params.resize(static_cast<size_t>(spec.dim()));
        for (auto& v : inst.params) v = io::get_f64(f);
        r.context.items.push_back(std::move(inst));
      }
      ds.records.push_back(std::move(r));
    }
    return ds;
  } catch (const io::IoError& e) {
    throw DatasetError(std::string("dataset file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Sampling and splitting
// ---------------------------------------------------------------------------

std::vector<int64_t> sample_batch_indices(const Dataset& ds, int n, uint64_t seed) {
  if (ds.records.empty()) throw DatasetError("sample_batch: empty dataset");
  Rng rng(seed);
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (auto& i : idx)
    i = static_cast<int64_t>(rng.below(ds.records.size()));
  return idx;
}

std::pair<std::vector<int64_t>, std::vector<int64_t>> split_by_environment(
    const Dataset& ds, double test_fraction, uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw DatasetError("split: test_fraction must lie in (0,1)");
  std::vector<int64_t> envs;
  for (const auto& r : ds.records) envs.push_back(r.env_id);
  std::sort(envs.begin(), envs.end());
  envs.erase(std::unique(envs.begin(), envs.end()), envs.end());
  if (envs.size() < 2)
    throw DatasetError("split: need at least 2 distinct environments, have " +
                       std::to_string(envs.size()));
  Rng rng(seed);
  for (size_t i = envs.size() - 1; i > 0; --i) {
    const size_t j = static_cast<size_t>(rng.below(i + 1));
    std::swap(envs[i], envs[j]);
  }
  size_t n_test = static_cast<size_t>(std::llround(
      test_fraction * static_cast<double>(envs.size())));
  n_test = std::max<size_t>(1, std::min(envs.size() - 1, n_test));
  std::vector<int64_t> test_envs(envs.begin(), envs.begin() + static_cast<int64_t>(n_test));
  std::sort(test_envs.begin(), test_envs.end());
  std::vector<int64_t> train_idx, test_idx;
  for (size_t i = 0; i < ds.records.size(); ++i) {
    const bool in_test = std::binary_search(test_envs.begin(), test_envs.end(),
                                            ds.records[i].env_id);
    (in_test ? test_idx : train_idx).push_back(static_cast<int64_t>(i));
  }
  return {std::move(train_idx), std::move(test_idx)};
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

Dataset generate_dataset(const GenParams& params, GenStats* stats) {
  if (params.n_envs < 1 || params.problems_per_env < 1 ||
      params.trajs_per_problem < 1 || params.H < 2)
    throw DatasetError("generate_dataset: counts must be positive, H >= 2");
  const RobotModel robot = params.robot == RobotKind::point2d
                               ? RobotModel::point2d()
                               : RobotModel::arm2();
  Dataset ds;
  ds.robot = params.robot;
  ds.H = params.H;
  ds.d_q = robot.d_q;
  Environment workspace;  // unit square defaults
  ds.norm = Normalizer::fit(robot, workspace, params.env_params.r_min,
                            params.env_params.r_max);

  struct EnvResult {
    std::vector<DatasetRecord> records;
    GenStats stats;
  };
  std::vector<EnvResult> results(static_cast<size_t>(params.n_envs));

  parallel_for(params.n_envs, [&](int64_t lo, int64_t hi) {
    for (int64_t env_id = lo; env_id < hi; ++env_id) {
      EnvResult& res = results[static_cast<size_t>(env_id)];
      const uint64_t env_seed = mix_seed(params.seed, static_cast<uint64_t>(env_id));
      Environment env;
      try {
        env = sample_environment(env_seed, params.env_params);
      } catch (const GeometryError&) {
        res.stats.problem_failures += params.problems_per_env;
        continue;
      }
      const ContextSet ctx = ds.norm.normalize_context(context_from_env(env));
      for (int p = 0; p < params.problems_per_env; ++p) {
        const uint64_t prob_seed = mix_seed(env_seed, 1000 + static_cast<uint64_t>(p));
        PlanningProblem problem;
        try {
          problem = sample_problem(env, robot, prob_seed, params.min_separation);
        } catch (const GeometryError&) {
          res.stats.problem_failures += 1;
          continue;
        }
        for (int s = 0; s < params.trajs_per_problem; ++s) {
          res.stats.attempted += 1;
          const uint64_t plan_seed = mix_seed(prob_seed, 7000 + static_cast<uint64_t>(s));
          Path traj;
          try {
            traj = plan_expert(robot, problem, params.planner, params.H, plan_seed);
          } catch (const PlanNotFound&) {
            res.stats.plan_failures += 1;
            continue;
          }
          // Stored trajectories must be collision-free at the exact radii
          // (resampling chords can cut corners the padded plan avoided).
          bool clean = true;
          for (int64_t k = 0; k + 1 < traj.n() && clean; ++k)
            clean = !segment_in_collision(robot, traj.at(k), traj.at(k + 1),
                                          env, params.planner.resolution);
          if (!clean) {
            res.stats.resample_collisions += 1;
            continue;
          }
          DatasetRecord rec;
          rec.traj = ds.norm.normalize_traj(traj.pts);
          rec.context = ctx;
          rec.env_id = env_id;
          rec.problem_id = p;
          rec.seed = plan_seed;
          res.records.push_back(std::move(rec));
          res.stats.succeeded += 1;
        }
      }
    }
  });

  GenStats total;
  for (auto& res : results) {
    total.attempted += res.stats.attempted;
    total.succeeded += res.stats.succeeded;
    total.plan_failures += res.stats.plan_failures;
    total.resample_collisions += res.stats.resample_collisions;
    total.problem_failures += res.stats.problem_failures;
    for (auto& r : res.records) ds.records.push_back(std::move(r));
  }
  if (stats) *stats = total;
  return ds;
}

}  // namespace campd
