#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "campd/dataset.hpp"
#include "campd/diffusion.hpp"
#include "campd/geometry.hpp"
#include "campd/model.hpp"

namespace campd {

class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InferenceConfig {
  std::string sampler = "ddim";  // "ddpm" | "ddim"
  int T_inf = 10;                // reverse steps; must equal T_train for ddpm
  double w = 1.5;                // guidance strength (>= 0; 0 = unconditional-free)
  int n_batch = 50;
  double eta = 0.0;              // ddim stochasticity knob
  double smooth_sigma = 2.0;     // Gaussian smoother, in waypoints
  int smooth_window = 7;         // odd
  uint64_t seed = 0;

  // Checks internal consistency and compatibility with a trained model.
  void validate(const ModelConfig& mc) const;
};

// Per-dimension Gaussian smoothing along the waypoint axis with reflect
// padding (boundary sample not repeated); the first and last waypoints are
// then restored to the input's. traj is flat H x d_q; window must be odd,
// positive, and <= H; sigma > 0.
std::vector<double> gaussian_filter(const std::vector<double>& traj, int H,
                                    int d_q, double sigma, int window);

// Guided reverse diffusion for one planning problem, entirely in workspace
// coordinates: the problem endpoints and raw context are normalized with
// `norm`, the batch is denoised with endpoint clamping at every step,
// smoothed, denormalized, and the endpoints set to q_start/q_goal exactly.
// Returns n_batch flat H x d_q trajectories.
//
// RNG stream (single stream from cfg.seed): first the initial noise, sample
// by sample; then per reverse step, sample by sample, whatever noise the
// sampler consumes. Model evaluations consume no randomness, so a w = 0 run
// is bit-identical to a conditional-only run.
std::vector<std::vector<double>> sample_trajectories(
    const Model& model, const Normalizer& norm, const PlanningProblem& problem,
    const ContextSet& raw_context, const NoiseSchedule& sched,
    const InferenceConfig& cfg);

struct TimedBatch {
  std::vector<std::vector<double>> trajs;
  double seconds = 0.0;  // wall-clock for normalize + sample + smooth
};

// sample_trajectories plus a wall-clock measurement of the whole call:
// context encoding and smoothing are inside the timer, model loading is not.
TimedBatch timed_batch(const Model& model, const Normalizer& norm,
                       const PlanningProblem& problem,
                       const ContextSet& raw_context,
                       const NoiseSchedule& sched, const InferenceConfig& cfg);

// Binary batch container: magic "CAMPDB1", then N/H/d_q as u64 little-endian,
// then row-major f64 payload. Byte-identical for identical content.
void save_trajectory_batch(const std::string& path,
                           const std::vector<std::vector<double>>& trajs,
                           int H, int d_q);
struct TrajectoryBatch {
  int H = 0;
  int d_q = 0;
  std::vector<std::vector<double>> trajs;
};
TrajectoryBatch load_trajectory_batch(const std::string& path);

// CSV export: header "sample,waypoint,q0,q1,...", one row per waypoint.
void export_trajectory_csv(const std::string& path,
                           const std::vector<std::vector<double>>& trajs,
                           int H, int d_q);

}  // namespace campd
