#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace campd {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat "key = value" text: blank lines and '#' comments ignored, values may
// be quoted to include spaces. Parse errors carry the 1-based line number;
// duplicate keys are rejected.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> load_key_values(const std::string& path);

// Every knob the command-line pipeline exposes, with the defaults
// materialized. One flat struct keeps the manifest trivially complete.
struct RunConfig {
  // shared
  std::string robot = "point2d";  // point2d | arm2
  uint64_t seed = 0;
  int horizon = 64;
  // environment / data generation
  int n_envs = 2000;
  int problems_per_env = 2;
  int trajs_per_problem = 10;
  double clearance = 0.1;
  double min_separation = 0.4;
  double r_min = 0.05;
  double r_max = 0.15;
  // model
  std::string model_size = "desk";  // desk | paper | tiny
  int t_train = 25;
  // training
  int steps = 5000;
  int batch = 128;
  double lr = 1e-4;
  double p_d = 0.33;
  std::string schedule = "cosine";  // cosine | linear
  int checkpoint_every = 1000;
  // inference / evaluation
  std::string sampler = "ddim";  // ddim | ddpm
  int t_inf = 10;
  double w = 1.5;
  double eta = 0.0;
  int n_batch = 50;
  double sigma = 2.0;
  int window = 7;
  double resolution = 0.01;
  int n_problems = 100;
  bool baseline = false;
};

// Applies parsed keys onto the defaults. Unknown keys and unparseable values
// are errors naming the key.
RunConfig config_from_map(const std::map<std::string, std::string>& kv);

// Empty path -> all defaults.
RunConfig config_load(const std::string& path);

// Cross-field validation (e.g. ddpm requires t_inf == t_train). Errors name
// the offending field.
void validate_config(const RunConfig& cfg);

// JSON object with every field materialized, for the run manifest.
std::string config_to_json(const RunConfig& cfg);

// git-describe-style build version.
std::string campd_version();

// Reproducibility manifest written alongside every artifact.
void write_manifest(const std::string& path, const std::string& subcommand,
                    const RunConfig& cfg, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs);

}  // namespace campd
