#include "campd/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#ifndef CAMPD_VERSION
#define CAMPD_VERSION "v0.0-unknown"
#endif

namespace campd {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config parse error at line " + std::to_string(lineno) +
                        ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config parse error at line " + std::to_string(lineno) +
                        ": empty key");
    }
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    } else if (!value.empty() && value.front() == '"') {
      throw ConfigError("config parse error at line " + std::to_string(lineno) +
                        ": unterminated quote");
    }
    if (out.count(key) != 0) {
      throw ConfigError("config parse error at line " + std::to_string(lineno) +
                        ": duplicate key \"" + key + "\"");
    }
    out[key] = value;
  }
  return out;
}

std::map<std::string, std::string> load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

namespace {

int64_t parse_int(const std::string& key, const std::string& v) {
  int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config field \"" + key + "\": expected an integer, got \"" + v + "\"");
  }
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError("config field \"" + key + "\": expected a non-negative integer, got \"" +
                      v + "\"");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config field \"" + key + "\": expected a number, got \"" + v + "\"");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config field \"" + key + "\": expected true/false, got \"" + v + "\"");
}

}  // namespace

RunConfig config_from_map(const std::map<std::string, std::string>& kv) {
  RunConfig cfg;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"robot", [&](const std::string&, const std::string& v) { cfg.robot = v; }},
      {"seed", [&](const std::string& k, const std::string& v) { cfg.seed = parse_u64(k, v); }},
      {"horizon",
       [&](const std::string& k, const std::string& v) { cfg.horizon = static_cast<int>(parse_int(k, v)); }},
      {"n_envs",
       [&](const std::string& k, const std::string& v) { cfg.n_envs = static_cast<int>(parse_int(k, v)); }},
      {"problems_per_env",
       [&](const std::string& k, const std::string& v) {
         cfg.problems_per_env = static_cast<int>(parse_int(k, v));
       }},
      {"trajs_per_problem",
       [&](const std::string& k, const std::string& v) {
         cfg.trajs_per_problem = static_cast<int>(parse_int(k, v));
       }},
      {"clearance",
       [&](const std::string& k, const std::string& v) { cfg.clearance = parse_double(k, v); }},
      {"min_separation",
       [&](const std::string& k, const std::string& v) { cfg.min_separation = parse_double(k, v); }},
      {"r_min", [&](const std::string& k, const std::string& v) { cfg.r_min = parse_double(k, v); }},
      {"r_max", [&](const std::string& k, const std::string& v) { cfg.r_max = parse_double(k, v); }},
      {"model_size", [&](const std::string&, const std::string& v) { cfg.model_size = v; }},
      {"t_train",
       [&](const std::string& k, const std::string& v) { cfg.t_train = static_cast<int>(parse_int(k, v)); }},
      {"steps",
       [&](const std::string& k, const std::string& v) { cfg.steps = static_cast<int>(parse_int(k, v)); }},
      {"batch",
       [&](const std::string& k, const std::string& v) { cfg.batch = static_cast<int>(parse_int(k, v)); }},
      {"lr", [&](const std::string& k, const std::string& v) { cfg.lr = parse_double(k, v); }},
      {"p_d", [&](const std::string& k, const std::string& v) { cfg.p_d = parse_double(k, v); }},
      {"schedule", [&](const std::string&, const std::string& v) { cfg.schedule = v; }},
      {"checkpoint_every",
       [&](const std::string& k, const std::string& v) {
         cfg.checkpoint_every = static_cast<int>(parse_int(k, v));
       }},
      {"sampler", [&](const std::string&, const std::string& v) { cfg.sampler = v; }},
      {"t_inf",
       [&](const std::string& k, const std::string& v) { cfg.t_inf = static_cast<int>(parse_int(k, v)); }},
      {"w", [&](const std::string& k, const std::string& v) { cfg.w = parse_double(k, v); }},
      {"eta", [&](const std::string& k, const std::string& v) { cfg.eta = parse_double(k, v); }},
      {"n_batch",
       [&](const std::string& k, const std::string& v) { cfg.n_batch = static_cast<int>(parse_int(k, v)); }},
      {"sigma", [&](const std::string& k, const std::string& v) { cfg.sigma = parse_double(k, v); }},
      {"window",
       [&](const std::string& k, const std::string& v) { cfg.window = static_cast<int>(parse_int(k, v)); }},
      {"resolution",
       [&](const std::string& k, const std::string& v) { cfg.resolution = parse_double(k, v); }},
      {"n_problems",
       [&](const std::string& k, const std::string& v) { cfg.n_problems = static_cast<int>(parse_int(k, v)); }},
      {"baseline",
       [&](const std::string& k, const std::string& v) { cfg.baseline = parse_bool(k, v); }},
  };
  for (const auto& [key, value] : kv) {
    auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError("unknown config key \"" + key + "\"");
    }
    it->second(key, value);
  }
  return cfg;
}

RunConfig config_load(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return config_from_map(load_key_values(path));
}

void validate_config(const RunConfig& cfg) {
  auto fail = [](const std::string& msg) { throw ConfigError("config field " + msg); };
  if (cfg.robot != "point2d" && cfg.robot != "arm2") {
    fail("\"robot\": must be point2d or arm2, got \"" + cfg.robot + "\"");
  }
  if (cfg.model_size != "desk" && cfg.model_size != "paper" && cfg.model_size != "tiny") {
    fail("\"model_size\": must be desk, paper, or tiny, got \"" + cfg.model_size + "\"");
  }
  if (cfg.schedule != "cosine" && cfg.schedule != "linear") {
    fail("\"schedule\": must be cosine or linear, got \"" + cfg.schedule + "\"");
  }
  if (cfg.sampler != "ddim" && cfg.sampler != "ddpm") {
    fail("\"sampler\": must be ddim or ddpm, got \"" + cfg.sampler + "\"");
  }
  if (cfg.horizon < 2) fail("\"horizon\": must be >= 2");
  if (cfg.n_envs < 1) fail("\"n_envs\": must be >= 1");
  if (cfg.problems_per_env < 1) fail("\"problems_per_env\": must be >= 1");
  if (cfg.trajs_per_problem < 1) fail("\"trajs_per_problem\": must be >= 1");
  if (!(cfg.r_min > 0.0) || !(cfg.r_max >= cfg.r_min)) fail("\"r_min\"/\"r_max\": need 0 < r_min <= r_max");
  if (cfg.t_train < 1) fail("\"t_train\": must be >= 1");
  if (cfg.steps < 1) fail("\"steps\": must be >= 1");
  if (cfg.batch < 1) fail("\"batch\": must be >= 1");
  if (!(cfg.lr > 0.0)) fail("\"lr\": must be > 0");
  if (!(cfg.p_d >= 0.0 && cfg.p_d <= 1.0)) fail("\"p_d\": must lie in [0, 1]");
  if (cfg.t_inf < 1) fail("\"t_inf\": must be >= 1");
  if (cfg.sampler == "ddpm" && cfg.t_inf != cfg.t_train) {
    fail("\"t_inf\": ddpm runs the full schedule, so t_inf (" + std::to_string(cfg.t_inf) +
         ") must equal t_train (" + std::to_string(cfg.t_train) + ")");
  }
  if (cfg.sampler == "ddim" && cfg.t_inf > cfg.t_train) {
    fail("\"t_inf\": must not exceed t_train");
  }
  if (!(cfg.w >= 0.0)) fail("\"w\": must be >= 0");
  if (!(cfg.eta >= 0.0)) fail("\"eta\": must be >= 0");
  if (cfg.n_batch < 1) fail("\"n_batch\": must be >= 1");
  if (!(cfg.sigma > 0.0)) fail("\"sigma\": must be > 0");
  if (cfg.window < 1 || cfg.window % 2 == 0) fail("\"window\": must be a positive odd integer");
  if (cfg.window > cfg.horizon) fail("\"window\": must not exceed horizon");
  if (!(cfg.resolution > 0.0)) fail("\"resolution\": must be > 0");
  if (cfg.n_problems < 1) fail("\"n_problems\": must be >= 1");
  if (!(cfg.clearance >= 0.0)) fail("\"clearance\": must be >= 0");
  if (!(cfg.min_separation >= 0.0)) fail("\"min_separation\": must be >= 0");
}

std::string config_to_json(const RunConfig& c) {
  nlohmann::json j = {
      {"robot", c.robot},
      {"seed", c.seed},
      {"horizon", c.horizon},
      {"n_envs", c.n_envs},
      {"problems_per_env", c.problems_per_env},
      {"trajs_per_problem", c.trajs_per_problem},
      {"clearance", c.clearance},
      {"min_separation", c.min_separation},
      {"r_min", c.r_min},
      {"r_max", c.r_max},
      {"model_size", c.model_size},
      {"t_train", c.t_train},
      {"steps", c.steps},
      {"batch", c.batch},
      {"lr", c.lr},
      {"p_d", c.p_d},
      {"schedule", c.schedule},
      {"checkpoint_every", c.checkpoint_every},
      {"sampler", c.sampler},
      {"t_inf", c.t_inf},
      {"w", c.w},
      {"eta", c.eta},
      {"n_batch", c.n_batch},
      {"sigma", c.sigma},
      {"window", c.window},
      {"resolution", c.resolution},
      {"n_problems", c.n_problems},
      {"baseline", c.baseline},
  };
  return j.dump();
}

std::string campd_version() { return CAMPD_VERSION; }

void write_manifest(const std::string& path, const std::string& subcommand,
                    const RunConfig& cfg, const std::vector<std::string>& inputs,
                    const std::vector<std::string>& outputs) {
  nlohmann::json j;
  j["subcommand"] = subcommand;
  j["version"] = campd_version();
  j["seed"] = cfg.seed;
  j["config"] = nlohmann::json::parse(config_to_json(cfg));
  j["inputs"] = inputs;
  j["outputs"] = outputs;
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ConfigError("cannot write manifest " + path);
  os << j.dump(2) << "\n";
  if (!os) throw ConfigError("manifest write failed for " + path);
}

}  // namespace campd
