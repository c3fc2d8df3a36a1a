#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "campd/config.hpp"
#include "campd/svg.hpp"

using namespace campd;

namespace {

int count_occurrences(const std::string& hay, const std::string& needle) {
  int n = 0;
  size_t pos = 0;
  while ((pos = hay.find(needle, pos)) != std::string::npos) {
    ++n;
    pos += needle.size();
  }
  return n;
}

// Extracts the numeric attribute value following `attr="` at the element
// whose tag contains the marker string.
double attr_near(const std::string& svg, const std::string& marker, const std::string& attr) {
  size_t at = svg.find(marker);
  REQUIRE(at != std::string::npos);
  size_t line_start = svg.rfind('<', at);
  size_t key = svg.find(attr + "=\"", line_start);
  REQUIRE(key != std::string::npos);
  key += attr.size() + 2;
  return std::stod(svg.substr(key));
}

}  // namespace

TEST_CASE("key=value parsing: comments, quotes, errors with line numbers") {
  auto kv = parse_key_values(
      "# a comment\n"
      "\n"
      "steps = 500   # trailing comment\n"
      "robot = arm2\n"
      "label = \"two words\"\n");
  CHECK(kv.size() == 3);
  CHECK(kv.at("steps") == "500");
  CHECK(kv.at("robot") == "arm2");
  CHECK(kv.at("label") == "two words");

  CHECK(parse_key_values("").empty());
  CHECK(parse_key_values("\n\n# only comments\n").empty());

  auto check_error_mentions = [](const std::string& text, const std::string& needle) {
    try {
      parse_key_values(text);
      FAIL_CHECK("expected ConfigError for: " << text);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  check_error_mentions("a = 1\nbroken line\n", "line 2");
  check_error_mentions("= 5\n", "line 1");
  check_error_mentions("x = 1\nx = 2\n", "duplicate");
  check_error_mentions("q = \"unclosed\n", "quote");
}

TEST_CASE("run config: defaults, overrides, unknown keys, field errors") {
  RunConfig d = config_from_map({});
  CHECK(d.robot == "point2d");
  CHECK(d.horizon == 64);
  CHECK(d.steps == 5000);
  CHECK(d.batch == 128);
  CHECK(d.p_d == 0.33);
  CHECK(d.w == 1.5);
  CHECK(d.t_inf == 10);
  CHECK(d.n_batch == 50);
  CHECK(d.sigma == 2.0);
  CHECK(d.window == 7);
  CHECK_FALSE(d.baseline);
  CHECK_NOTHROW(validate_config(d));

  RunConfig c = config_from_map({{"w", "2.5"}, {"sampler", "ddpm"}, {"t_inf", "25"},
                                 {"baseline", "true"}, {"seed", "99"}});
  CHECK(c.w == 2.5);
  CHECK(c.sampler == "ddpm");
  CHECK(c.baseline);
  CHECK(c.seed == 99);
  CHECK_NOTHROW(validate_config(c));

  try {
    config_from_map({{"wibble", "3"}});
    FAIL_CHECK("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("wibble") != std::string::npos);
  }
  try {
    config_from_map({{"steps", "abc"}});
    FAIL_CHECK("bad int accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("steps") != std::string::npos);
  }
  CHECK_THROWS_AS(config_from_map({{"baseline", "maybe"}}), ConfigError);
  CHECK_THROWS_AS(config_from_map({{"w", "fast"}}), ConfigError);
}

TEST_CASE("cross-field validation rejects inconsistent combos") {
  auto bad = [](auto mutate, const std::string& needle) {
    RunConfig c;
    mutate(c);
    try {
      validate_config(c);
      FAIL_CHECK("expected rejection mentioning " << needle);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  bad([](RunConfig& c) { c.sampler = "ddpm"; c.t_inf = 10; }, "t_inf");
  bad([](RunConfig& c) { c.t_inf = 26; }, "t_inf");
  bad([](RunConfig& c) { c.robot = "quadcopter"; }, "robot");
  bad([](RunConfig& c) { c.schedule = "quadratic"; }, "schedule");
  bad([](RunConfig& c) { c.window = 6; }, "window");
  bad([](RunConfig& c) { c.window = 65; }, "window");
  bad([](RunConfig& c) { c.p_d = 1.5; }, "p_d");
  bad([](RunConfig& c) { c.steps = 0; }, "steps");
  bad([](RunConfig& c) { c.model_size = "huge"; }, "model_size");

  RunConfig ddpm_ok;
  ddpm_ok.sampler = "ddpm";
  ddpm_ok.t_inf = ddpm_ok.t_train;
  CHECK_NOTHROW(validate_config(ddpm_ok));
}

TEST_CASE("config file loading and manifest round trip") {
  auto dir = std::filesystem::temp_directory_path() / "campd_cfg";
  std::filesystem::create_directories(dir);
  auto cfg_path = (dir / "run.cfg").string();
  {
    std::ofstream os(cfg_path);
    os << "steps = 42\nw = 0.5\nrobot = arm2\n";
  }
  RunConfig c = config_load(cfg_path);
  CHECK(c.steps == 42);
  CHECK(c.w == 0.5);
  CHECK(c.robot == "arm2");
  CHECK(c.batch == 128);  // untouched default

  CHECK_THROWS_AS(config_load((dir / "absent.cfg").string()), ConfigError);
  RunConfig defaults = config_load("");
  CHECK(defaults.steps == 5000);

  CHECK_FALSE(campd_version().empty());

  // Manifest: all fields materialized and parseable.
  auto manifest_path = (dir / "manifest.json").string();
  c.seed = 7;
  write_manifest(manifest_path, "train", c, {"data.bin"}, {"model.ckpt", "loss_log.csv"});
  std::ifstream in(manifest_path);
  nlohmann::json j = nlohmann::json::parse(in);
  CHECK(j.at("subcommand") == "train");
  CHECK(j.at("seed") == 7);
  CHECK(j.at("version") == campd_version());
  CHECK(j.at("config").at("steps") == 42);
  CHECK(j.at("config").at("w") == 0.5);
  CHECK(j.at("config").at("batch") == 128);  // defaults materialized
  CHECK(j.at("config").size() == 28);        // every RunConfig field present
  CHECK(j.at("inputs") == nlohmann::json({"data.bin"}));
  CHECK(j.at("outputs").size() == 2);

  std::filesystem::remove_all(dir);
}

TEST_CASE("environment svg: discs, polylines, markers, y-flip") {
  RobotModel robot = RobotModel::point2d();
  Environment env;
  env.bounds = {0.0, 0.0, 1.0, 1.0};

  // Empty env, one straight trajectory, both markers.
  std::vector<double> start = {0.1, 0.2};
  std::vector<double> goal = {0.9, 0.8};
  std::vector<std::vector<double>> one = {{0.1, 0.2, 0.5, 0.5, 0.9, 0.8}};
  std::string svg = render_env_svg(env, robot, one, &start, &goal);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(count_occurrences(svg, "<polyline") == 1);
  CHECK(count_occurrences(svg, "class=\"start\"") == 1);
  CHECK(count_occurrences(svg, "class=\"goal\"") == 1);
  CHECK(count_occurrences(svg, "class=\"obstacle\"") == 0);
  CHECK(count_occurrences(svg, "<svg") == count_occurrences(svg, "</svg>"));

  // Workspace y grows up, svg y grows down: the goal (higher y) must render
  // with the smaller cy.
  double cy_start = attr_near(svg, "class=\"start\"", "cy");
  double cy_goal = attr_near(svg, "class=\"goal\"", "cy");
  CHECK(cy_goal < cy_start);
  double cx_start = attr_near(svg, "class=\"start\"", "cx");
  double cx_goal = attr_near(svg, "class=\"goal\"", "cx");
  CHECK(cx_start < cx_goal);

  // Obstacles and several trajectories.
  env.obstacles = {{0.3, 0.3, 0.1}, {0.7, 0.6, 0.05}, {0.5, 0.8, 0.08}};
  std::vector<std::vector<double>> three(3, one[0]);
  std::string svg3 = render_env_svg(env, robot, three, nullptr, nullptr);
  CHECK(count_occurrences(svg3, "class=\"obstacle\"") == 3);
  CHECK(count_occurrences(svg3, "<polyline") == 3);
  CHECK(count_occurrences(svg3, "class=\"start\"") == 0);

  // Determinism.
  CHECK(render_env_svg(env, robot, three, nullptr, nullptr) == svg3);

  // The arm robot renders its tip trace; a 2-config trajectory still gives
  // one polyline.
  RobotModel arm = RobotModel::arm2();
  std::vector<std::vector<double>> arm_traj = {{0.0, 0.0, 0.5, -0.25}};
  std::string arm_svg = render_env_svg(env, arm, arm_traj, nullptr, nullptr);
  CHECK(count_occurrences(arm_svg, "<polyline") == 1);

  // Errors.
  std::vector<std::vector<double>> ragged = {{0.1, 0.2, 0.3}};
  CHECK_THROWS_AS(render_env_svg(env, robot, ragged, nullptr, nullptr), SvgError);
  std::vector<double> bad_marker = {0.5};
  CHECK_THROWS_AS(render_env_svg(env, robot, one, &bad_marker, nullptr), SvgError);
  Environment degenerate;
  degenerate.bounds = {0.5, 0.0, 0.5, 1.0};
  CHECK_THROWS_AS(render_env_svg(degenerate, robot, one, nullptr, nullptr), SvgError);
}

TEST_CASE("curve svg: polylines, labels, degenerate ranges") {
  CurveSeries s;
  s.label = "loss";
  s.points = {{0.0, 1.0}, {1.0, 0.5}, {2.0, 0.25}};
  std::string svg = render_curve_svg({s}, "step", "loss", "training");
  CHECK(count_occurrences(svg, "class=\"curve\"") == 1);
  CHECK(svg.find(">training<") != std::string::npos);
  CHECK(svg.find(">step<") != std::string::npos);
  CHECK(svg.find(">loss<") != std::string::npos);

  // Exactly three coordinate pairs on the polyline.
  size_t at = svg.find("class=\"curve\"");
  size_t open = svg.rfind("points=\"", at);
  REQUIRE(open != std::string::npos);
  size_t close = svg.find('"', open + 8);
  std::string pts = svg.substr(open + 8, close - open - 8);
  CHECK(count_occurrences(pts, ",") == 3);

  // Two series, one legend entry each.
  CurveSeries s2 = s;
  s2.label = "val";
  std::string svg2 = render_curve_svg({s, s2}, "x", "y", "t");
  CHECK(count_occurrences(svg2, "class=\"curve\"") == 2);
  CHECK(count_occurrences(svg2, "class=\"legend\"") == 2);

  // A constant series must not divide by zero.
  CurveSeries flat;
  flat.points = {{0.0, 3.0}, {1.0, 3.0}};
  CHECK_NOTHROW(render_curve_svg({flat}, "x", "y", "flat"));

  CHECK_THROWS_AS(render_curve_svg({}, "x", "y", "none"), SvgError);
  CurveSeries nan_series;
  nan_series.points = {{0.0, std::nan("")}};
  CHECK_THROWS_AS(render_curve_svg({nan_series}, "x", "y", "bad"), SvgError);

  // save_svg writes the exact text.
  auto dir = std::filesystem::temp_directory_path() / "campd_svg";
  std::filesystem::create_directories(dir);
  auto path = (dir / "c.svg").string();
  save_svg(path, svg);
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == svg);
  std::filesystem::remove_all(dir);
}
