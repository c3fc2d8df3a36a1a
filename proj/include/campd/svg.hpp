#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "campd/geometry.hpp"

namespace campd {

class SvgError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Workspace scene: obstacles as grey discs, each trajectory as a polyline
// (point robot: configurations are positions; planar arm: the tip trace via
// forward kinematics), plus start/goal markers when endpoints are given.
// Deterministic text output for identical inputs.
std::string render_env_svg(const Environment& env, const RobotModel& robot,
                           const std::vector<std::vector<double>>& trajs,
                           const std::vector<double>* q_start,
                           const std::vector<double>* q_goal);

struct CurveSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (x, y)
};

// Line chart with axes, min/max tick labels, and one polyline per series.
std::string render_curve_svg(const std::vector<CurveSeries>& series,
                             const std::string& x_label, const std::string& y_label,
                             const std::string& title);

void save_svg(const std::string& path, const std::string& svg);

}  // namespace campd
