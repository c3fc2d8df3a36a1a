#include "campd/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace campd {

namespace {

constexpr double kCanvas = 640.0;  // drawing area for the longer bounds side
constexpr double kMargin = 20.0;

const char* kPalette[6] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                           "#9467bd", "#8c564b"};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

// Workspace position of a configuration: identity for the point robot, the
// arm tip for the planar arm.
std::pair<double, double> config_point(const RobotModel& robot, const double* q) {
  if (robot.kind == RobotKind::arm2) {
    auto pts = arm2_points(robot, q);
    return {pts[2][0], pts[2][1]};
  }
  return {q[0], q[1]};
}

}  // namespace

std::string render_env_svg(const Environment& env, const RobotModel& robot,
                           const std::vector<std::vector<double>>& trajs,
                           const std::vector<double>* q_start,
                           const std::vector<double>* q_goal) {
  const double xmin = env.bounds[0], ymin = env.bounds[1];
  const double xmax = env.bounds[2], ymax = env.bounds[3];
  if (!(xmax > xmin) || !(ymax > ymin)) {
    throw SvgError("render_env_svg: degenerate workspace bounds");
  }
  const int dq = robot.d_q;
  for (const auto& t : trajs) {
    if (t.empty() || t.size() % static_cast<size_t>(dq) != 0) {
      throw SvgError("render_env_svg: trajectory length " + std::to_string(t.size()) +
                     " is not a positive multiple of d_q=" + std::to_string(dq));
    }
  }

  const double scale = kCanvas / std::max(xmax - xmin, ymax - ymin);
  const double width = (xmax - xmin) * scale + 2 * kMargin;
  const double height = (ymax - ymin) * scale + 2 * kMargin;
  // SVG y grows downward; workspace y grows upward.
  auto sx = [&](double x) { return kMargin + (x - xmin) * scale; };
  auto sy = [&](double y) { return kMargin + (ymax - y) * scale; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width)
     << "\" height=\"" << num(height) << "\" viewBox=\"0 0 " << num(width) << " "
     << num(height) << "\">\n";
  os << "  <rect x=\"" << num(sx(xmin)) << "\" y=\"" << num(sy(ymax)) << "\" width=\""
     << num((xmax - xmin) * scale) << "\" height=\"" << num((ymax - ymin) * scale)
     << "\" fill=\"#fdfdfd\" stroke=\"#333\" stroke-width=\"1\" class=\"workspace\"/>\n";

  for (const SphereObstacle& o : env.obstacles) {
    os << "  <circle cx=\"" << num(sx(o.x)) << "\" cy=\"" << num(sy(o.y)) << "\" r=\""
       << num(o.r * scale) << "\" fill=\"#9aa0a6\" stroke=\"#5f6368\" class=\"obstacle\"/>\n";
  }

  for (size_t i = 0; i < trajs.size(); ++i) {
    const auto& t = trajs[i];
    const size_t n = t.size() / static_cast<size_t>(dq);
    os << "  <polyline points=\"";
    for (size_t h = 0; h < n; ++h) {
      auto [px, py] = config_point(robot, t.data() + h * static_cast<size_t>(dq));
      if (h > 0) os << " ";
      os << num(sx(px)) << "," << num(sy(py));
    }
    os << "\" fill=\"none\" stroke=\"" << kPalette[i % 6]
       << "\" stroke-width=\"1.5\" opacity=\"0.8\" class=\"trajectory\"/>\n";
  }

  if (q_start != nullptr) {
    if (static_cast<int>(q_start->size()) != dq) {
      throw SvgError("render_env_svg: start marker has wrong dimension");
    }
    auto [px, py] = config_point(robot, q_start->data());
    os << "  <circle cx=\"" << num(sx(px)) << "\" cy=\"" << num(sy(py))
       << "\" r=\"6\" fill=\"#188038\" stroke=\"#0d5025\" class=\"start\"/>\n";
  }
  if (q_goal != nullptr) {
    if (static_cast<int>(q_goal->size()) != dq) {
      throw SvgError("render_env_svg: goal marker has wrong dimension");
    }
    auto [px, py] = config_point(robot, q_goal->data());
    os << "  <circle cx=\"" << num(sx(px)) << "\" cy=\"" << num(sy(py))
       << "\" r=\"6\" fill=\"#d93025\" stroke=\"#8c1d13\" class=\"goal\"/>\n";
  }

  os << "</svg>\n";
  return os.str();
}

std::string render_curve_svg(const std::vector<CurveSeries>& series,
                             const std::string& x_label, const std::string& y_label,
                             const std::string& title) {
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool any = false;
  for (const CurveSeries& s : series) {
    for (auto [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) {
        throw SvgError("render_curve_svg: non-finite data point");
      }
      if (!any) {
        xmin = xmax = x;
        ymin = ymax = y;
        any = true;
      } else {
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
    }
  }
  if (!any) throw SvgError("render_curve_svg: no data points");
  if (xmax - xmin < 1e-12) xmax = xmin + 1.0;
  if (ymax - ymin < 1e-12) ymax = ymin + 1.0;

  const double W = 640, H = 400, ML = 70, MR = 20, MT = 40, MB = 50;
  auto sx = [&](double x) { return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR); };
  auto sy = [&](double y) { return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(W) << "\" height=\""
     << num(H) << "\" viewBox=\"0 0 " << num(W) << " " << num(H) << "\">\n";
  os << "  <rect x=\"0\" y=\"0\" width=\"" << num(W) << "\" height=\"" << num(H)
     << "\" fill=\"#ffffff\"/>\n";
  os << "  <text x=\"" << num(W / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
        "class=\"title\">"
     << title << "</text>\n";
  // axes
  os << "  <line x1=\"" << num(ML) << "\" y1=\"" << num(H - MB) << "\" x2=\"" << num(W - MR)
     << "\" y2=\"" << num(H - MB) << "\" stroke=\"#333\" class=\"axis\"/>\n";
  os << "  <line x1=\"" << num(ML) << "\" y1=\"" << num(MT) << "\" x2=\"" << num(ML)
     << "\" y2=\"" << num(H - MB) << "\" stroke=\"#333\" class=\"axis\"/>\n";
  // tick labels at data extremes
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", xmin);
  os << "  <text x=\"" << num(ML) << "\" y=\"" << num(H - MB + 18)
     << "\" text-anchor=\"middle\" font-size=\"11\">" << buf << "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.6g", xmax);
  os << "  <text x=\"" << num(W - MR) << "\" y=\"" << num(H - MB + 18)
     << "\" text-anchor=\"middle\" font-size=\"11\">" << buf << "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.6g", ymin);
  os << "  <text x=\"" << num(ML - 6) << "\" y=\"" << num(H - MB + 4)
     << "\" text-anchor=\"end\" font-size=\"11\">" << buf << "</text>\n";
  std::snprintf(buf, sizeof(buf), "%.6g", ymax);
  os << "  <text x=\"" << num(ML - 6) << "\" y=\"" << num(MT + 4)
     << "\" text-anchor=\"end\" font-size=\"11\">" << buf << "</text>\n";
  // axis labels
  os << "  <text x=\"" << num((ML + W - MR) / 2) << "\" y=\"" << num(H - 12)
     << "\" text-anchor=\"middle\" font-size=\"13\" class=\"x-label\">" << x_label
     << "</text>\n";
  os << "  <text x=\"16\" y=\"" << num((MT + H - MB) / 2)
     << "\" text-anchor=\"middle\" font-size=\"13\" class=\"y-label\" transform=\"rotate(-90 16 "
     << num((MT + H - MB) / 2) << ")\">" << y_label << "</text>\n";

  for (size_t i = 0; i < series.size(); ++i) {
    const CurveSeries& s = series[i];
    if (s.points.empty()) continue;
    os << "  <polyline points=\"";
    for (size_t j = 0; j < s.points.size(); ++j) {
      if (j > 0) os << " ";
      os << num(sx(s.points[j].first)) << "," << num(sy(s.points[j].second));
    }
    os << "\" fill=\"none\" stroke=\"" << kPalette[i % 6]
       << "\" stroke-width=\"1.5\" class=\"curve\"/>\n";
    if (!s.label.empty()) {
      os << "  <text x=\"" << num(W - MR - 4) << "\" y=\"" << num(MT + 16 + 16 * i)
         << "\" text-anchor=\"end\" font-size=\"12\" fill=\"" << kPalette[i % 6]
         << "\" class=\"legend\">" << s.label << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

void save_svg(const std::string& path, const std::string& svg) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw SvgError("save_svg: cannot open " + path);
  os << svg;
  if (!os) throw SvgError("save_svg: write failed for " + path);
}

}  // namespace campd
