#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowpose/heatmap.hpp"

namespace flowpose {

struct JointCurve {
  std::string name;
  std::vector<double> accuracy;  // one per d value
  std::size_t counted = 0;       // frames where the joint is labelled visible
};

/// Accuracy vs distance threshold for every joint.
struct PckCurve {
  std::vector<double> d;
  std::vector<JointCurve> joints;
  std::size_t frames = 0;

  const JointCurve& joint(const std::string& name) const {
    for (const auto& j : joints)
      if (j.name == name) return j;
    throw std::out_of_range("no curve for joint " + name);
  }

  /// Accuracy of joint `name` at threshold d (which must be on the grid).
  double at(const std::string& name, double dv) const {
    for (std::size_t i = 0; i < d.size(); ++i)
      if (d[i] == dv) return joint(name).accuracy[i];
    throw std::out_of_range("threshold not on the curve grid");
  }
};

/// Evenly spaced thresholds 0, step, ..., d_max.
inline std::vector<double> d_grid(double d_max, double step = 1.0) {
  if (!(step > 0.0) || d_max < 0.0) throw std::invalid_argument("d_grid: need d_max >= 0 and step > 0");
  std::vector<double> out;
  for (std::size_t i = 0; static_cast<double>(i) * step <= d_max + 1e-9; ++i) out.push_back(static_cast<double>(i) * step);
  return out;
}

/// Fraction of frames with Euclidean error <= d per joint. Joints that are not
/// visible in the ground truth are left out of both counts; a joint with no
/// visible frame gets accuracy 0.
inline PckCurve pck(const std::vector<Pose>& predictions, const std::vector<Pose>& ground_truth,
                    const std::vector<double>& d_values, const JointSet& joints) {
  if (predictions.size() != ground_truth.size())
    throw std::invalid_argument("pck: " + std::to_string(predictions.size()) + " predictions but " +
                                std::to_string(ground_truth.size()) + " labels");
  if (!std::is_sorted(d_values.begin(), d_values.end())) throw std::invalid_argument("pck: d values must be ascending");
  PckCurve curve;
  curve.d = d_values;
  curve.frames = predictions.size();
  for (std::size_t j = 0; j < joints.size(); ++j) {
    JointCurve jc{joints.name(j), std::vector<double>(d_values.size(), 0.0), 0};
    std::vector<std::size_t> hits(d_values.size(), 0);
    for (std::size_t f = 0; f < predictions.size(); ++f) {
      if (predictions[f].size() != joints.size() || ground_truth[f].size() != joints.size())
        throw std::invalid_argument("pck: pose size does not match the joint set");
      const Joint& g = ground_truth[f][j];
      if (!g.visible) continue;
      ++jc.counted;
      const Joint& p = predictions[f][j];
      const double err = std::hypot(p.x - g.x, p.y - g.y);
      for (std::size_t i = 0; i < d_values.size(); ++i)
        if (err <= d_values[i]) ++hits[i];
    }
    if (jc.counted > 0)
      for (std::size_t i = 0; i < d_values.size(); ++i)
        jc.accuracy[i] = static_cast<double>(hits[i]) / static_cast<double>(jc.counted);
    curve.joints.push_back(std::move(jc));
  }
  return curve;
}

/// Pointwise mean of several joint curves on a shared grid.
inline JointCurve compare_average(const std::vector<JointCurve>& curves, std::string name) {
  if (curves.empty()) throw std::invalid_argument("compare_average: no curves");
  JointCurve out{std::move(name), std::vector<double>(curves.front().accuracy.size(), 0.0), 0};
  for (const auto& c : curves) {
    if (c.accuracy.size() != out.accuracy.size()) throw std::invalid_argument("compare_average: d grids differ");
    for (std::size_t i = 0; i < c.accuracy.size(); ++i) out.accuracy[i] += c.accuracy[i];
    out.counted += c.counted;
  }
  for (double& a : out.accuracy) a /= static_cast<double>(curves.size());
  return out;
}

/// Average over joints whose names end with `suffix` (e.g. both wrists).
inline JointCurve compare_average(const PckCurve& curve, const std::string& suffix) {
  std::vector<JointCurve> picked;
  for (const auto& j : curve.joints)
    if (j.name.size() >= suffix.size() && j.name.compare(j.name.size() - suffix.size(), suffix.size(), suffix) == 0)
      picked.push_back(j);
  if (picked.empty()) throw std::invalid_argument("compare_average: no joint matches " + suffix);
  return compare_average(picked, suffix);
}

/// Curve with joint-type rows appended: L/R pairs averaged ("wrist",
/// "elbow", "shoulder"), unpaired joints copied.
inline PckCurve with_joint_types(const PckCurve& curve) {
  PckCurve out = curve;
  std::vector<std::string> done;
  for (const auto& j : curve.joints) {
    std::string type = j.name;
    for (const char* prefix : {"left_", "right_"})
      if (type.rfind(prefix, 0) == 0) type = type.substr(std::char_traits<char>::length(prefix));
    if (type == j.name || std::find(done.begin(), done.end(), type) != done.end()) continue;
    done.push_back(type);
    out.joints.push_back(compare_average(curve, "_" + type));
    out.joints.back().name = type;
  }
  return out;
}

struct NamedCurve {
  std::string method;
  PckCurve curve;
};

namespace detail {

inline std::string fmt(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", prec, v);
  return buf;
}

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

}  // namespace detail

inline void write_curves_csv(std::ostream& os, const std::vector<NamedCurve>& curves) {
  os << "method,joint,d,accuracy\n";
  for (const auto& nc : curves)
    for (const auto& j : nc.curve.joints)
      for (std::size_t i = 0; i < nc.curve.d.size(); ++i)
        os << nc.method << "," << j.name << "," << detail::fmt(nc.curve.d[i]) << "," << detail::fmt(j.accuracy[i], 10)
           << "\n";
}

/// One polyline per (method, joint) with a legend. `joints` filters which
/// joints to draw; empty means all.
inline void write_curves_svg(std::ostream& os, const std::vector<NamedCurve>& curves,
                             const std::vector<std::string>& joints = {}) {
  const double W = 640, H = 420, left = 60, right = 200, top = 20, bottom = 50;
  const double pw = W - left - right, ph = H - top - bottom;
  double dmax = 0.0;
  for (const auto& nc : curves)
    if (!nc.curve.d.empty()) dmax = std::max(dmax, nc.curve.d.back());
  if (dmax <= 0.0) dmax = 1.0;
  auto px = [&](double d) { return left + pw * d / dmax; };
  auto py = [&](double a) { return top + ph * (1.0 - a); };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << " " << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<g stroke=\"#ccc\" stroke-width=\"1\">\n";
  for (int i = 0; i <= 10; ++i) {
    const double a = i / 10.0;
    os << "<line x1=\"" << left << "\" y1=\"" << detail::fmt(py(a)) << "\" x2=\"" << left + pw << "\" y2=\""
       << detail::fmt(py(a)) << "\"/>\n";
  }
  os << "</g>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 10; i += 2)
    os << "<text x=\"" << left - 8 << "\" y=\"" << detail::fmt(py(i / 10.0) + 4) << "\" text-anchor=\"end\">"
       << i * 10 << "</text>\n";
  for (int i = 0; i <= 5; ++i) {
    const double d = dmax * i / 5.0;
    os << "<text x=\"" << detail::fmt(px(d)) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">"
       << detail::fmt(d, 4) << "</text>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">distance d (pixels)</text>\n";
  os << "<text x=\"14\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
     << top + ph / 2 << ")\">accuracy (%)</text>\n";
  os << "</g>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  std::size_t series = 0;
  for (const auto& nc : curves)
    for (const auto& j : nc.curve.joints) {
      if (!joints.empty() && std::find(joints.begin(), joints.end(), j.name) == joints.end()) continue;
      const char* color = palette[series % 10];
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (std::size_t i = 0; i < nc.curve.d.size(); ++i)
        os << (i ? " " : "") << detail::fmt(px(nc.curve.d[i])) << "," << detail::fmt(py(j.accuracy[i]));
      os << "\"/>\n";
      const double ly = top + 10 + 16.0 * static_cast<double>(series);
      os << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 32 << "\" y2=\"" << ly
         << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
      os << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4
         << "\" font-family=\"sans-serif\" font-size=\"11\">" << detail::svg_escape(nc.method + " " + j.name)
         << "</text>\n";
      ++series;
    }
  os << "</svg>\n";
}

/// Writes <stem>.csv and <stem>.svg into `dir`.
inline void emit_curves(const std::vector<NamedCurve>& curves, const std::filesystem::path& dir,
                        const std::string& stem = "pck", const std::vector<std::string>& plot_joints = {}) {
  if (curves.empty()) throw std::invalid_argument("emit_curves: no curves");
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / (stem + ".csv"));
  if (!csv) throw std::runtime_error("cannot write " + (dir / (stem + ".csv")).string());
  write_curves_csv(csv, curves);
  std::ofstream svg(dir / (stem + ".svg"));
  if (!svg) throw std::runtime_error("cannot write " + (dir / (stem + ".svg")).string());
  write_curves_svg(svg, curves, plot_joints);
}

}  // namespace flowpose
