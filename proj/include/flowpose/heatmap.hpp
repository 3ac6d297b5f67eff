#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowpose/tensor.hpp"

namespace flowpose {

struct Joint {
  double x = 0.0;  // pixels
  double y = 0.0;
  double confidence = 1.0;
  bool visible = true;
};

/// k joints in input-image pixel coordinates, in the order of a JointSet.
struct Pose {
  std::vector<Joint> joints;

  Pose() = default;
  explicit Pose(std::size_t k) : joints(k) {}
  std::size_t size() const { return joints.size(); }
  Joint& operator[](std::size_t i) { return joints[i]; }
  const Joint& operator[](std::size_t i) const { return joints[i]; }
};

/// Ordered joint names. Names starting with "left_" / "right_" are mirror
/// pairs.
class JointSet {
 public:
  explicit JointSet(std::vector<std::string> names) : names_(std::move(names)) {}

  static JointSet upper_body() {
    return JointSet({"head", "left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist",
                     "right_wrist"});
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }

  std::size_t index(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    throw std::out_of_range("unknown joint: " + name);
  }

  /// Index of the left/right counterpart, or i itself for unpaired joints.
  std::size_t mirror(std::size_t i) const {
    const std::string& n = names_.at(i);
    auto swap_prefix = [&](const std::string& from, const std::string& to) -> std::size_t {
      const std::string other = to + n.substr(from.size());
      for (std::size_t j = 0; j < names_.size(); ++j)
        if (names_[j] == other) return j;
      return i;
    };
    if (n.rfind("left_", 0) == 0) return swap_prefix("left_", "right_");
    if (n.rfind("right_", 0) == 0) return swap_prefix("right_", "left_");
    return i;
  }

  /// Indices of joints whose name ends with `suffix` ("wrist" -> both wrists).
  std::vector<std::size_t> matching(const std::string& suffix) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i].size() >= suffix.size() &&
          names_[i].compare(names_[i].size() - suffix.size(), suffix.size(), suffix) == 0)
        out.push_back(i);
    return out;
  }

 private:
  std::vector<std::string> names_;
};

/// Input pixels -> heatmap pixels: plain division by the scale.
inline Pose coords_to_heatmap_space(const Pose& pose, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("scale must be positive");
  Pose out = pose;
  for (Joint& j : out.joints) {
    j.x /= scale;
    j.y /= scale;
  }
  return out;
}

/// Heatmap pixels -> input pixels. A heatmap cell covers `scale` input pixels,
/// so its centre sits (scale - 1) / 2 past its first input pixel.
inline Pose heatmap_to_coords(const Pose& pose, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("scale must be positive");
  Pose out = pose;
  const double offset = 0.5 * (scale - 1.0);
  for (Joint& j : out.joints) {
    j.x = j.x * scale + offset;
    j.y = j.y * scale + offset;
  }
  return out;
}

/// Peak value of the normalised 2-D Gaussian.
inline double gaussian_peak(double sigma) { return 1.0 / (2.0 * std::numbers::pi * sigma * sigma); }

inline bool joint_in_heatmap(const Joint& j, double scale, std::size_t height, std::size_t width) {
  if (!j.visible || !std::isfinite(j.x) || !std::isfinite(j.y)) return false;
  const double hx = j.x / scale;
  const double hy = j.y / scale;
  return hx >= 0.0 && hy >= 0.0 && hx < static_cast<double>(width) && hy < static_cast<double>(height);
}

/// Ground-truth stack (1, k, height, width): channel c holds a normalised
/// Gaussian of width sigma (heatmap pixels) centred at joint c divided by
/// scale. Invisible or off-map joints give an all-zero channel.
inline Tensor synthesize_target(const Pose& pose, double sigma, std::size_t height, std::size_t width,
                                double scale) {
  if (!(sigma > 0.0)) throw std::invalid_argument("synthesize_target: sigma must be positive");
  if (!(scale > 0.0)) throw std::invalid_argument("synthesize_target: scale must be positive");
  Tensor out({1, pose.size(), height, width});
  const double amp = gaussian_peak(sigma);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (std::size_t c = 0; c < pose.size(); ++c) {
    const Joint& j = pose[c];
    if (!joint_in_heatmap(j, scale, height, width)) continue;
    const double cx = j.x / scale;
    const double cy = j.y / scale;
    double* plane = out.plane(0, c);
    for (std::size_t y = 0; y < height; ++y) {
      const double dy = cy - static_cast<double>(y);
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = cx - static_cast<double>(x);
        plane[y * width + x] = amp * std::exp(-(dx * dx + dy * dy) * inv);
      }
    }
  }
  return out;
}

/// Per-element loss mask matching synthesize_target: 1 for channels with a
/// target, 0 for joints that are invisible or off the map.
inline Tensor target_mask(const Pose& pose, std::size_t height, std::size_t width, double scale) {
  Tensor out({1, pose.size(), height, width});
  for (std::size_t c = 0; c < pose.size(); ++c)
    if (joint_in_heatmap(pose[c], scale, height, width))
      std::fill_n(out.plane(0, c), height * width, 1.0);
  return out;
}

/// Per-channel argmax of sample `n` of a (B, k, H, W) stack, mapped back to
/// input pixels. Ties resolve to the smallest row-major index; confidence is
/// the maximum value.
inline Pose decode_argmax(const Tensor& maps, double scale, std::size_t n = 0) {
  const Shape s = maps.shape();
  if (n >= s.n) throw std::out_of_range("decode_argmax: batch index out of range");
  Pose hm(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    const double* plane = maps.plane(n, c);
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.plane(); ++i)
      if (plane[i] > plane[best]) best = i;
    hm[c].x = static_cast<double>(best % s.w);
    hm[c].y = static_cast<double>(best / s.w);
    hm[c].confidence = plane[best];
    hm[c].visible = true;
  }
  return heatmap_to_coords(hm, scale);
}

/// Number of strict 8-neighbourhood local maxima in one plane whose value
/// exceeds `fraction` of the plane maximum.
inline std::size_t count_local_maxima(const Tensor& maps, std::size_t n, std::size_t c, double fraction) {
  const Shape s = maps.shape();
  const double* p = maps.plane(n, c);
  double peak = p[0];
  for (std::size_t i = 1; i < s.plane(); ++i) peak = std::max(peak, p[i]);
  if (!(peak > 0.0)) return 0;
  std::size_t count = 0;
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x) {
      const double v = p[y * s.w + x];
      if (v <= fraction * peak) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const long yy = static_cast<long>(y) + dy;
          const long xx = static_cast<long>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(s.h) || xx >= static_cast<long>(s.w)) continue;
          if (p[yy * s.w + xx] >= v) {
            is_max = false;
            break;
          }
        }
      if (is_max) ++count;
    }
  return count;
}

}  // namespace flowpose
