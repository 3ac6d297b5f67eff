#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowpose/error.hpp"
#include "flowpose/flow.hpp"
#include "flowpose/heatmap.hpp"
#include "flowpose/tensor.hpp"

namespace flowpose {

using Color = std::array<double, 3>;

/// Upper-body puppet: a rigid head/torso block carried by a root that
/// translates and tilts, plus two-segment arms. Arm angles are absolute image
/// angles (radians, 0 = +x, pi/2 = +y i.e. down) added to the torso tilt.
struct PuppetSpec {
  std::size_t width = 64, height = 64;

  // Rest geometry (pixels); the root sits on the head centre.
  double root_x = 32.0, root_y = 20.0;
  double shoulder_dx = 8.0, shoulder_dy = 7.0;  // from head centre
  double upper_arm = 10.0, forearm = 9.0;
  double head_radius = 4.5;
  double torso_length = 22.0, torso_radius = 6.5;
  double arm_radius = 2.2, hand_radius = 2.8;

  // Angle ranges for the left arm (image right); the right arm mirrors them.
  double elbow_min = -0.7, elbow_max = 1.75;
  double wrist_min = -1.4, wrist_max = 2.6;
  double tilt_range = 0.2;

  // Motion model: velocities perform a bounded random walk.
  double max_angular_velocity = 0.12;  // radians / frame
  double angular_accel = 0.04;         // std of per-frame velocity change
  double root_range = 3.0;             // max |offset| from rest, pixels
  double max_root_velocity = 0.6;
  double root_accel = 0.2;

  // Appearance.
  double texture_amplitude = 0.12;
  double drift_x = 0.0, drift_y = 0.0;  // background motion, pixels / frame
  double noise_sigma = 0.0;             // per-frame Gaussian pixel noise
  std::size_t distractors = 0;          // per-frame hand-coloured blobs
  double margin = 1.0;                  // joints stay this far inside the frame

  Color background{0.35, 0.4, 0.35};
  Color torso_color{0.25, 0.3, 0.6};
  Color head_color{0.9, 0.75, 0.6};
  Color upper_arm_color{0.85, 0.25, 0.2};
  Color forearm_color{0.2, 0.75, 0.3};
  Color hand_color{0.95, 0.9, 0.2};
};

inline JointSet puppet_joints() { return JointSet::upper_body(); }

/// Kinematic parent of every puppet joint (-1 for the root).
inline std::vector<int> puppet_parents() { return {-1, 0, 0, 1, 2, 3, 4}; }

/// Validates a parent list: exactly one root, parents precede children.
inline void validate_kinematic_tree(const std::vector<int>& parents) {
  std::size_t roots = 0;
  for (std::size_t i = 0; i < parents.size(); ++i) {
    if (parents[i] < 0) {
      ++roots;
      continue;
    }
    if (static_cast<std::size_t>(parents[i]) >= i) throw ConfigError("kinematic tree: parent must precede joint " + std::to_string(i));
  }
  if (roots != 1) throw ConfigError("kinematic tree must have exactly one root");
}

struct PuppetState {
  double x = 0, y = 0, tilt = 0;  // root offset from rest and torso tilt
  std::array<double, 4> angle{};  // left elbow, right elbow, left wrist, right wrist segments
  double vx = 0, vy = 0, vtilt = 0;
  std::array<double, 4> vel{};
};

namespace detail {

struct Vec2 {
  double x = 0, y = 0;
};

inline Vec2 rotate(Vec2 v, double a) {
  const double c = std::cos(a), s = std::sin(a);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

struct PuppetGeometry {
  Vec2 head, lsh, rsh, lel, rel, lwr, rwr, hip;
  // Mid-chest point the shoulder bar and torso hang from.
  Vec2 neck;
};

inline PuppetGeometry geometry(const PuppetSpec& s, const PuppetState& st) {
  PuppetGeometry g;
  g.head = {s.root_x + st.x, s.root_y + st.y};
  auto body = [&](double dx, double dy) {
    const Vec2 r = rotate({dx, dy}, st.tilt);
    return Vec2{g.head.x + r.x, g.head.y + r.y};
  };
  g.lsh = body(s.shoulder_dx, s.shoulder_dy);
  g.rsh = body(-s.shoulder_dx, s.shoulder_dy);
  g.neck = body(0.0, s.shoulder_dy);
  g.hip = body(0.0, s.shoulder_dy + s.torso_length);
  auto seg = [&](Vec2 from, double len, double a) {
    return Vec2{from.x + len * std::cos(a + st.tilt), from.y + len * std::sin(a + st.tilt)};
  };
  g.lel = seg(g.lsh, s.upper_arm, st.angle[0]);
  g.rel = seg(g.rsh, s.upper_arm, st.angle[1]);
  g.lwr = seg(g.lel, s.forearm, st.angle[2]);
  g.rwr = seg(g.rel, s.forearm, st.angle[3]);
  return g;
}

// A drawable part: a capsule (a == b gives a disk) attached to a rigid frame
// given by an anchor point and an orientation.
struct Primitive {
  Vec2 a, b;
  double radius;
  Color color;
  Vec2 anchor;
  double orientation;
};

inline std::vector<Primitive> primitives(const PuppetSpec& s, const PuppetState& st) {
  const PuppetGeometry g = geometry(s, st);
  const double ul = st.angle[0] + st.tilt, ur = st.angle[1] + st.tilt;
  const double fl = st.angle[2] + st.tilt, fr = st.angle[3] + st.tilt;
  return {
      {g.neck, g.hip, s.torso_radius, s.torso_color, g.head, st.tilt},
      {g.lsh, g.rsh, s.arm_radius + 0.5, s.torso_color, g.head, st.tilt},
      {g.head, g.head, s.head_radius, s.head_color, g.head, st.tilt},
      {g.lsh, g.lel, s.arm_radius, s.upper_arm_color, g.lsh, ul},
      {g.rsh, g.rel, s.arm_radius, s.upper_arm_color, g.rsh, ur},
      {g.lel, g.lwr, s.arm_radius, s.forearm_color, g.lel, fl},
      {g.rel, g.rwr, s.arm_radius, s.forearm_color, g.rel, fr},
      {g.lwr, g.lwr, s.hand_radius, s.hand_color, g.lel, fl},
      {g.rwr, g.rwr, s.hand_radius, s.hand_color, g.rel, fr},
  };
}

inline double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx), ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

// Anti-aliased coverage of a pixel centred at p.
inline double coverage(const Primitive& pr, Vec2 p) {
  return std::clamp(pr.radius + 0.5 - segment_distance(p, pr.a, pr.b), 0.0, 1.0);
}

inline Pose pose_of(const PuppetSpec& s, const PuppetState& st) {
  const PuppetGeometry g = geometry(s, st);
  Pose p(7);
  const Vec2 pts[7] = {g.head, g.lsh, g.rsh, g.lel, g.rel, g.lwr, g.rwr};
  for (std::size_t i = 0; i < 7; ++i) p[i] = Joint{pts[i].x, pts[i].y, 1.0, true};
  return p;
}

inline bool inside(const PuppetSpec& s, const Pose& p) {
  for (const Joint& j : p.joints)
    if (j.x < s.margin || j.y < s.margin || j.x > static_cast<double>(s.width) - 1.0 - s.margin ||
        j.y > static_cast<double>(s.height) - 1.0 - s.margin)
      return false;
  return true;
}

inline double texture(const PuppetSpec& s, std::size_t c, double x, double y) {
  const double phase = 1.7 * static_cast<double>(c);
  return s.background[c] + s.texture_amplitude * (0.6 * std::sin(0.31 * x + 0.17 * y + phase) +
                                                  0.4 * std::sin(0.11 * x - 0.37 * y + 2.0 * phase));
}

}  // namespace detail

inline void validate(const PuppetSpec& s) {
  validate_kinematic_tree(puppet_parents());
  if (s.width < 8 || s.height < 8) throw ConfigError("puppet frame must be at least 8x8");
  if (s.upper_arm <= 0 || s.forearm <= 0 || s.head_radius <= 0 || s.arm_radius <= 0 || s.hand_radius <= 0 ||
      s.torso_radius <= 0)
    throw ConfigError("limb lengths and thicknesses must be positive");
  if (s.elbow_min > s.elbow_max || s.wrist_min > s.wrist_max || s.tilt_range < 0 || s.root_range < 0)
    throw ConfigError("motion ranges must be non-empty");
  if (s.max_angular_velocity < 0 || s.angular_accel < 0 || s.max_root_velocity < 0 || s.root_accel < 0 ||
      s.noise_sigma < 0)
    throw ConfigError("motion and noise parameters must be non-negative");
  PuppetState rest;
  rest.angle = {0.5 * (s.elbow_min + s.elbow_max), std::numbers::pi - 0.5 * (s.elbow_min + s.elbow_max),
                0.5 * (s.wrist_min + s.wrist_max), std::numbers::pi - 0.5 * (s.wrist_min + s.wrist_max)};
  if (!detail::inside(s, detail::pose_of(s, rest))) throw ConfigError("puppet rest pose does not fit in the frame");
}

struct Sequence {
  std::vector<Tensor> frames;  // (1, 3, H, W) each
  std::vector<Pose> poses;
  std::vector<PuppetState> states;
};

namespace detail {

inline Tensor render(const PuppetSpec& s, const PuppetState& st, std::size_t t, std::mt19937_64& rng) {
  Tensor img({1, 3, s.height, s.width});
  const double ox = s.drift_x * static_cast<double>(t), oy = s.drift_y * static_cast<double>(t);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < s.height; ++y)
      for (std::size_t x = 0; x < s.width; ++x)
        img.at(0, c, y, x) = texture(s, c, static_cast<double>(x) - ox, static_cast<double>(y) - oy);

  std::vector<Primitive> parts;
  if (s.distractors > 0) {
    std::uniform_real_distribution<double> ux(0.0, static_cast<double>(s.width - 1));
    std::uniform_real_distribution<double> uy(0.0, static_cast<double>(s.height - 1));
    for (std::size_t i = 0; i < s.distractors; ++i) {
      const Vec2 p{ux(rng), uy(rng)};
      parts.push_back({p, p, s.hand_radius, s.hand_color, p, 0.0});
    }
  }
  for (const Primitive& pr : primitives(s, st)) parts.push_back(pr);
  for (const Primitive& pr : parts) {
    const double r = pr.radius + 1.0;
    const long x0 = std::max(0L, static_cast<long>(std::floor(std::min(pr.a.x, pr.b.x) - r)));
    const long x1 = std::min(static_cast<long>(s.width) - 1, static_cast<long>(std::ceil(std::max(pr.a.x, pr.b.x) + r)));
    const long y0 = std::max(0L, static_cast<long>(std::floor(std::min(pr.a.y, pr.b.y) - r)));
    const long y1 = std::min(static_cast<long>(s.height) - 1, static_cast<long>(std::ceil(std::max(pr.a.y, pr.b.y) + r)));
    for (long y = y0; y <= y1; ++y)
      for (long x = x0; x <= x1; ++x) {
        const double a = coverage(pr, {static_cast<double>(x), static_cast<double>(y)});
        if (a <= 0.0) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          double& v = img.at(0, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
          v = a * pr.color[c] + (1.0 - a) * v;
        }
      }
  }
  if (s.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, s.noise_sigma);
    for (double& v : img.storage()) v += noise(rng);
  }
  return img;
}

inline void reflect(double& value, double& vel, double lo, double hi) {
  if (value > hi) {
    value = 2 * hi - value;
    vel = -vel;
  } else if (value < lo) {
    value = 2 * lo - value;
    vel = -vel;
  }
  value = std::clamp(value, lo, hi);
}

inline PuppetState step(const PuppetSpec& s, const PuppetState& prev, std::mt19937_64& rng) {
  std::normal_distribution<double> ang(0.0, 1.0);
  PuppetState st = prev;
  auto walk = [&](double& value, double& vel, double accel, double vmax, double lo, double hi) {
    vel = std::clamp(vel + accel * ang(rng), -vmax, vmax);
    value += vel;
    reflect(value, vel, lo, hi);
  };
  const double pi = std::numbers::pi;
  walk(st.x, st.vx, s.root_accel, s.max_root_velocity, -s.root_range, s.root_range);
  walk(st.y, st.vy, s.root_accel, s.max_root_velocity, -s.root_range, s.root_range);
  walk(st.tilt, st.vtilt, 0.25 * s.angular_accel, 0.25 * s.max_angular_velocity, -s.tilt_range, s.tilt_range);
  walk(st.angle[0], st.vel[0], s.angular_accel, s.max_angular_velocity, s.elbow_min, s.elbow_max);
  walk(st.angle[1], st.vel[1], s.angular_accel, s.max_angular_velocity, pi - s.elbow_max, pi - s.elbow_min);
  walk(st.angle[2], st.vel[2], s.angular_accel, s.max_angular_velocity, s.wrist_min, s.wrist_max);
  walk(st.angle[3], st.vel[3], s.angular_accel, s.max_angular_velocity, pi - s.wrist_max, pi - s.wrist_min);
  return st;
}

}  // namespace detail

/// Deterministic puppet video. Joints never leave the frame: a motion step
/// that would push one outside is replaced by a fresh draw, and after a few
/// failures the puppet holds still for that frame with velocities reversed.
inline Sequence generate_sequence(const PuppetSpec& spec, std::size_t length, std::uint64_t seed) {
  if (length == 0) throw std::invalid_argument("generate_sequence: length must be at least 1");
  validate(spec);
  std::mt19937_64 motion_rng(seed);
  std::mt19937_64 appearance_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const double pi = std::numbers::pi;
  PuppetState st;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * u01(motion_rng); };
  for (int attempt = 0;; ++attempt) {
    st.x = between(-spec.root_range, spec.root_range);
    st.y = between(-spec.root_range, spec.root_range);
    st.tilt = between(-spec.tilt_range, spec.tilt_range);
    st.angle[0] = between(spec.elbow_min, spec.elbow_max);
    st.angle[1] = pi - between(spec.elbow_min, spec.elbow_max);
    st.angle[2] = between(spec.wrist_min, spec.wrist_max);
    st.angle[3] = pi - between(spec.wrist_min, spec.wrist_max);
    if (detail::inside(spec, detail::pose_of(spec, st))) break;
    if (attempt > 1000) throw ConfigError("cannot place the puppet inside the frame; reduce motion ranges");
  }
  Sequence seq;
  for (std::size_t t = 0; t < length; ++t) {
    if (t > 0) {
      PuppetState next;
      bool ok = false;
      for (int attempt = 0; attempt < 8 && !ok; ++attempt) {
        next = detail::step(spec, st, motion_rng);
        ok = detail::inside(spec, detail::pose_of(spec, next));
      }
      if (ok) {
        st = next;
      } else {
        st.vx = -st.vx;
        st.vy = -st.vy;
        st.vtilt = -st.vtilt;
        for (double& v : st.vel) v = -v;
      }
    }
    seq.states.push_back(st);
    seq.poses.push_back(detail::pose_of(spec, st));
    seq.frames.push_back(detail::render(spec, st, t, appearance_rng));
  }
  return seq;
}

/// Exact displacement from frame t to frame t + delta at full resolution.
/// Each pixel follows the top-most puppet part covering it at frame t (by at
/// least half) under that part's rigid motion; other pixels move with the
/// background drift.
inline FlowField true_flow(const PuppetSpec& spec, const Sequence& seq, std::size_t t, long delta) {
  const long target = static_cast<long>(t) + delta;
  if (t >= seq.states.size() || target < 0 || target >= static_cast<long>(seq.states.size()))
    throw std::out_of_range("true_flow: frame index out of range");
  FlowField f(spec.height, spec.width);
  f.from_frame = static_cast<long>(t);
  f.to_frame = target;
  const auto from = detail::primitives(spec, seq.states[t]);
  const auto to = detail::primitives(spec, seq.states[static_cast<std::size_t>(target)]);
  const double bgx = spec.drift_x * static_cast<double>(delta), bgy = spec.drift_y * static_cast<double>(delta);
  for (std::size_t y = 0; y < spec.height; ++y)
    for (std::size_t x = 0; x < spec.width; ++x) {
      const detail::Vec2 p{static_cast<double>(x), static_cast<double>(y)};
      double u = bgx, v = bgy;
      for (std::size_t i = from.size(); i-- > 0;) {
        if (detail::coverage(from[i], p) < 0.5) continue;
        const detail::Vec2 local{p.x - from[i].anchor.x, p.y - from[i].anchor.y};
        const detail::Vec2 moved = detail::rotate(local, to[i].orientation - from[i].orientation);
        u = to[i].anchor.x + moved.x - p.x;
        v = to[i].anchor.y + moved.y - p.y;
        break;
      }
      f.u_at(y, x) = u;
      f.v_at(y, x) = v;
    }
  return f;
}

/// Pixels covered (by at least half) by some puppet part at frame t.
inline std::vector<bool> foreground_mask(const PuppetSpec& spec, const Sequence& seq, std::size_t t) {
  const auto parts = detail::primitives(spec, seq.states.at(t));
  std::vector<bool> mask(spec.width * spec.height, false);
  for (std::size_t y = 0; y < spec.height; ++y)
    for (std::size_t x = 0; x < spec.width; ++x)
      for (const auto& pr : parts)
        if (detail::coverage(pr, {static_cast<double>(x), static_cast<double>(y)}) >= 0.5) {
          mask[y * spec.width + x] = true;
          break;
        }
  return mask;
}

/// Gaussian jitter of every joint plus, with probability `outlier_rate` per
/// joint, relocation to a uniformly random pixel position.
inline std::vector<Pose> add_label_noise(const std::vector<Pose>& poses, double jitter_sigma, double outlier_rate,
                                         std::uint64_t seed, std::size_t width, std::size_t height) {
  if (outlier_rate < 0.0 || outlier_rate > 1.0) throw std::invalid_argument("outlier_rate must be in [0, 1]");
  if (jitter_sigma < 0.0) throw std::invalid_argument("jitter_sigma must be non-negative");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Pose> out = poses;
  for (Pose& p : out)
    for (Joint& j : p.joints) {
      const double dx = jitter(rng), dy = jitter(rng);
      const double roll = u01(rng);
      const double rx = u01(rng) * static_cast<double>(width), ry = u01(rng) * static_cast<double>(height);
      if (roll < outlier_rate) {
        j.x = rx;
        j.y = ry;
      } else if (jitter_sigma > 0.0) {
        j.x += jitter_sigma * dx;
        j.y += jitter_sigma * dy;
      }
    }
  return out;
}

}  // namespace flowpose
