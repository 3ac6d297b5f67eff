#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "flowpose/config.hpp"
#include "flowpose/error.hpp"
#include "flowpose/eval.hpp"
#include "flowpose/flow.hpp"
#include "flowpose/heatmap.hpp"
#include "flowpose/network.hpp"
#include "flowpose/tape.hpp"
#include "flowpose/tensor.hpp"

namespace flowpose {

// ---------------------------------------------------------------------------
// Augmentation: crop -> horizontal flip -> rotation about the crop centre ->
// resize to the output size. The same map is applied to the joints.

struct AugmentParams {
  std::size_t crop = 0;         // square crop side; 0 = full frame
  double flip_prob = 0.5;
  double rotation = 40.0;       // degrees, symmetric range
  std::size_t output_size = 0;  // 0 = keep the frame size
};

struct AugmentTransform {
  std::size_t crop_x = 0, crop_y = 0;
  std::size_t crop_w = 0, crop_h = 0;
  bool flip = false;
  double angle = 0.0;  // degrees
  std::size_t out_w = 0, out_h = 0;
};

inline AugmentTransform identity_transform(std::size_t height, std::size_t width) {
  return AugmentTransform{0, 0, width, height, false, 0.0, width, height};
}

inline AugmentTransform sample_augmentation(const AugmentParams& p, std::size_t height, std::size_t width,
                                            std::mt19937_64& rng) {
  if (p.crop > height || p.crop > width)
    throw std::invalid_argument("augment: crop " + std::to_string(p.crop) + " is larger than the " +
                                std::to_string(height) + "x" + std::to_string(width) + " frame");
  if (p.rotation < 0.0) throw std::invalid_argument("augment: rotation range must be non-negative");
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  AugmentTransform t;
  t.crop_w = p.crop == 0 ? width : p.crop;
  t.crop_h = p.crop == 0 ? height : p.crop;
  t.crop_x = std::uniform_int_distribution<std::size_t>(0, width - t.crop_w)(rng);
  t.crop_y = std::uniform_int_distribution<std::size_t>(0, height - t.crop_h)(rng);
  t.flip = u01(rng) < p.flip_prob;
  t.angle = (2.0 * u01(rng) - 1.0) * p.rotation;
  t.out_w = p.output_size == 0 ? width : p.output_size;
  t.out_h = p.output_size == 0 ? height : p.output_size;
  return t;
}

namespace detail {

struct Affine {
  // Output pixel q from input pixel p: q = A p + b (and its inverse).
  double a00, a01, a10, a11, b0, b1;
  double i00, i01, i10, i11, c0, c1;
};

inline Affine make_affine(const AugmentTransform& t) {
  const double cw = static_cast<double>(t.crop_w), ch = static_cast<double>(t.crop_h);
  const double sx = static_cast<double>(t.out_w) / cw, sy = static_cast<double>(t.out_h) / ch;
  const double th = t.angle * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double mx = 0.5 * (cw - 1.0), my = 0.5 * (ch - 1.0);
  // p -> cropped: p - crop; flip: x -> cw - 1 - x; rotate about (mx, my);
  // resize: (q + 0.5) * s - 0.5.
  const double f = t.flip ? -1.0 : 1.0;
  const double fx0 = t.flip ? cw - 1.0 + static_cast<double>(t.crop_x) : -static_cast<double>(t.crop_x);
  const double fy0 = -static_cast<double>(t.crop_y);
  // After crop+flip: x1 = f * x + fx0, y1 = y + fy0.
  // After rotation: r = R (p1 - m) + m.
  Affine A{};
  const double r00 = cs * f, r01 = -sn, r10 = sn * f, r11 = cs;
  const double t0 = cs * (fx0 - mx) - sn * (fy0 - my) + mx;
  const double t1 = sn * (fx0 - mx) + cs * (fy0 - my) + my;
  A.a00 = sx * r00;
  A.a01 = sx * r01;
  A.a10 = sy * r10;
  A.a11 = sy * r11;
  A.b0 = sx * (t0 + 0.5) - 0.5;
  A.b1 = sy * (t1 + 0.5) - 0.5;
  const double det = A.a00 * A.a11 - A.a01 * A.a10;
  A.i00 = A.a11 / det;
  A.i01 = -A.a01 / det;
  A.i10 = -A.a10 / det;
  A.i11 = A.a00 / det;
  A.c0 = -(A.i00 * A.b0 + A.i01 * A.b1);
  A.c1 = -(A.i10 * A.b0 + A.i11 * A.b1);
  return A;
}

}  // namespace detail

/// Maps a joint position through the transform (no label swap).
inline Joint transform_point(const AugmentTransform& t, Joint j) {
  const detail::Affine A = detail::make_affine(t);
  const double x = A.a00 * j.x + A.a01 * j.y + A.b0;
  const double y = A.a10 * j.x + A.a11 * j.y + A.b1;
  j.x = x;
  j.y = y;
  return j;
}

/// Applies `t` to a (1, C, H, W) frame and its pose. Resampling is bilinear
/// with border replication; on a flip, left and right labels are exchanged.
inline std::pair<Tensor, Pose> apply_augmentation(const Tensor& frame, const Pose& pose, const AugmentTransform& t,
                                                  const JointSet& joints) {
  const Shape s = frame.shape();
  if (s.n != 1) throw std::invalid_argument("augment: expected a single frame");
  if (t.crop_x + t.crop_w > s.w || t.crop_y + t.crop_h > s.h)
    throw std::invalid_argument("augment: crop window exceeds the frame");
  const detail::Affine A = detail::make_affine(t);
  Tensor out({1, s.c, t.out_h, t.out_w});
  for (std::size_t y = 0; y < t.out_h; ++y)
    for (std::size_t x = 0; x < t.out_w; ++x) {
      const double qx = static_cast<double>(x), qy = static_cast<double>(y);
      const double px = A.i00 * qx + A.i01 * qy + A.c0;
      const double py = A.i10 * qx + A.i11 * qy + A.c1;
      for (std::size_t c = 0; c < s.c; ++c) out.at(0, c, y, x) = sample_clamp(frame.plane(0, c), s.h, s.w, px, py);
    }
  Pose moved(pose.size());
  for (std::size_t j = 0; j < pose.size(); ++j) {
    const std::size_t dst = t.flip ? joints.mirror(j) : j;
    moved[dst] = transform_point(t, pose[j]);
  }
  return {std::move(out), std::move(moved)};
}

// ---------------------------------------------------------------------------
// Optimiser

struct OptimizerState {
  double learning_rate = 1e-3;
  double momentum = 0.95;
  std::vector<Tensor> velocity;
  std::size_t iteration = 0;
};

/// v <- mu v - lr g; p <- p + v.
inline void sgd_momentum_step(std::vector<Parameter>& params, const std::vector<Tensor>& grads, OptimizerState& st) {
  if (grads.size() != params.size()) throw std::invalid_argument("sgd: gradient count does not match parameters");
  if (st.velocity.empty())
    for (const auto& p : params) st.velocity.emplace_back(p.value.shape());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].value.shape() || st.velocity[i].shape() != params[i].value.shape())
      throw std::invalid_argument("sgd: shape mismatch for " + params[i].name);
    double* p = params[i].value.ptr();
    double* v = st.velocity[i].ptr();
    const double* g = grads[i].ptr();
    for (std::size_t k = 0; k < params[i].value.size(); ++k) {
      v[k] = st.momentum * v[k] - st.learning_rate * g[k];
      p[k] += v[k];
    }
  }
  ++st.iteration;
}

/// Base rate, x0.1 at 2/3 and again at 5/6 of the run.
inline double scheduled_lr(double base, std::size_t iteration, std::size_t total) {
  if (3 * iteration >= 2 * total && 6 * iteration >= 5 * total) return base * 0.01;
  if (3 * iteration >= 2 * total) return base * 0.1;
  return base;
}

// ---------------------------------------------------------------------------
// Config

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t iters = 3000;
  double lr = 0.5;
  double momentum = 0.95;
  std::size_t batch = 8;
  AugmentParams augment{};
  double sigma = 1.5;  // heatmap pixels
  std::size_t n = 15;
  std::string pooling_type = "parametric";
  std::string model = "heatmap";  // heatmap | coordinate
  std::string arch = "compact";   // desk | compact | toy
  bool fusion = true;
  double w_spatial = 1.0, w_fusion = 1.0;
  std::size_t val_every = 100;
  double val_fraction = 1.0 / 6.0;
  double val_d = 2.0;  // heatmap pixels
  bool shuffle = true;
  bool lr_decay = true;  // x0.1 steps at 2/3 and 5/6 of the run
};

inline TrainConfig train_config_from(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  for (const auto& [k, v] : kv) {
    using detail::parse_value;
    if (k == "seed") c.seed = parse_value<std::uint64_t>(k, v);
    else if (k == "iters") c.iters = parse_value<std::size_t>(k, v);
    else if (k == "lr") c.lr = parse_value<double>(k, v);
    else if (k == "momentum") c.momentum = parse_value<double>(k, v);
    else if (k == "batch") c.batch = parse_value<std::size_t>(k, v);
    else if (k == "crop") c.augment.crop = parse_value<std::size_t>(k, v);
    else if (k == "flip_prob") c.augment.flip_prob = parse_value<double>(k, v);
    else if (k == "rotation") c.augment.rotation = parse_value<double>(k, v);
    else if (k == "sigma") c.sigma = parse_value<double>(k, v);
    else if (k == "n") c.n = parse_value<std::size_t>(k, v);
    else if (k == "pooling_type") c.pooling_type = v;
    else if (k == "model") c.model = v;
    else if (k == "arch") c.arch = v;
    else if (k == "fusion") c.fusion = detail::parse_bool(k, v);
    else if (k == "w_spatial") c.w_spatial = parse_value<double>(k, v);
    else if (k == "w_fusion") c.w_fusion = parse_value<double>(k, v);
    else if (k == "val_every") c.val_every = parse_value<std::size_t>(k, v);
    else if (k == "val_fraction") c.val_fraction = parse_value<double>(k, v);
    else if (k == "val_d") c.val_d = parse_value<double>(k, v);
    else if (k == "shuffle") c.shuffle = detail::parse_bool(k, v);
    else if (k == "lr_decay") c.lr_decay = detail::parse_bool(k, v);
    else throw ConfigError("unknown config key '" + k + "'");
  }
  if (c.iters == 0) throw ConfigError("config key 'iters' must be positive");
  if (c.batch == 0) throw ConfigError("config key 'batch' must be positive");
  if (!(c.lr > 0.0)) throw ConfigError("config key 'lr' must be positive");
  if (c.momentum < 0.0 || c.momentum >= 1.0) throw ConfigError("config key 'momentum' must be in [0, 1)");
  if (!(c.sigma > 0.0)) throw ConfigError("config key 'sigma' must be positive");
  if (c.augment.flip_prob < 0.0 || c.augment.flip_prob > 1.0) throw ConfigError("config key 'flip_prob' must be in [0, 1]");
  if (c.augment.rotation < 0.0) throw ConfigError("config key 'rotation' must be non-negative");
  if (c.val_fraction < 0.0 || c.val_fraction >= 1.0) throw ConfigError("config key 'val_fraction' must be in [0, 1)");
  if (c.model != "heatmap" && c.model != "coordinate") throw ConfigError("config key 'model' must be heatmap or coordinate");
  if (c.arch != "desk" && c.arch != "compact" && c.arch != "toy") throw ConfigError("config key 'arch' must be desk, compact or toy");
  if (c.pooling_type != "parametric" && c.pooling_type != "sum" && c.pooling_type != "max")
    throw ConfigError("config key 'pooling_type' must be parametric, sum or max");
  return c;
}

inline TrainConfig parse_train_config(const std::string& text) {
  std::istringstream is(text);
  return train_config_from(parse_key_values(is));
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return train_config_from(parse_key_values(is));
}

/// Network architecture named by a training config for frames of the given size.
inline NetworkConfig network_config_for(const TrainConfig& c, std::size_t input, std::size_t joints) {
  NetworkConfig nc;
  if (c.model == "coordinate") {
    nc = coordinate_config(input, joints);
  } else if (c.arch == "desk") {
    nc = desk_config(input, joints);
  } else if (c.arch == "toy") {
    nc = toy_config(input, joints);
    nc.input_channels = 3;
  } else {
    nc = compact_config(input, joints);
  }
  if (!c.fusion) {
    nc.fusion.clear();
    nc.fusion_source.clear();
  }
  nc.w_spatial = c.w_spatial;
  nc.w_fusion = c.w_fusion;
  return nc;
}

// ---------------------------------------------------------------------------
// Training loop

struct LossRow {
  std::size_t iteration = 0;
  double train_loss = 0.0;
  std::optional<double> val_pck;
};

struct TrainResult {
  Network best;
  std::vector<LossRow> curve;
  double best_val_pck = -1.0;
  std::size_t best_iteration = 0;
};

/// Poses predicted for each frame by a heatmap or coordinate network.
inline std::vector<Pose> predict_poses(const Network& net, const std::vector<Tensor>& frames, std::size_t batch = 16) {
  std::vector<Pose> out;
  const auto& cfg = net.config();
  for (std::size_t b = 0; b < frames.size(); b += batch) {
    const std::size_t e = std::min(frames.size(), b + batch);
    const Tensor x = stack_batch(std::span<const Tensor>(frames.data() + b, e - b));
    Tape tape;
    const ForwardResult r = net.forward(tape, x, false);
    for (std::size_t i = 0; i < e - b; ++i) {
      if (cfg.model == ModelKind::coordinate)
        out.push_back(decode_coordinates(tape.value(r.spatial), i, cfg.input_h, cfg.input_w));
      else
        out.push_back(decode_argmax(tape.value(r.heatmap()), static_cast<double>(cfg.heatmap_scale()), i));
    }
  }
  return out;
}

/// Mean PCK over joints at threshold d (input pixels).
inline double mean_pck(const std::vector<Pose>& pred, const std::vector<Pose>& gt, const JointSet& joints, double d) {
  const PckCurve c = pck(pred, gt, {d}, joints);
  double acc = 0.0;
  for (const auto& j : c.joints) acc += j.accuracy[0];
  return acc / static_cast<double>(c.joints.size());
}

struct TrainHooks {
  std::function<void(std::size_t iteration, const Network&)> on_iteration;
};

/// Minibatch SGD on (frames, poses). Validation PCK (mean over joints at
/// val_d heatmap pixels) is measured every val_every iterations and at the
/// end; the returned network is the best-scoring snapshot. Without validation
/// data the final network is returned.
inline TrainResult train(Network net, const std::vector<Tensor>& frames, const std::vector<Pose>& poses,
                         const std::vector<Tensor>& val_frames, const std::vector<Pose>& val_poses,
                         const TrainConfig& cfg, const JointSet& joints, const TrainHooks& hooks = {}) {
  if (frames.empty()) throw std::invalid_argument("train: empty dataset");
  if (frames.size() != poses.size() || val_frames.size() != val_poses.size())
    throw std::invalid_argument("train: frames and poses differ in count");
  const NetworkConfig& nc = net.config();
  const bool coord = nc.model == ModelKind::coordinate;
  const double scale = static_cast<double>(nc.heatmap_scale());
  const std::size_t hh = nc.heatmap_h(), hw = nc.heatmap_w();

  std::mt19937_64 order_rng(cfg.seed);
  std::mt19937_64 aug_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 17);
  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  OptimizerState opt;
  opt.momentum = cfg.momentum;
  TrainResult result{net, {}, -1.0, 0};
  AugmentParams aug = cfg.augment;
  aug.output_size = nc.input_h;

  for (std::size_t it = 0; it < cfg.iters; ++it) {
    std::vector<Tensor> xs;
    std::vector<Pose> ps;
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      if (cursor == order.size()) {
        if (cfg.shuffle) std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      const std::size_t idx = order[cursor++];
      const AugmentTransform t = sample_augmentation(aug, frames[idx].shape().h, frames[idx].shape().w, aug_rng);
      auto [x, p] = apply_augmentation(frames[idx], poses[idx], t, joints);
      xs.push_back(std::move(x));
      ps.push_back(std::move(p));
    }
    const Tensor batch = stack_batch(xs);
    Tape tape;
    const ForwardResult r = net.forward(tape, batch, true);
    Var loss;
    if (coord) {
      const Tensor target = normalized_coordinates(ps, nc.input_h, nc.input_w);
      const Tensor mask = coordinate_mask(ps, nc.input_h, nc.input_w);
      loss = l2_loss(tape, r.spatial, target, &mask);
    } else {
      std::vector<Tensor> ts, ms;
      for (const Pose& p : ps) {
        ts.push_back(synthesize_target(p, cfg.sigma, hh, hw, scale));
        ms.push_back(target_mask(p, hh, hw, scale));
      }
      const Tensor target = stack_batch(ts), mask = stack_batch(ms);
      loss = heatmap_objective(tape, net, r, target, &mask);
    }
    const double lv = tape.value(loss)[0];
    if (!std::isfinite(lv))
      throw DivergenceError("training diverged at iteration " + std::to_string(it) + " (loss " + std::to_string(lv) +
                            "); lower the learning rate");
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(r.params.size());
    for (Var p : r.params) grads.push_back(tape.grad(p));
    opt.learning_rate = cfg.lr_decay ? scheduled_lr(cfg.lr, it, cfg.iters) : cfg.lr;
    sgd_momentum_step(net.parameters(), grads, opt);

    LossRow row{it, lv, std::nullopt};
    const bool last = it + 1 == cfg.iters;
    if (!val_frames.empty() && cfg.val_every > 0 && ((it + 1) % cfg.val_every == 0 || last)) {
      const double v = mean_pck(predict_poses(net, val_frames), val_poses, joints, cfg.val_d * scale);
      row.val_pck = v;
      if (v > result.best_val_pck) {
        result.best_val_pck = v;
        result.best_iteration = it + 1;
        result.best = net;
      }
    }
    result.curve.push_back(row);
    if (hooks.on_iteration) hooks.on_iteration(it + 1, net);
  }
  if (val_frames.empty() || cfg.val_every == 0) {
    result.best = net;
    result.best_iteration = cfg.iters;
  }
  return result;
}

inline void write_loss_csv(std::ostream& os, const std::vector<LossRow>& rows) {
  os << "iteration,train_loss,val_pck\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.train_loss);
    os << r.iteration << "," << buf << ",";
    if (r.val_pck) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.val_pck);
      os << buf;
    }
    os << "\n";
  }
}

}  // namespace flowpose
