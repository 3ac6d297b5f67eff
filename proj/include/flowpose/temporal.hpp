#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowpose/error.hpp"
#include "flowpose/flow.hpp"
#include "flowpose/heatmap.hpp"
#include "flowpose/tape.hpp"
#include "flowpose/tensor.hpp"

namespace flowpose {

// A warped stack is a (2n+1, k, H, W) tensor; slot tau holds the heatmaps of
// frame t + (tau - n) warped onto frame t.

/// (2n+1) x k cross-channel pooling weights, no sign constraint.
class PoolingWeights {
 public:
  PoolingWeights() = default;
  PoolingWeights(std::size_t n, std::size_t joints, double fill = 0.0)
      : n_(n), joints_(joints), w_((2 * n + 1) * joints, fill) {}

  static PoolingWeights uniform(std::size_t n, std::size_t joints) {
    return PoolingWeights(n, joints, 1.0 / static_cast<double>(2 * n + 1));
  }
  static PoolingWeights center(std::size_t n, std::size_t joints) {
    PoolingWeights p(n, joints);
    for (std::size_t c = 0; c < joints; ++c) p(n, c) = 1.0;
    return p;
  }

  std::size_t n() const { return n_; }
  std::size_t taps() const { return 2 * n_ + 1; }
  std::size_t joints() const { return joints_; }

  double& operator()(std::size_t tau, std::size_t c) { return w_.at(tau * joints_ + c); }
  double operator()(std::size_t tau, std::size_t c) const { return w_.at(tau * joints_ + c); }

  /// Weight at temporal offset d in [-n, n].
  double at_offset(long d, std::size_t c) const { return (*this)(static_cast<std::size_t>(d + static_cast<long>(n_)), c); }

  /// As a (1, 1, 2n+1, k) tensor.
  Tensor tensor() const { return Tensor({1, 1, taps(), joints_}, w_); }
  static PoolingWeights from_tensor(const Tensor& t) {
    const Shape s = t.shape();
    if (s.n != 1 || s.c != 1 || s.h % 2 == 0) throw FormatError("pooling weights tensor must be (1,1,2n+1,k)");
    PoolingWeights p((s.h - 1) / 2, s.w);
    p.w_ = t.storage();
    return p;
  }

  const std::vector<double>& values() const { return w_; }

  friend bool operator==(const PoolingWeights&, const PoolingWeights&) = default;

 private:
  std::size_t n_ = 0, joints_ = 0;
  std::vector<double> w_;
};

namespace detail {

inline void check_stack(const Tensor& warped, std::size_t taps, std::size_t joints) {
  const Shape s = warped.shape();
  if (s.n != taps || s.c != joints)
    throw std::invalid_argument("warped stack " + s.str() + " does not match pooling weights (" +
                                std::to_string(taps) + " taps, " + std::to_string(joints) + " joints)");
}

}  // namespace detail

/// composite[c] = sum_tau w[tau][c] * warped[tau][c]. No rectification.
inline Tensor pool_parametric(const Tensor& warped, const PoolingWeights& w) {
  detail::check_stack(warped, w.taps(), w.joints());
  const Shape s = warped.shape();
  Tensor out({1, s.c, s.h, s.w});
  for (std::size_t c = 0; c < s.c; ++c) {
    double* dst = out.plane(0, c);
    for (std::size_t tau = 0; tau < s.n; ++tau) {
      const double wt = w(tau, c);
      const double* src = warped.plane(tau, c);
      for (std::size_t i = 0; i < s.plane(); ++i) dst[i] += wt * src[i];
    }
  }
  return out;
}

/// Differentiable form; `weights` is a (1, 1, 2n+1, k) tensor.
inline Var pool_parametric(Tape& tape, Var warped, Var weights) {
  const Tensor& x = tape.value(warped);
  const Tensor& wt = tape.value(weights);
  if (wt.shape().n != 1 || wt.shape().c != 1) throw std::invalid_argument("pooling weights must be (1,1,2n+1,k)");
  detail::check_stack(x, wt.shape().h, wt.shape().w);
  Tensor out = pool_parametric(x, PoolingWeights::from_tensor(wt));
  const Var out_var{tape.size()};
  return tape.record(std::move(out), {warped, weights}, [=](Tape& t) {
    const Tensor& g = t.grad_buffer(out_var);
    const Tensor& xv = t.value(warped);
    const Tensor& wv = t.value(weights);
    const Shape s = xv.shape();
    const std::size_t k = s.c;
    if (t.wants_grad(weights)) {
      Tensor& gw = t.grad_buffer(weights);
      for (std::size_t tau = 0; tau < s.n; ++tau)
        for (std::size_t c = 0; c < k; ++c) {
          const double* src = xv.plane(tau, c);
          const double* gp = g.plane(0, c);
          double acc = 0.0;
          for (std::size_t i = 0; i < s.plane(); ++i) acc += gp[i] * src[i];
          gw[tau * k + c] += acc;
        }
    }
    if (t.wants_grad(warped)) {
      Tensor& gx = t.grad_buffer(warped);
      for (std::size_t tau = 0; tau < s.n; ++tau)
        for (std::size_t c = 0; c < k; ++c) {
          const double wtc = wv[tau * k + c];
          const double* gp = g.plane(0, c);
          double* dst = gx.plane(tau, c);
          for (std::size_t i = 0; i < s.plane(); ++i) dst[i] += wtc * gp[i];
        }
    }
  });
}

inline Tensor pool_sum(const Tensor& warped) {
  const Shape s = warped.shape();
  if (s.n == 0) throw std::invalid_argument("pool_sum: empty stack");
  Tensor out({1, s.c, s.h, s.w});
  for (std::size_t tau = 0; tau < s.n; ++tau)
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* src = warped.plane(tau, c);
      double* dst = out.plane(0, c);
      for (std::size_t i = 0; i < s.plane(); ++i) dst[i] += src[i];
    }
  return out;
}

inline Tensor pool_max(const Tensor& warped) {
  const Shape s = warped.shape();
  if (s.n == 0) throw std::invalid_argument("pool_max: empty stack");
  Tensor out = batch_item(warped, 0);
  for (std::size_t tau = 1; tau < s.n; ++tau)
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* src = warped.plane(tau, c);
      double* dst = out.plane(0, c);
      for (std::size_t i = 0; i < s.plane(); ++i) dst[i] = std::max(dst[i], src[i]);
    }
  return out;
}

enum class PoolingType { parametric, sum, max };

inline PoolingType pooling_type_from_string(const std::string& s) {
  if (s == "parametric") return PoolingType::parametric;
  if (s == "sum") return PoolingType::sum;
  if (s == "max") return PoolingType::max;
  throw ConfigError("unknown pooling type: " + s + " (expected parametric, sum or max)");
}

inline Tensor pool(const Tensor& warped, PoolingType type, const PoolingWeights* w = nullptr) {
  switch (type) {
    case PoolingType::sum: return pool_sum(warped);
    case PoolingType::max: return pool_max(warped);
    case PoolingType::parametric:
      if (!w) throw std::invalid_argument("parametric pooling needs weights");
      return pool_parametric(warped, *w);
  }
  throw std::invalid_argument("bad pooling type");
}

/// Flow from frame t to frame t + delta, at heatmap resolution.
using FlowProvider = std::function<FlowField(std::size_t t, long delta)>;

/// Warped stack for frame t from per-frame heatmaps (each (1, k, H, W)).
/// Offsets that fall outside the sequence contribute all-zero maps; offset 0
/// is the frame's own heatmap without resampling.
inline Tensor build_warped_stack(const std::vector<Tensor>& heatmaps, std::size_t t, std::size_t n,
                                 const FlowProvider& flow) {
  if (t >= heatmaps.size()) throw std::out_of_range("build_warped_stack: frame index out of range");
  const Shape s = heatmaps[t].shape();
  Tensor out({2 * n + 1, s.c, s.h, s.w});
  for (long d = -static_cast<long>(n); d <= static_cast<long>(n); ++d) {
    const long src = static_cast<long>(t) + d;
    if (src < 0 || src >= static_cast<long>(heatmaps.size())) continue;
    const Tensor& h = heatmaps[static_cast<std::size_t>(src)];
    if (h.shape() != s) throw std::invalid_argument("build_warped_stack: heatmap shapes differ");
    const Tensor warped = d == 0 ? h : warp_heatmap(h, flow(t, d));
    std::copy(warped.storage().begin(), warped.storage().end(),
              out.storage().begin() + static_cast<long>((static_cast<std::size_t>(d + static_cast<long>(n))) * s.c * s.plane()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Learning

struct PoolingSample {
  Tensor warped;  // (2n+1, k, H, W)
  Tensor target;  // (1, k, H, W)
};

struct PoolingTrainParams {
  std::size_t iterations = 3000;
  double momentum = 0.9;
  double step_scale = 1.0;  // step = step_scale / curvature bound, per joint
};

struct PoolingTrainResult {
  PoolingWeights weights;
  std::vector<double> loss;  // per iteration, before the update
};

/// Mean squared error of parametric pooling over the samples.
inline double pooling_loss(const std::vector<PoolingSample>& samples, const PoolingWeights& w) {
  double acc = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    const Tensor pred = pool_parametric(s.warped, w);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred[i] - s.target[i];
      acc += d * d;
    }
    count += pred.size();
  }
  return acc / static_cast<double>(count);
}

/// Full-batch gradient descent with momentum on the mean l2 loss. The loss is
/// quadratic in the weights, so each joint's gradient is assembled from
/// accumulated second moments, 2/N (G w - b), which is the same quantity
/// backpropagation through pool_parametric yields.
inline PoolingTrainResult learn_pooling_weights(const std::vector<PoolingSample>& samples, PoolingWeights init,
                                                const PoolingTrainParams& p = {}) {
  if (samples.empty()) throw std::invalid_argument("learn_pooling_weights: no samples");
  const std::size_t taps = init.taps(), k = init.joints();
  const Shape s0 = samples.front().warped.shape();
  std::vector<std::vector<double>> gram(k, std::vector<double>(taps * taps, 0.0));
  std::vector<std::vector<double>> cross(k, std::vector<double>(taps, 0.0));
  std::vector<double> tt(k, 0.0);
  for (const auto& s : samples) {
    if (s.warped.shape() != s0)
      throw std::invalid_argument("learn_pooling_weights: inconsistent stack shapes " + s.warped.shape().str() +
                                  " vs " + s0.str());
    detail::check_stack(s.warped, taps, k);
    if (s.target.shape() != Shape{1, k, s0.h, s0.w}) throw std::invalid_argument("learn_pooling_weights: bad target shape");
    for (std::size_t c = 0; c < k; ++c) {
      const double* tgt = s.target.plane(0, c);
      for (std::size_t a = 0; a < taps; ++a) {
        const double* ha = s.warped.plane(a, c);
        for (std::size_t b = a; b < taps; ++b) {
          const double* hb = s.warped.plane(b, c);
          double acc = 0.0;
          for (std::size_t i = 0; i < s0.plane(); ++i) acc += ha[i] * hb[i];
          gram[c][a * taps + b] += acc;
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < s0.plane(); ++i) acc += ha[i] * tgt[i];
        cross[c][a] += acc;
      }
      for (std::size_t i = 0; i < s0.plane(); ++i) tt[c] += tgt[i] * tgt[i];
    }
  }
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t a = 0; a < taps; ++a)
      for (std::size_t b = 0; b < a; ++b) gram[c][a * taps + b] = gram[c][b * taps + a];

  const double inv_n = 1.0 / static_cast<double>(samples.size() * k * s0.plane());
  // Per-joint step from the trace bound on the Hessian 2/N * G.
  std::vector<double> step(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    double tr = 0.0;
    for (std::size_t a = 0; a < taps; ++a) tr += gram[c][a * taps + a];
    const double curvature = 2.0 * inv_n * tr;
    step[c] = curvature > 0.0 ? p.step_scale / curvature : 0.0;
  }

  PoolingTrainResult r{std::move(init), {}};
  PoolingWeights& w = r.weights;
  std::vector<double> vel(taps * k, 0.0), grad(taps);
  r.loss.reserve(p.iterations);
  for (std::size_t it = 0; it < p.iterations; ++it) {
    double loss = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      double quad = 0.0, lin = 0.0;
      for (std::size_t a = 0; a < taps; ++a) {
        double gw = 0.0;
        for (std::size_t b = 0; b < taps; ++b) gw += gram[c][a * taps + b] * w(b, c);
        quad += w(a, c) * gw;
        lin += w(a, c) * cross[c][a];
        grad[a] = 2.0 * inv_n * (gw - cross[c][a]);
      }
      loss += (quad - 2.0 * lin + tt[c]) * inv_n;
      for (std::size_t a = 0; a < taps; ++a) {
        double& v = vel[a * k + c];
        v = p.momentum * v - step[c] * grad[a];
        w(a, c) += v;
      }
    }
    r.loss.push_back(loss);
  }
  return r;
}

// ---------------------------------------------------------------------------
// CSV: header "offset,<joint names>", one row per offset -n..n.

inline void write_pooling_csv(std::ostream& os, const PoolingWeights& w, const JointSet& joints) {
  if (joints.size() != w.joints()) throw std::invalid_argument("joint set size does not match weights");
  os << "offset";
  for (const auto& name : joints.names()) os << "," << name;
  os << "\n";
  os.precision(17);
  for (std::size_t tau = 0; tau < w.taps(); ++tau) {
    os << static_cast<long>(tau) - static_cast<long>(w.n());
    for (std::size_t c = 0; c < w.joints(); ++c) os << "," << w(tau, c);
    os << "\n";
  }
}

inline PoolingWeights read_pooling_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("offset", 0) != 0) throw FormatError("pooling csv: missing header");
  const std::size_t k = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  std::vector<std::vector<double>> rows;
  std::vector<long> offsets;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<double> row;
    std::getline(ls, cell, ',');
    try {
      offsets.push_back(std::stol(cell));
      while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw FormatError("pooling csv: bad number in row '" + line + "'");
    }
    if (row.size() != k) throw FormatError("pooling csv: row has " + std::to_string(row.size()) + " weights, expected " + std::to_string(k));
    rows.push_back(std::move(row));
  }
  if (rows.size() % 2 == 0) throw FormatError("pooling csv: expected 2n+1 rows");
  PoolingWeights w((rows.size() - 1) / 2, k);
  for (std::size_t tau = 0; tau < rows.size(); ++tau) {
    if (offsets[tau] != static_cast<long>(tau) - static_cast<long>(w.n())) throw FormatError("pooling csv: offsets must run -n..n");
    for (std::size_t c = 0; c < k; ++c) w(tau, c) = rows[tau][c];
  }
  return w;
}

inline void save_pooling_csv(const std::filesystem::path& path, const PoolingWeights& w, const JointSet& joints) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_pooling_csv(os, w, joints);
}

inline PoolingWeights load_pooling_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_pooling_csv(is);
}

}  // namespace flowpose
