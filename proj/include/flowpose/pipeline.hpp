#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <utility>
#include <vector>

#include "flowpose/flow.hpp"
#include "flowpose/heatmap.hpp"
#include "flowpose/network.hpp"
#include "flowpose/synth.hpp"
#include "flowpose/temporal.hpp"

namespace flowpose {

/// Per-frame (1, k, H, W) heatmaps of a sequence, computed in batches.
inline std::vector<Tensor> predict_heatmap_sequence(const Network& net, const std::vector<Tensor>& frames,
                                                    std::size_t batch = 16) {
  std::vector<Tensor> out;
  out.reserve(frames.size());
  for (std::size_t b = 0; b < frames.size(); b += batch) {
    const std::size_t e = std::min(frames.size(), b + batch);
    const Tensor maps = net.predict_heatmaps(stack_batch(std::span<const Tensor>(frames.data() + b, e - b)));
    const Shape s = maps.shape();
    for (std::size_t i = 0; i < e - b; ++i) {
      Tensor one({1, s.c, s.h, s.w});
      std::copy_n(maps.plane(i, 0), s.c * s.plane(), one.ptr());
      out.push_back(std::move(one));
    }
  }
  return out;
}

/// Exact puppet flow, downsampled to heatmap resolution and cached.
inline FlowProvider true_flow_provider(const PuppetSpec& spec, const Sequence& seq, std::size_t scale) {
  auto cache = std::make_shared<std::map<std::pair<std::size_t, long>, FlowField>>();
  return [=, &spec, &seq](std::size_t t, long d) {
    auto key = std::make_pair(t, d);
    auto it = cache->find(key);
    if (it == cache->end()) it = cache->emplace(key, downsample_flow(true_flow(spec, seq, t, d), scale)).first;
    return it->second;
  };
}

/// Wraps a provider with a per-(t, delta) random translation error whose
/// standard deviation is `sigma_per_frame * |delta|` pixels on each axis,
/// plus independent per-pixel noise of `pixel_sigma * |delta|`.
inline FlowProvider noisy_flow_provider(FlowProvider base, double sigma_per_frame, double pixel_sigma,
                                        std::uint64_t seed) {
  return [=](std::size_t t, long d) {
    FlowField f = base(t, d);
    std::seed_seq ss{seed, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(d + (1L << 20))};
    std::mt19937_64 rng(ss);
    std::normal_distribution<double> g(0.0, 1.0);
    const double mag = static_cast<double>(std::labs(d));
    const double ox = sigma_per_frame * mag * g(rng), oy = sigma_per_frame * mag * g(rng);
    for (std::size_t i = 0; i < f.size(); ++i) {
      f.u[i] += ox + pixel_sigma * mag * g(rng);
      f.v[i] += oy + pixel_sigma * mag * g(rng);
    }
    return f;
  };
}

/// Warped stacks and single-frame targets for the given frame indices.
inline std::vector<PoolingSample> pooling_samples(const std::vector<Tensor>& heatmaps, const std::vector<Pose>& poses,
                                                  const FlowProvider& flow, std::size_t n, double sigma, double scale,
                                                  const std::vector<std::size_t>& frames) {
  std::vector<PoolingSample> out;
  out.reserve(frames.size());
  for (std::size_t t : frames) {
    const Shape s = heatmaps.at(t).shape();
    out.push_back({build_warped_stack(heatmaps, t, n, flow), synthesize_target(poses.at(t), sigma, s.h, s.w, scale)});
  }
  return out;
}

/// Poses decoded from pooled warped stacks for every frame.
inline std::vector<Pose> pooled_poses(const std::vector<Tensor>& heatmaps, const FlowProvider& flow, std::size_t n,
                                      PoolingType type, const PoolingWeights* weights, double scale) {
  std::vector<Pose> out;
  out.reserve(heatmaps.size());
  for (std::size_t t = 0; t < heatmaps.size(); ++t)
    out.push_back(decode_argmax(pool(build_warped_stack(heatmaps, t, n, flow), type, weights), scale));
  return out;
}

}  // namespace flowpose
