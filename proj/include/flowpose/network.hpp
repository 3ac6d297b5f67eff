#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "flowpose/error.hpp"
#include "flowpose/heatmap.hpp"
#include "flowpose/ops.hpp"
#include "flowpose/tape.hpp"
#include "flowpose/tensor.hpp"

namespace flowpose {

enum class LayerKind { conv, relu, maxpool2, concat_skip, global_avg_pool };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool2: return "maxpool2";
    case LayerKind::concat_skip: return "concat_skip";
    case LayerKind::global_avg_pool: return "global_avg_pool";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  for (LayerKind k : {LayerKind::conv, LayerKind::relu, LayerKind::maxpool2, LayerKind::concat_skip,
                      LayerKind::global_avg_pool})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown layer kind: " + s);
}

struct LayerSpec {
  LayerKind kind = LayerKind::conv;
  std::string name;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t out_channels = 0;
  std::size_t pad = 0;
  std::size_t stride = 1;
  std::string skip_source;  // concat_skip only

  static LayerSpec conv(std::string name, std::size_t k, std::size_t out) {
    return LayerSpec{LayerKind::conv, std::move(name), k, k, out, (k - 1) / 2, 1, {}};
  }
  static LayerSpec relu(std::string name) { return plain(LayerKind::relu, std::move(name)); }
  static LayerSpec maxpool(std::string name) { return plain(LayerKind::maxpool2, std::move(name)); }
  static LayerSpec global_pool(std::string name) { return plain(LayerKind::global_avg_pool, std::move(name)); }
  static LayerSpec concat(std::string name, std::string source) {
    LayerSpec s = plain(LayerKind::concat_skip, std::move(name));
    s.skip_source = std::move(source);
    return s;
  }
  static LayerSpec plain(LayerKind kind, std::string name) {
    LayerSpec s;
    s.kind = kind;
    s.name = std::move(name);
    return s;
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

enum class ModelKind { heatmap, coordinate };

/// Declarative architecture. For the heatmap model `spatial` runs conv1..conv8
/// and `fusion` (optional) starts from the activation named `fusion_source`,
/// concatenates a skip activation and ends in k channels. For the coordinate
/// model `spatial` is the whole network, ending in a global pool and a 1x1
/// conv with 2k outputs.
struct NetworkConfig {
  ModelKind model = ModelKind::heatmap;
  std::size_t input_channels = 3;
  std::size_t input_h = 64, input_w = 64;
  std::size_t joints = 7;
  std::vector<LayerSpec> spatial;
  std::string fusion_source;
  std::vector<LayerSpec> fusion;
  double w_spatial = 1.0;
  double w_fusion = 1.0;

  std::size_t pool_count() const {
    std::size_t n = 0;
    for (const auto& l : spatial) n += l.kind == LayerKind::maxpool2;
    return n;
  }
  /// Input pixels per output pixel.
  std::size_t heatmap_scale() const { return std::size_t{1} << pool_count(); }
  std::size_t heatmap_h() const { return input_h / heatmap_scale(); }
  std::size_t heatmap_w() const { return input_w / heatmap_scale(); }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

namespace detail {

inline void append_trunk(std::vector<LayerSpec>& layers, std::size_t index, std::size_t k, std::size_t out,
                         bool relu = true) {
  layers.push_back(LayerSpec::conv("conv" + std::to_string(index), k, out));
  if (relu) layers.push_back(LayerSpec::relu("relu" + std::to_string(index)));
}

inline void append_fusion(NetworkConfig& c, std::size_t kernel, std::size_t width) {
  c.fusion_source = "relu7";
  c.fusion.push_back(LayerSpec::concat("skip", "relu3"));
  for (std::size_t i = 1; i <= 4; ++i) {
    c.fusion.push_back(LayerSpec::conv("fuse" + std::to_string(i), kernel, width));
    c.fusion.push_back(LayerSpec::relu("fuse_relu" + std::to_string(i)));
  }
  c.fusion.push_back(LayerSpec::conv("fuse5", 1, c.joints));
}

}  // namespace detail

/// Channel widths for conv1..conv7 plus the fusion kernel and width.
struct ArchWidths {
  std::size_t conv1 = 32, conv2 = 64, conv3 = 128, conv4 = 128, conv5 = 128, conv6 = 256, conv7 = 256;
  std::size_t k1 = 5, k2 = 5;
  std::size_t fusion_kernel = 7, fusion_width = 64;
  bool fusion = true;
};

inline NetworkConfig heatmap_config(std::size_t input_h, std::size_t input_w, std::size_t joints,
                                    const ArchWidths& a) {
  NetworkConfig c;
  c.input_h = input_h;
  c.input_w = input_w;
  c.joints = joints;
  auto& s = c.spatial;
  detail::append_trunk(s, 1, a.k1, a.conv1);
  s.push_back(LayerSpec::maxpool("pool1"));
  detail::append_trunk(s, 2, a.k2, a.conv2);
  s.push_back(LayerSpec::maxpool("pool2"));
  detail::append_trunk(s, 3, 3, a.conv3);
  detail::append_trunk(s, 4, 3, a.conv4);
  detail::append_trunk(s, 5, 3, a.conv5);
  detail::append_trunk(s, 6, 1, a.conv6);
  detail::append_trunk(s, 7, 1, a.conv7);
  detail::append_trunk(s, 8, 1, joints, false);
  if (a.fusion) detail::append_fusion(c, a.fusion_kernel, a.fusion_width);
  return c;
}

/// conv 5x5x32, pool, 5x5x64, pool, 3x3x128 x3, 1x1x256 x2, 1x1xk; fusion
/// 7x7x64 x4 + 1x1xk.
inline NetworkConfig desk_config(std::size_t input = 64, std::size_t joints = 7) {
  return heatmap_config(input, input, joints, ArchWidths{});
}

/// Reduced widths that train in minutes on one core.
inline NetworkConfig compact_config(std::size_t input = 64, std::size_t joints = 7) {
  ArchWidths a;
  a.conv1 = 16;
  a.conv2 = 24;
  a.conv3 = a.conv4 = a.conv5 = 32;
  a.conv6 = a.conv7 = 64;
  a.fusion_kernel = 5;
  a.fusion_width = 16;
  return heatmap_config(input, input, joints, a);
}

/// Minimal widths for gradient checks on tiny inputs.
inline NetworkConfig toy_config(std::size_t input = 16, std::size_t joints = 2) {
  ArchWidths a;
  a.conv1 = 3;
  a.conv2 = 4;
  a.conv3 = a.conv4 = a.conv5 = 4;
  a.conv6 = a.conv7 = 5;
  a.k1 = a.k2 = 3;
  a.fusion_kernel = 3;
  a.fusion_width = 3;
  NetworkConfig c = heatmap_config(input, input, joints, a);
  c.input_channels = 2;
  return c;
}

/// Coordinate-regression baseline: the same trunk up to conv5, global average
/// pooling, then a 1x1 conv producing 2k normalised coordinates.
inline NetworkConfig coordinate_config(std::size_t input = 64, std::size_t joints = 7,
                                       const ArchWidths& a = ArchWidths{16, 24, 32, 32, 32, 64, 64}) {
  NetworkConfig c;
  c.model = ModelKind::coordinate;
  c.input_h = c.input_w = input;
  c.joints = joints;
  auto& s = c.spatial;
  detail::append_trunk(s, 1, a.k1, a.conv1);
  s.push_back(LayerSpec::maxpool("pool1"));
  detail::append_trunk(s, 2, a.k2, a.conv2);
  s.push_back(LayerSpec::maxpool("pool2"));
  detail::append_trunk(s, 3, 3, a.conv3);
  detail::append_trunk(s, 4, 3, a.conv4);
  detail::append_trunk(s, 5, 3, a.conv5);
  detail::append_trunk(s, 6, 1, a.conv6);
  s.push_back(LayerSpec::global_pool("gap"));
  s.push_back(LayerSpec::conv("fc", 1, 2 * joints));
  return c;
}

// ---------------------------------------------------------------------------
// Canonical text form, used inside checkpoints.

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string to_text(const NetworkConfig& c) {
  std::ostringstream os;
  os << "model " << (c.model == ModelKind::heatmap ? "heatmap" : "coordinate") << "\n";
  os << "input " << c.input_channels << " " << c.input_h << " " << c.input_w << "\n";
  os << "joints " << c.joints << "\n";
  os << "loss_weights " << format_double(c.w_spatial) << " " << format_double(c.w_fusion) << "\n";
  auto layer = [&](const char* section, const LayerSpec& l) {
    os << section << " " << to_string(l.kind) << " " << l.name;
    if (l.kind == LayerKind::conv)
      os << " " << l.kernel_h << " " << l.kernel_w << " " << l.out_channels << " " << l.pad << " " << l.stride;
    if (l.kind == LayerKind::concat_skip) os << " " << l.skip_source;
    os << "\n";
  };
  for (const auto& l : c.spatial) layer("spatial", l);
  if (!c.fusion_source.empty()) os << "fusion_source " << c.fusion_source << "\n";
  for (const auto& l : c.fusion) layer("fusion", l);
  return os.str();
}

inline NetworkConfig config_from_text(const std::string& text) {
  NetworkConfig c;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    auto fail = [&](const std::string& why) {
      return FormatError("network config line " + std::to_string(lineno) + " (" + key + "): " + why);
    };
    if (key == "model") {
      std::string m;
      ls >> m;
      if (m == "heatmap") c.model = ModelKind::heatmap;
      else if (m == "coordinate") c.model = ModelKind::coordinate;
      else throw fail("unknown model " + m);
    } else if (key == "input") {
      ls >> c.input_channels >> c.input_h >> c.input_w;
    } else if (key == "joints") {
      ls >> c.joints;
    } else if (key == "loss_weights") {
      ls >> c.w_spatial >> c.w_fusion;
    } else if (key == "fusion_source") {
      ls >> c.fusion_source;
    } else if (key == "spatial" || key == "fusion") {
      std::string kind;
      LayerSpec l;
      ls >> kind >> l.name;
      l.kind = layer_kind_from_string(kind);
      if (l.kind == LayerKind::conv) ls >> l.kernel_h >> l.kernel_w >> l.out_channels >> l.pad >> l.stride;
      if (l.kind == LayerKind::concat_skip) ls >> l.skip_source;
      (key == "spatial" ? c.spatial : c.fusion).push_back(l);
    } else {
      throw fail("unknown key");
    }
    if (ls.fail()) throw fail("malformed values");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Validation by shape inference.

struct LayerShape {
  std::size_t c = 0, h = 0, w = 0;
};

namespace detail {

inline LayerShape infer_layer(const LayerSpec& l, LayerShape in, const std::map<std::string, LayerShape>& seen,
                              const std::string& where) {
  auto err = [&](const std::string& why) { return ConfigError(where + " layer '" + l.name + "': " + why); };
  switch (l.kind) {
    case LayerKind::conv:
      if (l.stride != 1) throw err("stride must be 1 (got " + std::to_string(l.stride) + ")");
      if (l.kernel_h % 2 == 0 || l.kernel_w % 2 == 0) throw err("kernel size must be odd");
      if (l.kernel_h != l.kernel_w) throw err("kernel must be square");
      if (l.pad != (l.kernel_h - 1) / 2) throw err("pad must be (k-1)/2 so resolution is preserved");
      if (l.out_channels == 0) throw err("out_channels must be positive");
      return {l.out_channels, in.h, in.w};
    case LayerKind::relu:
      return in;
    case LayerKind::maxpool2:
      if (in.h % 2 || in.w % 2) throw err("maxpool2 needs even spatial size");
      return {in.c, in.h / 2, in.w / 2};
    case LayerKind::global_avg_pool:
      return {in.c, 1, 1};
    case LayerKind::concat_skip: {
      auto it = seen.find(l.skip_source);
      if (it == seen.end()) throw err("skip source '" + l.skip_source + "' is not an earlier layer");
      const LayerShape s = it->second;
      if (s.h == in.h && s.w == in.w) return {in.c + s.c, in.h, in.w};
      if (s.h == 2 * in.h && s.w == 2 * in.w) return {in.c + s.c, in.h, in.w};
      throw err("skip source resolution cannot be matched to the current one");
    }
  }
  throw err("unknown kind");
}

}  // namespace detail

inline void validate(const NetworkConfig& c) {
  if (c.joints == 0) throw ConfigError("joints must be positive");
  if (c.input_channels == 0 || c.input_h == 0 || c.input_w == 0) throw ConfigError("input size must be positive");
  if (c.spatial.empty()) throw ConfigError("spatial layer list is empty");
  std::map<std::string, LayerShape> seen;
  LayerShape cur{c.input_channels, c.input_h, c.input_w};
  std::size_t pools = 0;
  for (const auto& l : c.spatial) {
    if (l.name.empty() || seen.count(l.name)) throw ConfigError("spatial layer names must be unique and non-empty");
    if (l.kind == LayerKind::maxpool2) ++pools;
    if (l.kind == LayerKind::global_avg_pool && c.model != ModelKind::coordinate)
      throw ConfigError("global_avg_pool is only allowed in the coordinate model");
    cur = detail::infer_layer(l, cur, seen, "spatial");
    seen[l.name] = cur;
  }
  if (c.model == ModelKind::heatmap) {
    if (pools != 2) throw ConfigError("heatmap network must contain exactly two maxpool2 layers (got " +
                                      std::to_string(pools) + ")");
    if (cur.c != c.joints) throw ConfigError("last spatial layer must have k = joints channels");
  } else {
    if (pools > 2) throw ConfigError("at most two maxpool2 layers are allowed");
    if (cur.c != 2 * c.joints || cur.h != 1 || cur.w != 1)
      throw ConfigError("coordinate network must end in a global pool and 2k outputs");
    if (!c.fusion.empty()) throw ConfigError("coordinate network has no fusion layers");
  }
  if (c.fusion.empty()) return;
  auto src = seen.find(c.fusion_source);
  if (src == seen.end()) throw ConfigError("fusion_source '" + c.fusion_source + "' is not a spatial layer");
  LayerShape f = src->second;
  std::size_t convs = 0;
  for (const auto& l : c.fusion) {
    if (l.name.empty() || seen.count(l.name)) throw ConfigError("fusion layer names must be unique and non-empty");
    if (l.kind == LayerKind::maxpool2 || l.kind == LayerKind::global_avg_pool)
      throw ConfigError("fusion layer '" + l.name + "': pooling is not allowed in the fusion layers");
    if (l.kind == LayerKind::conv) ++convs;
    f = detail::infer_layer(l, f, seen, "fusion");
    seen[l.name] = f;
  }
  if (convs != 5) throw ConfigError("fusion must have exactly five conv layers (got " + std::to_string(convs) + ")");
  if (f.c != c.joints || f.h != cur.h || f.w != cur.w)
    throw ConfigError("fusion output must have k channels at heatmap resolution");
}

// ---------------------------------------------------------------------------

struct Parameter {
  std::string name;
  Tensor value;
};

struct ForwardResult {
  Var spatial;                   // conv8 heatmaps, or 2k coordinates for the baseline
  std::optional<Var> fusion;     // fusion heatmaps
  std::map<std::string, Var> activations;
  std::vector<Var> params;       // same order as Network::parameters()

  Var heatmap() const { return fusion ? *fusion : spatial; }
};

/// A network instance: validated config plus parameters in declaration order
/// (kernel then bias for every conv, spatial layers first).
inline constexpr double kOutputInitScale = 0.01;

class Network {
 public:
  Network(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)) {
    validate(config_);
    std::mt19937_64 rng(seed);
    LayerShape cur{config_.input_channels, config_.input_h, config_.input_w};
    std::map<std::string, LayerShape> seen;
    auto add_layers = [&](const std::vector<LayerSpec>& layers, LayerShape start) {
      LayerShape s = start;
      const LayerSpec* last_conv = nullptr;
      for (const auto& l : layers)
        if (l.kind == LayerKind::conv) last_conv = &l;
      for (const auto& l : layers) {
        if (l.kind == LayerKind::conv) {
          const std::size_t fan_in = s.c * l.kernel_h * l.kernel_w;
          // He-style uniform limit sqrt(6 / fan_in); biases start at zero. The
          // output conv of each branch starts near zero, like the targets.
          std::uniform_real_distribution<double> dist(-1.0, 1.0);
          double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
          if (&l == last_conv) limit *= kOutputInitScale;
          Tensor k({l.out_channels, s.c, l.kernel_h, l.kernel_w});
          for (double& v : k.storage()) v = limit * dist(rng);
          params_.push_back({l.name + ".weight", std::move(k)});
          params_.push_back({l.name + ".bias", Tensor({1, l.out_channels, 1, 1})});
        }
        s = detail::infer_layer(l, s, seen, "");
        seen[l.name] = s;
      }
      return s;
    };
    add_layers(config_.spatial, cur);
    if (!config_.fusion.empty()) add_layers(config_.fusion, seen.at(config_.fusion_source));
  }

  /// Builds from explicit parameter values (checkpoint reload).
  Network(NetworkConfig config, std::vector<Parameter> params) : config_(std::move(config)) {
    validate(config_);
    Network shape_ref(config_, 0);
    if (shape_ref.params_.size() != params.size())
      throw FormatError("parameter count does not match the network config");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].value.shape() != shape_ref.params_[i].value.shape())
        throw FormatError("parameter " + shape_ref.params_[i].name + " has shape " + params[i].value.shape().str() +
                          ", expected " + shape_ref.params_[i].value.shape().str());
      params[i].name = shape_ref.params_[i].name;
    }
    params_ = std::move(params);
  }

  const NetworkConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  /// Runs frames (B, C, H, W) through the network. With `trainable`, parameter
  /// leaves require gradients.
  ForwardResult forward(Tape& tape, const Tensor& frames, bool trainable = false) const {
    const Shape s = frames.shape();
    if (s.c != config_.input_channels || s.h != config_.input_h || s.w != config_.input_w)
      throw std::invalid_argument("frame shape " + s.str() + " does not match network input (" +
                                  std::to_string(config_.input_channels) + "," + std::to_string(config_.input_h) +
                                  "," + std::to_string(config_.input_w) + ")");
    ForwardResult r;
    for (const auto& p : params_) r.params.push_back(tape.leaf(p.value, trainable));
    std::size_t next_param = 0;
    auto run = [&](const std::vector<LayerSpec>& layers, Var x) {
      for (const auto& l : layers) {
        switch (l.kind) {
          case LayerKind::conv: {
            Var k = r.params[next_param++];
            Var b = r.params[next_param++];
            x = conv2d(tape, x, k, b, l.pad);
            break;
          }
          case LayerKind::relu: x = relu(tape, x); break;
          case LayerKind::maxpool2: x = maxpool2(tape, x); break;
          case LayerKind::global_avg_pool: x = global_avg_pool(tape, x); break;
          case LayerKind::concat_skip: {
            Var skip = r.activations.at(l.skip_source);
            if (tape.value(skip).shape().h != tape.value(x).shape().h) skip = avgpool2(tape, skip);
            x = concat_channels(tape, x, skip);
            break;
          }
        }
        r.activations[l.name] = x;
      }
      return x;
    };
    r.spatial = run(config_.spatial, tape.leaf(frames, false));
    if (!config_.fusion.empty()) r.fusion = run(config_.fusion, r.activations.at(config_.fusion_source));
    return r;
  }

  /// Heatmap output (fusion if present, else conv8) without recording grads.
  Tensor predict_heatmaps(const Tensor& frames) const {
    Tape tape;
    ForwardResult r = forward(tape, frames, false);
    return tape.value(r.heatmap());
  }

 private:
  NetworkConfig config_;
  std::vector<Parameter> params_;
};

/// Weighted two-stage heatmap objective w_s * L(conv8) + w_f * L(fusion).
inline Var heatmap_objective(Tape& tape, const Network& net, const ForwardResult& r, const Tensor& target,
                             const Tensor* mask) {
  Var spatial = l2_loss(tape, r.spatial, target, mask);
  if (!r.fusion) return spatial;
  Var fused = l2_loss(tape, *r.fusion, target, mask);
  return weighted_sum(tape, {spatial, fused}, {net.config().w_spatial, net.config().w_fusion});
}

// Coordinate baseline outputs are normalised: x_n = (x - W/2) / (W/2).

inline Tensor normalized_coordinates(const std::vector<Pose>& poses, std::size_t height, std::size_t width) {
  if (poses.empty()) throw std::invalid_argument("no poses");
  const std::size_t k = poses.front().size();
  Tensor out({poses.size(), 2 * k, 1, 1});
  for (std::size_t n = 0; n < poses.size(); ++n)
    for (std::size_t j = 0; j < k; ++j) {
      out[n * 2 * k + 2 * j] = (poses[n][j].x - 0.5 * width) / (0.5 * width);
      out[n * 2 * k + 2 * j + 1] = (poses[n][j].y - 0.5 * height) / (0.5 * height);
    }
  return out;
}

inline Tensor coordinate_mask(const std::vector<Pose>& poses, std::size_t height, std::size_t width) {
  const std::size_t k = poses.front().size();
  Tensor out({poses.size(), 2 * k, 1, 1});
  for (std::size_t n = 0; n < poses.size(); ++n)
    for (std::size_t j = 0; j < k; ++j) {
      const Joint& jt = poses[n][j];
      const bool ok = jt.visible && jt.x >= 0 && jt.y >= 0 && jt.x < static_cast<double>(width) &&
                      jt.y < static_cast<double>(height);
      out[n * 2 * k + 2 * j] = out[n * 2 * k + 2 * j + 1] = ok ? 1.0 : 0.0;
    }
  return out;
}

inline Pose decode_coordinates(const Tensor& coords, std::size_t n, std::size_t height, std::size_t width) {
  const std::size_t k = coords.shape().c / 2;
  Pose p(k);
  for (std::size_t j = 0; j < k; ++j) {
    p[j].x = coords[n * 2 * k + 2 * j] * 0.5 * width + 0.5 * width;
    p[j].y = coords[n * 2 * k + 2 * j + 1] * 0.5 * height + 0.5 * height;
  }
  return p;
}

/// Coordinate-baseline inference: 2k outputs mapped to input pixels.
inline Pose forward_coordinate_baseline(const Network& net, const Tensor& frame) {
  if (net.config().model != ModelKind::coordinate) throw std::invalid_argument("not a coordinate network");
  Tape tape;
  ForwardResult r = net.forward(tape, frame, false);
  return decode_coordinates(tape.value(r.spatial), 0, net.config().input_h, net.config().input_w);
}

}  // namespace flowpose
