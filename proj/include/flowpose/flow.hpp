#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowpose/binary_io.hpp"
#include "flowpose/error.hpp"
#include "flowpose/tensor.hpp"

namespace flowpose {

/// Per-pixel displacement from frame `from_frame` to `to_frame`:
/// B(p + f(p)) ~ A(p).
struct FlowField {
  std::size_t height = 0, width = 0;
  std::vector<double> u, v;
  long from_frame = 0, to_frame = 0;

  FlowField() = default;
  FlowField(std::size_t h, std::size_t w) : height(h), width(w), u(h * w, 0.0), v(h * w, 0.0) {}

  std::size_t size() const { return height * width; }
  double& u_at(std::size_t y, std::size_t x) { return u[y * width + x]; }
  double& v_at(std::size_t y, std::size_t x) { return v[y * width + x]; }
  double u_at(std::size_t y, std::size_t x) const { return u[y * width + x]; }
  double v_at(std::size_t y, std::size_t x) const { return v[y * width + x]; }

  bool finite() const {
    for (std::size_t i = 0; i < size(); ++i)
      if (!std::isfinite(u[i]) || !std::isfinite(v[i])) return false;
    return true;
  }

  friend bool operator==(const FlowField& a, const FlowField& b) {
    return a.height == b.height && a.width == b.width && a.u == b.u && a.v == b.v;
  }
};

// ---------------------------------------------------------------------------
// Middlebury .flo

inline constexpr float kFloMagic = 202021.25f;

inline void write_flo(std::ostream& os, const FlowField& f) {
  binary::write_f32(os, kFloMagic);
  binary::write_i32(os, static_cast<std::int32_t>(f.width));
  binary::write_i32(os, static_cast<std::int32_t>(f.height));
  for (std::size_t i = 0; i < f.size(); ++i) {
    binary::write_f32(os, static_cast<float>(f.u[i]));
    binary::write_f32(os, static_cast<float>(f.v[i]));
  }
}

inline FlowField read_flo(std::istream& is) {
  const float magic = binary::read_f32(is, "flo magic");
  if (magic != kFloMagic) throw FormatError("bad magic: not a .flo file");
  const std::int32_t w = binary::read_i32(is, "flo width");
  const std::int32_t h = binary::read_i32(is, "flo height");
  if (w < 0 || h < 0 || static_cast<long long>(w) * h > (1LL << 28)) throw FormatError("implausible .flo dimensions");
  FlowField f(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  for (std::size_t i = 0; i < f.size(); ++i) {
    f.u[i] = binary::read_f32(is, "flo data");
    f.v[i] = binary::read_f32(is, "flo data");
  }
  return f;
}

inline void save_flo(const std::filesystem::path& path, const FlowField& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_flo(os, f);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

inline FlowField load_flo(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_flo(is);
}

// ---------------------------------------------------------------------------
// Warping

/// Bilinear sample of one plane with zero padding outside.
inline double sample_zero(const double* plane, std::size_t h, std::size_t w, double x, double y) {
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const long x0 = static_cast<long>(fx0), y0 = static_cast<long>(fy0);
  const double ax = x - fx0, ay = y - fy0;
  auto at = [&](long yy, long xx) -> double {
    if (xx < 0 || yy < 0 || xx >= static_cast<long>(w) || yy >= static_cast<long>(h)) return 0.0;
    return plane[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
  };
  return (1.0 - ay) * ((1.0 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
         ay * ((1.0 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
}

/// Bilinear sample with border replication.
inline double sample_clamp(const double* plane, std::size_t h, std::size_t w, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const std::size_t x0 = static_cast<std::size_t>(x), y0 = static_cast<std::size_t>(y);
  const std::size_t x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double ax = x - static_cast<double>(x0), ay = y - static_cast<double>(y0);
  return (1.0 - ay) * ((1.0 - ax) * plane[y0 * w + x0] + ax * plane[y0 * w + x1]) +
         ay * ((1.0 - ax) * plane[y1 * w + x0] + ax * plane[y1 * w + x1]);
}

/// Aligns `source` (any (B, C, H, W) stack at frame t+D) to frame t using the
/// flow from t to t+D: out(p) = source(p + flow(p)), zero outside.
inline Tensor warp_heatmap(const Tensor& source, const FlowField& flow) {
  const Shape s = source.shape();
  if (flow.height != s.h || flow.width != s.w)
    throw std::invalid_argument("warp_heatmap: flow is " + std::to_string(flow.height) + "x" +
                                std::to_string(flow.width) + " but heatmap is " + std::to_string(s.h) + "x" +
                                std::to_string(s.w));
  Tensor out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* src = source.plane(n, c);
      double* dst = out.plane(n, c);
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
          const std::size_t i = y * s.w + x;
          dst[i] = sample_zero(src, s.h, s.w, static_cast<double>(x) + flow.u[i],
                               static_cast<double>(y) + flow.v[i]);
        }
    }
  return out;
}

/// Full-resolution flow to heatmap resolution: scale x scale average pooling,
/// displacements divided by scale.
inline FlowField downsample_flow(const FlowField& f, std::size_t scale) {
  if (scale == 0 || f.height % scale || f.width % scale)
    throw std::invalid_argument("downsample_flow: size must be divisible by the scale");
  FlowField out(f.height / scale, f.width / scale);
  out.from_frame = f.from_frame;
  out.to_frame = f.to_frame;
  const double norm = 1.0 / static_cast<double>(scale * scale * scale);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) {
      double su = 0.0, sv = 0.0;
      for (std::size_t dy = 0; dy < scale; ++dy)
        for (std::size_t dx = 0; dx < scale; ++dx) {
          su += f.u_at(y * scale + dy, x * scale + dx);
          sv += f.v_at(y * scale + dy, x * scale + dx);
        }
      out.u_at(y, x) = su * norm;
      out.v_at(y, x) = sv * norm;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Horn-Schunck

struct HornSchunckParams {
  double lambda = 0.1;          // smoothness weight
  std::size_t iterations = 200; // per pyramid level
  std::size_t levels = 3;
};

namespace detail {

struct Gray {
  std::size_t h = 0, w = 0;
  std::vector<double> px;
  double at(long y, long x) const {
    y = std::clamp<long>(y, 0, static_cast<long>(h) - 1);
    x = std::clamp<long>(x, 0, static_cast<long>(w) - 1);
    return px[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  }
};

inline Gray to_gray(const Tensor& frame) {
  const Shape s = frame.shape();
  if (s.n != 1) throw std::invalid_argument("estimate_flow: expected a single frame");
  Gray g{s.h, s.w, std::vector<double>(s.plane(), 0.0)};
  if (s.c == 3) {
    const double wts[3] = {0.299, 0.587, 0.114};
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < s.plane(); ++i) g.px[i] += wts[c] * frame.plane(0, c)[i];
  } else {
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t i = 0; i < s.plane(); ++i) g.px[i] += frame.plane(0, c)[i] / static_cast<double>(s.c);
  }
  return g;
}

inline Gray downsample2(const Gray& g) {
  Gray out{std::max<std::size_t>(1, g.h / 2), std::max<std::size_t>(1, g.w / 2), {}};
  out.px.resize(out.h * out.w);
  for (std::size_t y = 0; y < out.h; ++y)
    for (std::size_t x = 0; x < out.w; ++x) {
      const long sy = static_cast<long>(2 * y), sx = static_cast<long>(2 * x);
      out.px[y * out.w + x] = 0.25 * (g.at(sy, sx) + g.at(sy, sx + 1) + g.at(sy + 1, sx) + g.at(sy + 1, sx + 1));
    }
  return out;
}

inline FlowField upsample_flow(const FlowField& f, std::size_t h, std::size_t w) {
  FlowField out(h, w);
  const double sx = static_cast<double>(f.width) / static_cast<double>(w);
  const double sy = static_cast<double>(f.height) / static_cast<double>(h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double cx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      const double cy = (static_cast<double>(y) + 0.5) * sy - 0.5;
      out.u_at(y, x) = sample_clamp(f.u.data(), f.height, f.width, cx, cy) / sx;
      out.v_at(y, x) = sample_clamp(f.v.data(), f.height, f.width, cx, cy) / sy;
    }
  return out;
}

inline void neighbour_average(const std::vector<double>& f, std::size_t h, std::size_t w, std::vector<double>& out) {
  auto at = [&](long y, long x) {
    y = std::clamp<long>(y, 0, static_cast<long>(h) - 1);
    x = std::clamp<long>(x, 0, static_cast<long>(w) - 1);
    return f[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long x = 0; x < static_cast<long>(w); ++x)
      out[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)] =
          (at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1)) / 6.0 +
          (at(y - 1, x - 1) + at(y - 1, x + 1) + at(y + 1, x - 1) + at(y + 1, x + 1)) / 12.0;
}

// Refines `flow` at one pyramid level: B is warped by the current estimate,
// then Jacobi iterations update the total flow around that linearisation.
inline void horn_schunck_level(const Gray& a, const Gray& b, FlowField& flow, const HornSchunckParams& p) {
  const std::size_t h = a.h, w = a.w, n = h * w;
  std::vector<double> bw(n), ix(n), iy(n), it(n);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t i = y * w + x;
      bw[i] = sample_clamp(b.px.data(), h, w, static_cast<double>(x) + flow.u[i], static_cast<double>(y) + flow.v[i]);
    }
  Gray bwg{h, w, bw};
  for (long y = 0; y < static_cast<long>(h); ++y)
    for (long x = 0; x < static_cast<long>(w); ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
      ix[i] = 0.25 * (a.at(y, x + 1) - a.at(y, x - 1) + bwg.at(y, x + 1) - bwg.at(y, x - 1));
      iy[i] = 0.25 * (a.at(y + 1, x) - a.at(y - 1, x) + bwg.at(y + 1, x) - bwg.at(y - 1, x));
      it[i] = bw[i] - a.px[i];
    }
  const std::vector<double> u0 = flow.u, v0 = flow.v;
  std::vector<double> ubar(n), vbar(n);
  for (std::size_t iter = 0; iter < p.iterations; ++iter) {
    neighbour_average(flow.u, h, w, ubar);
    neighbour_average(flow.v, h, w, vbar);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = ix[i] * (ubar[i] - u0[i]) + iy[i] * (vbar[i] - v0[i]) + it[i];
      const double d = p.lambda + ix[i] * ix[i] + iy[i] * iy[i];
      flow.u[i] = ubar[i] - ix[i] * r / d;
      flow.v[i] = vbar[i] - iy[i] * r / d;
    }
  }
}

}  // namespace detail

/// Dense flow from frame A to frame B (each (1, C, H, W)); color input is
/// converted to luminance. Coarse-to-fine over a fixed pyramid.
inline FlowField estimate_flow(const Tensor& frame_a, const Tensor& frame_b, const HornSchunckParams& p = {}) {
  if (frame_a.shape() != frame_b.shape())
    throw std::invalid_argument("estimate_flow: frame sizes differ (" + frame_a.shape().str() + " vs " +
                                frame_b.shape().str() + ")");
  if (!(p.lambda > 0.0)) throw std::invalid_argument("estimate_flow: lambda must be positive");
  std::vector<detail::Gray> pa{detail::to_gray(frame_a)}, pb{detail::to_gray(frame_b)};
  for (std::size_t l = 1; l < std::max<std::size_t>(1, p.levels); ++l) {
    if (pa.back().h < 8 || pa.back().w < 8) break;
    pa.push_back(detail::downsample2(pa.back()));
    pb.push_back(detail::downsample2(pb.back()));
  }
  FlowField flow(pa.back().h, pa.back().w);
  for (std::size_t l = pa.size(); l-- > 0;) {
    if (flow.height != pa[l].h || flow.width != pa[l].w) flow = detail::upsample_flow(flow, pa[l].h, pa[l].w);
    detail::horn_schunck_level(pa[l], pb[l], flow, p);
  }
  return flow;
}

}  // namespace flowpose
