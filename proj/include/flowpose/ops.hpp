#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "flowpose/gemm.hpp"
#include "flowpose/tape.hpp"
#include "flowpose/tensor.hpp"

// Differentiable layer ops. Each takes Vars on a Tape and records one node.

namespace flowpose {

namespace detail {

struct ConvGeom {
  std::size_t C, H, W, OC, kh, kw, pad, Ho, Wo;
  std::size_t rows() const { return C * kh * kw; }
  std::size_t cols() const { return Ho * Wo; }
};

inline void im2col(const ConvGeom& g, const double* in, double* col) {
  for (std::size_t c = 0; c < g.C; ++c)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((c * g.kh + ky) * g.kw + kx) * g.cols();
        const double* plane = in + c * g.H * g.W;
        for (std::size_t y = 0; y < g.Ho; ++y) {
          const long sy = static_cast<long>(y + ky) - static_cast<long>(g.pad);
          double* dst = row + y * g.Wo;
          if (sy < 0 || sy >= static_cast<long>(g.H)) {
            std::fill_n(dst, g.Wo, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(sy) * g.W;
          for (std::size_t x = 0; x < g.Wo; ++x) {
            const long sx = static_cast<long>(x + kx) - static_cast<long>(g.pad);
            dst[x] = (sx < 0 || sx >= static_cast<long>(g.W)) ? 0.0 : src[sx];
          }
        }
      }
}

// Transposed im2col: one row of C*kh*kw taps per output pixel.
inline void im2row(const ConvGeom& g, const double* in, double* rows) {
  const std::size_t R = g.rows();
  for (std::size_t y = 0; y < g.Ho; ++y)
    for (std::size_t x = 0; x < g.Wo; ++x) {
      double* dst = rows + (y * g.Wo + x) * R;
      for (std::size_t c = 0; c < g.C; ++c) {
        const double* plane = in + c * g.H * g.W;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const long sy = static_cast<long>(y + ky) - static_cast<long>(g.pad);
          if (sy < 0 || sy >= static_cast<long>(g.H)) {
            std::fill_n(dst, g.kw, 0.0);
            dst += g.kw;
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(sy) * g.W;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const long sx = static_cast<long>(x + kx) - static_cast<long>(g.pad);
            *dst++ = (sx < 0 || sx >= static_cast<long>(g.W)) ? 0.0 : src[sx];
          }
        }
      }
    }
}

inline std::size_t pad_to_tile(std::size_t n) { return (n + kGemmNR - 1) / kGemmNR * kGemmNR; }

inline Tensor scalar_tensor(double v) { return Tensor({1, 1, 1, 1}, std::vector<double>{v}); }

}  // namespace detail

/// Stride-1 2-D convolution (cross-correlation). kernel is (OC, C, kh, kw),
/// bias is (1, OC, 1, 1). Odd kernels only.
inline Var conv2d(Tape& tape, Var input, Var kernel, Var bias, std::size_t pad) {
  const Shape is = tape.value(input).shape();
  const Shape ks = tape.value(kernel).shape();
  const Shape bs = tape.value(bias).shape();
  if (ks.c != is.c)
    throw std::invalid_argument("conv2d: input has " + std::to_string(is.c) + " channels, kernel expects " +
                                std::to_string(ks.c));
  if (ks.h % 2 == 0 || ks.w % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
  if (bs.size() != ks.n) throw std::invalid_argument("conv2d: bias length must equal output channels");
  if (is.h + 2 * pad < ks.h || is.w + 2 * pad < ks.w)
    throw std::invalid_argument("conv2d: kernel larger than padded input");

  const detail::ConvGeom g{is.c, is.h, is.w, ks.n, ks.h, ks.w, pad, is.h + 2 * pad - ks.h + 1,
                           is.w + 2 * pad - ks.w + 1};
  Tensor out({is.n, g.OC, g.Ho, g.Wo});
  {
    // out^T (pixels x OCp) = im2row (pixels x taps) * K^T (taps x OCp)
    const Tensor& x = tape.value(input);
    const Tensor& k = tape.value(kernel);
    const Tensor& b = tape.value(bias);
    const std::size_t ocp = detail::pad_to_tile(g.OC);
    std::vector<double> kT(g.rows() * ocp, 0.0);
    for (std::size_t oc = 0; oc < g.OC; ++oc)
      for (std::size_t r = 0; r < g.rows(); ++r) kT[r * ocp + oc] = k[oc * g.rows() + r];
    std::vector<double> rows(g.cols() * g.rows());
    std::vector<double> outT(g.cols() * ocp);
    for (std::size_t n = 0; n < is.n; ++n) {
      detail::im2row(g, x.plane(n, 0), rows.data());
      for (std::size_t p = 0; p < g.cols(); ++p) std::copy_n(b.ptr(), g.OC, outT.data() + p * ocp);
      detail::gemm_acc(g.cols(), ocp, g.rows(), rows.data(), kT.data(), outT.data());
      double* o = out.plane(n, 0);
      for (std::size_t p = 0; p < g.cols(); ++p)
        for (std::size_t oc = 0; oc < g.OC; ++oc) o[oc * g.cols() + p] = outT[p * ocp + oc];
    }
  }
  const Var out_var{tape.size()};
  return tape.record(std::move(out), {input, kernel, bias}, [=](Tape& t) {
    const Tensor& gout = t.grad_buffer(out_var);
    const Tensor& x = t.value(input);
    const Tensor& k = t.value(kernel);
    const bool want_x = t.wants_grad(input);
    const bool want_k = t.wants_grad(kernel);
    const bool want_b = t.wants_grad(bias);
    const std::size_t ocp = detail::pad_to_tile(g.OC);
    const std::size_t cp = detail::pad_to_tile(g.C);
    // Kernel gradient, accumulated transposed: gK^T (taps x OCp) += col * gout^T.
    std::vector<double> col(want_k ? g.rows() * g.cols() : 0);
    std::vector<double> goT(want_k ? g.cols() * ocp : 0, 0.0);
    std::vector<double> gkT(want_k ? g.rows() * ocp : 0, 0.0);
    // Input gradient is a correlation of gout with the flipped, channel-swapped
    // kernel: dx^T (pixels x Cp) = im2row(gout) * Kf.
    const detail::ConvGeom gb_geom{g.OC, g.Ho, g.Wo, g.C, g.kh, g.kw, g.kh - 1 - g.pad, g.H, g.W};
    std::vector<double> grows(want_x ? gb_geom.cols() * gb_geom.rows() : 0);
    std::vector<double> kf(want_x ? gb_geom.rows() * cp : 0, 0.0);
    std::vector<double> dxT(want_x ? gb_geom.cols() * cp : 0);
    if (want_x)
      for (std::size_t oc = 0; oc < g.OC; ++oc)
        for (std::size_t c = 0; c < g.C; ++c)
          for (std::size_t ky = 0; ky < g.kh; ++ky)
            for (std::size_t kx = 0; kx < g.kw; ++kx)
              kf[((oc * g.kh + ky) * g.kw + kx) * cp + c] =
                  k[((oc * g.C + c) * g.kh + (g.kh - 1 - ky)) * g.kw + (g.kw - 1 - kx)];
    Tensor* gb = want_b ? &t.grad_buffer(bias) : nullptr;
    Tensor* gx = want_x ? &t.grad_buffer(input) : nullptr;
    for (std::size_t n = 0; n < is.n; ++n) {
      const double* go = gout.plane(n, 0);
      if (gb) {
        for (std::size_t oc = 0; oc < g.OC; ++oc) {
          double s = 0.0;
          const double* row = go + oc * g.cols();
          for (std::size_t p = 0; p < g.cols(); ++p) s += row[p];
          (*gb)[oc] += s;
        }
      }
      if (want_k) {
        detail::im2col(g, x.plane(n, 0), col.data());
        for (std::size_t oc = 0; oc < g.OC; ++oc)
          for (std::size_t p = 0; p < g.cols(); ++p) goT[p * ocp + oc] = go[oc * g.cols() + p];
        detail::gemm_acc(g.rows(), ocp, g.cols(), col.data(), goT.data(), gkT.data());
      }
      if (gx) {
        detail::im2row(gb_geom, go, grows.data());
        std::fill(dxT.begin(), dxT.end(), 0.0);
        detail::gemm_acc(gb_geom.cols(), cp, gb_geom.rows(), grows.data(), kf.data(), dxT.data());
        double* dst = gx->plane(n, 0);
        for (std::size_t p = 0; p < gb_geom.cols(); ++p)
          for (std::size_t c = 0; c < g.C; ++c) dst[c * gb_geom.cols() + p] += dxT[p * cp + c];
      }
    }
    if (want_k) {
      Tensor& gk = t.grad_buffer(kernel);
      for (std::size_t oc = 0; oc < g.OC; ++oc)
        for (std::size_t r = 0; r < g.rows(); ++r) gk[oc * g.rows() + r] += gkT[r * ocp + oc];
    }
  });
}

/// Elementwise max(0, x). The subgradient at 0 is 0.
inline Var relu(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  const Var out_var{tape.size()};
  return tape.record(std::move(out), {input}, [=](Tape& t) {
    const Tensor& g = t.grad_buffer(out_var);
    const Tensor& xv = t.value(input);
    Tensor& gx = t.grad_buffer(input);
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

/// Non-overlapping 2x2 max pooling. Ties go to the first element of the window
/// in row-major order.
inline Var maxpool2(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    throw std::invalid_argument("maxpool2: spatial dims must be even, got " + s.str());
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor out(os);
  std::vector<std::size_t> argmax(os.size());
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const std::size_t in_base = nc * s.plane();
    const std::size_t out_base = nc * os.plane();
    for (std::size_t y = 0; y < os.h; ++y)
      for (std::size_t xo = 0; xo < os.w; ++xo) {
        std::size_t best = in_base + (2 * y) * s.w + 2 * xo;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = in_base + (2 * y + dy) * s.w + 2 * xo + dx;
            if (x[idx] > x[best]) best = idx;
          }
        out[out_base + y * os.w + xo] = x[best];
        argmax[out_base + y * os.w + xo] = best;
      }
  }
  const Var out_var{tape.size()};
  return tape.record(std::move(out), {input}, [=, argmax = std::move(argmax)](Tape& t) {
    const Tensor& g = t.grad_buffer(out_var);
    Tensor& gx = t.grad_buffer(input);
    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[i];
  });
}

/// Non-overlapping 2x2 average pooling.
inline Var avgpool2(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    throw std::invalid_argument("avgpool2: spatial dims must be even, got " + s.str());
  const Shape os{s.n, s.c, s.h / 2, s.w / 2};
  Tensor out(os);
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
    for (std::size_t y = 0; y < os.h; ++y)
      for (std::size_t xo = 0; xo < os.w; ++xo) {
        const double* p = x.ptr() + nc * s.plane() + 2 * y * s.w + 2 * xo;
        out[nc * os.plane() + y * os.w + xo] = 0.25 * (p[0] + p[1] + p[s.w] + p[s.w + 1]);
      }
  const Var out_var{tape.size()};
  return tape.record(std::move(out), {input}, [=](Tape& t) {
    const Tensor& g = t.grad_buffer(out_var);
    Tensor& gx = t.grad_buffer(input);
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc)
      for (std::size_t y = 0; y < os.h; ++y)
        for (std::size_t xo = 0; xo < os.w; ++xo) {
          const double v = 0.25 * g[nc * os.plane() + y * os.w + xo];
          double* p = gx.ptr() + nc * s.plane() + 2 * y * s.w + 2 * xo;
          p[0] += v;
          p[1] += v;
          p[s.w] += v;
          p[s.w + 1] += v;
        }
  });
}

/// Spatial mean per channel: (B, C, H, W) -> (B, C, 1, 1).
inline Var global_avg_pool(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  const Shape s = x.shape();
  Tensor out({s.n, s.c, 1, 1});
  const double inv = 1.0 / static_cast<double>(s.plane());
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    double acc = 0.0;
    const double* p = x.ptr() + nc * s.plane();
    for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
    out[nc] = acc * inv;
  }
  const Var out_var{tape.size()};
  return tape.record(std::move(out), {input}, [=](Tape& t) {
    const Tensor& g = t.grad_buffer(out_var);
    Tensor& gx = t.grad_buffer(input);
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      double* p = gx.ptr() + nc * s.plane();
      for (std::size_t i = 0; i < s.plane(); ++i) p[i] += g[nc] * inv;
    }
  });
}

/// Channel-wise concatenation. Batch and spatial extents must agree.
inline Var concat_channels(Tape& tape, Var a, Var b) {
  const Shape sa = tape.value(a).shape();
  const Shape sb = tape.value(b).shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
    throw std::invalid_argument("concat_channels: mismatched shapes " + sa.str() + " and " + sb.str());
  Tensor out({sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t la = sa.c * sa.plane();
  const std::size_t lb = sb.c * sb.plane();
  for (std::size_t n = 0; n < sa.n; ++n) {
    std::copy_n(tape.value(a).ptr() + n * la, la, out.ptr() + n * (la + lb));
    std::copy_n(tape.value(b).ptr() + n * lb, lb, out.ptr() + n * (la + lb) + la);
  }
  const Var out_var{tape.size()};
  return tape.record(std::move(out), {a, b}, [=](Tape& t) {
    const Tensor& g = t.grad_buffer(out_var);
    if (t.wants_grad(a)) {
      Tensor& ga = t.grad_buffer(a);
      for (std::size_t n = 0; n < sa.n; ++n)
        for (std::size_t i = 0; i < la; ++i) ga[n * la + i] += g[n * (la + lb) + i];
    }
    if (t.wants_grad(b)) {
      Tensor& gb = t.grad_buffer(b);
      for (std::size_t n = 0; n < sa.n; ++n)
        for (std::size_t i = 0; i < lb; ++i) gb[n * lb + i] += g[n * (la + lb) + la + i];
    }
  });
}

/// Channels [begin, begin + count) of t.
inline Tensor slice_channels(const Tensor& t, std::size_t begin, std::size_t count) {
  const Shape s = t.shape();
  if (begin + count > s.c) throw std::out_of_range("slice_channels: range exceeds channel count");
  Tensor out({s.n, count, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n)
    std::copy_n(t.plane(n, begin), count * s.plane(), out.plane(n, 0));
  return out;
}

/// Mean of squared differences over all elements. The optional mask (same
/// shape) zeroes out excluded entries; the denominator stays the element count.
inline Var l2_loss(Tape& tape, Var pred, const Tensor& target, const Tensor* mask = nullptr) {
  const Tensor& p = tape.value(pred);
  if (p.shape() != target.shape())
    throw std::invalid_argument("l2_loss: shape mismatch " + p.shape().str() + " vs " + target.shape().str());
  if (mask && mask->shape() != target.shape()) throw std::invalid_argument("l2_loss: mask shape mismatch");
  const double inv_n = 1.0 / static_cast<double>(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] - target[i];
    acc += (mask ? (*mask)[i] : 1.0) * d * d;
  }
  std::optional<Tensor> mask_copy;
  if (mask) mask_copy = *mask;
  const Var out_var{tape.size()};
  return tape.record(detail::scalar_tensor(acc * inv_n), {pred},
                        [=, mask_copy = std::move(mask_copy)](Tape& t) {
                          const double g = t.grad_buffer(out_var)[0];
                          const Tensor& pv = t.value(pred);
                          Tensor& gp = t.grad_buffer(pred);
                          const double scale = 2.0 * inv_n * g;
                          for (std::size_t i = 0; i < pv.size(); ++i) {
                            const double m = mask_copy ? (*mask_copy)[i] : 1.0;
                            gp[i] += scale * m * (pv[i] - target[i]);
                          }
                        });
}

/// sum_i coeffs[i] * terms[i] for equally-shaped terms.
inline Var weighted_sum(Tape& tape, const std::vector<Var>& terms, const std::vector<double>& coeffs) {
  if (terms.empty() || terms.size() != coeffs.size())
    throw std::invalid_argument("weighted_sum: need one coefficient per term");
  const Shape s = tape.value(terms.front()).shape();
  Tensor out(s);
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const Tensor& v = tape.value(terms[k]);
    if (v.shape() != s) throw std::invalid_argument("weighted_sum: shape mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += coeffs[k] * v[i];
  }
  const Var out_var{tape.size()};
  return tape.record(std::move(out), terms, [=](Tape& t) {
    const Tensor& g = t.grad_buffer(out_var);
    for (std::size_t k = 0; k < terms.size(); ++k) {
      if (!t.wants_grad(terms[k])) continue;
      Tensor& gk = t.grad_buffer(terms[k]);
      for (std::size_t i = 0; i < g.size(); ++i) gk[i] += coeffs[k] * g[i];
    }
  });
}

/// Sum of all elements as a scalar.
inline Var sum(Tape& tape, Var input) {
  double acc = 0.0;
  for (double v : tape.value(input).data()) acc += v;
  const Var out_var{tape.size()};
  return tape.record(detail::scalar_tensor(acc), {input}, [=](Tape& t) {
    const double g = t.grad_buffer(out_var)[0];
    for (double& v : t.grad_buffer(input).storage()) v += g;
  });
}

}  // namespace flowpose
