// Copyright 2026 The csifb Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "csifb/tensor.hpp"

// Forward and backward kernels for [C,H,W] feature maps.

namespace csifb::kernels {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(t.shape()));
  }
}

// Lowers a zero-padded [C,H,W] map into a [C*k*k, H*W] patch matrix.
inline RowMatrix im2col(const Tensor& x, std::size_t k) {
  const std::size_t c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  RowMatrix col = RowMatrix::Zero(static_cast<Eigen::Index>(c_in * k * k),
                                  static_cast<Eigen::Index>(h * w));
  for (std::size_t c = 0; c < c_in; ++c) {
    const double* plane = x.raw() + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* dst = col.data() + ((c * k + ky) * k + kx) * h * w;
        const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w),
                                                             static_cast<std::ptrdiff_t>(w) - dx);
        for (std::size_t oy = 0; oy < h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy) + dy;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || x_hi <= x_lo) continue;
          const double* src = plane + iy * static_cast<std::ptrdiff_t>(w);
          double* row = dst + oy * w;
          for (std::ptrdiff_t ox = x_lo; ox < x_hi; ++ox) row[ox] = src[ox + dx];
        }
      }
    }
  }
  return col;
}

// Adjoint of im2col: scatters patch gradients back onto the [C,H,W] map.
inline Tensor col2im(const RowMatrix& col, std::size_t c_in, std::size_t h, std::size_t w,
                     std::size_t k) {
  Tensor x(Shape{c_in, h, w});
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t c = 0; c < c_in; ++c) {
    double* plane = x.raw() + c * h * w;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const double* src = col.data() + ((c * k + ky) * k + kx) * h * w;
        const auto dx = static_cast<std::ptrdiff_t>(kx) - pad;
        const auto dy = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t x_lo = std::max<std::ptrdiff_t>(0, -dx);
        const std::ptrdiff_t x_hi = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w),
                                                             static_cast<std::ptrdiff_t>(w) - dx);
        for (std::size_t oy = 0; oy < h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy) + dy;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h) || x_hi <= x_lo) continue;
          double* row = plane + iy * static_cast<std::ptrdiff_t>(w);
          const double* g = src + oy * w;
          for (std::ptrdiff_t ox = x_lo; ox < x_hi; ++ox) row[ox + dx] += g[ox];
        }
      }
    }
  }
  return x;
}

inline void check_conv_shapes(const Tensor& x, const Tensor& weight, const Tensor* bias) {
  require_rank(x, 3, "conv2d input");
  require_rank(weight, 4, "conv2d kernels");
  const std::size_t k = weight.dim(2);
  if (weight.dim(3) != k || k % 2 == 0) {
    throw DimensionError("conv2d: kernels must be square with odd size, got " +
                         shape_string(weight.shape()));
  }
  if (weight.dim(1) != x.dim(0)) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(weight.dim(1)) +
                         " input channels, input has " + std::to_string(x.dim(0)));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != weight.dim(0))) {
    throw DimensionError("conv2d: bias shape " + shape_string(bias->shape()) +
                         " does not match output channels " + std::to_string(weight.dim(0)));
  }
}

}  // namespace detail

/// Same-padded 2-D cross-correlation: [C_in,H,W] * [C_out,C_in,k,k] -> [C_out,H,W].
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias = nullptr) {
  detail::check_conv_shapes(x, weight, bias);
  const std::size_t c_out = weight.dim(0), c_in = x.dim(0), k = weight.dim(2);
  const std::size_t h = x.dim(1), w = x.dim(2);
  Tensor y(Shape{c_out, h, w});
  const RowMatrix col = detail::im2col(x, k);
  ConstMatrixMap wm(weight.raw(), static_cast<Eigen::Index>(c_out),
                    static_cast<Eigen::Index>(c_in * k * k));
  MatrixMap ym(y.raw(), static_cast<Eigen::Index>(c_out), static_cast<Eigen::Index>(h * w));
  ym.noalias() = wm * col;
  if (bias) {
    for (std::size_t o = 0; o < c_out; ++o) ym.row(static_cast<Eigen::Index>(o)).array() += (*bias)[o];
  }
  return y;
}

struct Conv2dGrads {
  Tensor input;   // empty when not requested
  Tensor weight;
  Tensor bias;
};

inline Conv2dGrads conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out,
                                   bool need_input_grad = true) {
  detail::check_conv_shapes(x, weight, nullptr);
  const std::size_t c_out = weight.dim(0), c_in = x.dim(0), k = weight.dim(2);
  const std::size_t h = x.dim(1), w = x.dim(2);
  if (grad_out.shape() != Shape{c_out, h, w}) {
    throw DimensionError("conv2d_backward: gradient shape " + shape_string(grad_out.shape()));
  }
  const auto ck = static_cast<Eigen::Index>(c_in * k * k);
  const auto hw = static_cast<Eigen::Index>(h * w);
  ConstMatrixMap gy(grad_out.raw(), static_cast<Eigen::Index>(c_out), hw);
  ConstMatrixMap wm(weight.raw(), static_cast<Eigen::Index>(c_out), ck);

  Conv2dGrads g;
  g.weight = Tensor(weight.shape());
  g.bias = Tensor(Shape{c_out});
  {
    const RowMatrix col = detail::im2col(x, k);
    MatrixMap gw(g.weight.raw(), static_cast<Eigen::Index>(c_out), ck);
    gw.noalias() = gy * col.transpose();
  }
  for (std::size_t o = 0; o < c_out; ++o) g.bias[o] = gy.row(static_cast<Eigen::Index>(o)).sum();
  if (need_input_grad) {
    const RowMatrix gcol = wm.transpose() * gy;
    g.input = detail::col2im(gcol, c_in, h, w, k);
  }
  return g;
}

struct PoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};

/// Non-overlapping max pooling. Ties resolve to the first maximal element in
/// row-major window order.
inline PoolResult maxpool2d(const Tensor& x, std::size_t window = 2) {
  detail::require_rank(x, 3, "maxpool2d input");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (window == 0 || h % window != 0 || w % window != 0) {
    throw DimensionError("maxpool2d: spatial dims " + shape_string(x.shape()) +
                         " not divisible by window " + std::to_string(window));
  }
  const std::size_t oh = h / window, ow = w / window;
  PoolResult r{Tensor(Shape{c, oh, ow}), std::vector<std::size_t>(c * oh * ow)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = (ch * h + oy * window) * w + ox * window;
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = (ch * h + oy * window + dy) * w + ox * window + dx;
            if (x[idx] > best) {
              best = x[idx];
              best_idx = idx;
            }
          }
        }
        const std::size_t o = (ch * oh + oy) * ow + ox;
        r.output[o] = best;
        r.argmax[o] = best_idx;
      }
    }
  }
  return r;
}

inline Tensor maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                                 const Tensor& grad_out) {
  if (argmax.size() != grad_out.size()) throw DimensionError("maxpool2d_backward: size mismatch");
  Tensor gx(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += grad_out[i];
  return gx;
}

/// Nearest-neighbour upsampling; every element becomes a factor x factor block.
inline Tensor upsample_nearest2d(const Tensor& x, std::size_t factor = 2) {
  detail::require_rank(x, 3, "upsample input");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h * factor, ow = w * factor;
  Tensor y(Shape{c, oh, ow});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const double* src = x.raw() + (ch * h + oy / factor) * w;
      double* dst = y.raw() + (ch * oh + oy) * ow;
      for (std::size_t ox = 0; ox < ow; ++ox) dst[ox] = src[ox / factor];
    }
  }
  return y;
}

inline Tensor upsample_nearest2d_backward(const Tensor& grad_out, std::size_t factor = 2) {
  detail::require_rank(grad_out, 3, "upsample gradient");
  const std::size_t c = grad_out.dim(0), oh = grad_out.dim(1), ow = grad_out.dim(2);
  if (oh % factor != 0 || ow % factor != 0) {
    throw DimensionError("upsample_backward: gradient not divisible by factor");
  }
  const std::size_t h = oh / factor, w = ow / factor;
  Tensor gx(Shape{c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      const double* src = grad_out.raw() + (ch * oh + oy) * ow;
      double* dst = gx.raw() + (ch * h + oy / factor) * w;
      for (std::size_t ox = 0; ox < ow; ++ox) dst[ox / factor] += src[ox];
    }
  }
  return gx;
}

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.vec()) v = v > 0.0 ? v : 0.0;
  return y;
}

// Derivative taken as 0 at the kink.
inline Tensor relu_backward(const Tensor& x, const Tensor& grad_out) {
  x.require_same_shape(grad_out, "relu_backward");
  Tensor gx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  return gx;
}

}  // namespace csifb::kernels
