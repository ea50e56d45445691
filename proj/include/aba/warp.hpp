#pragma once

// Bilinear pull warping with edge-replication and its analytic gradients.
//
// warp(I, V)[c, p] = bilinear(I_c, p + V[p]). Sample coordinates outside the
// image are clamped to the border, so the output is always a convex
// combination of input pixels. A flow tensor may stack M fields (2M channels,
// dx/dy interleaved per field); the output then stacks M warped copies of the
// image, copy m occupying channels [m*C, (m+1)*C).

#include <cmath>

#include "aba/tensor.hpp"

namespace aba {

namespace detail {

/// One axis of a clamped bilinear lookup.
struct AxisSample {
  int i0 = 0;
  int i1 = 0;
  double frac = 0.0;
  bool outside = false;  // unclamped coordinate left [0, n-1]
  bool on_knot = false;  // coordinate sits on an integer sample position
  int knot = 0;
};

inline AxisSample axis_sample(double s, int n) {
  AxisSample a;
  const double hi = static_cast<double>(n - 1);
  a.outside = s < 0.0 || s > hi;
  const double c = std::clamp(s, 0.0, hi);
  if (n == 1) {
    a.on_knot = true;
    return a;
  }
  const double fl = std::floor(c);
  a.i0 = std::min(static_cast<int>(fl), n - 2);
  a.i1 = a.i0 + 1;
  a.frac = c - a.i0;
  if (c == fl) {
    a.on_knot = true;
    a.knot = static_cast<int>(fl);
  }
  return a;
}

/// d/ds of a clamped piecewise-linear row at sample a. On a knot the left and
/// right one-sided slopes are averaged; outside the valid range it is zero.
template <typename Get>
double axis_slope(const AxisSample& a, int n, Get get) {
  if (a.outside || n == 1) return 0.0;
  if (!a.on_knot) return get(a.i1) - get(a.i0);
  const int k = a.knot;
  const double left = k >= 1 ? get(k) - get(k - 1) : 0.0;
  const double right = k <= n - 2 ? get(k + 1) - get(k) : 0.0;
  return 0.5 * (left + right);
}

}  // namespace detail

/// Warps every channel of `image` by each of the M fields stacked in `flows`.
inline Tensor warp(const Tensor& image, const Tensor& flows) {
  require(image.same_spatial(flows), "warp: image " + image.shape_str() + " and flow " +
                                         flows.shape_str() + " differ in size");
  require(flows.channels % 2 == 0 && flows.channels > 0, "warp: flow needs 2M channels");
  const int H = image.height, W = image.width, C = image.channels;
  const int M = flows.channels / 2;
  Tensor out(M * C, H, W);
  for (int m = 0; m < M; ++m) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const auto ax = detail::axis_sample(x + flows.at(2 * m, y, x), W);
        const auto ay = detail::axis_sample(y + flows.at(2 * m + 1, y, x), H);
        const double w00 = (1 - ax.frac) * (1 - ay.frac), w01 = ax.frac * (1 - ay.frac);
        const double w10 = (1 - ax.frac) * ay.frac, w11 = ax.frac * ay.frac;
        for (int c = 0; c < C; ++c) {
          out.at(m * C + c, y, x) = w00 * image.at(c, ay.i0, ax.i0) + w01 * image.at(c, ay.i0, ax.i1) +
                                    w10 * image.at(c, ay.i1, ax.i0) + w11 * image.at(c, ay.i1, ax.i1);
        }
      }
    }
  }
  return out;
}

inline Frame warp(const Frame& image, const FlowField& flow) { return warp(image, flow.planes); }

struct WarpGradients {
  Tensor image;  // same shape as the warped image, summed over stacked fields
  Tensor flow;   // same shape as the flow stack
};

inline WarpGradients warp_backward(const Tensor& image, const Tensor& flows, const Tensor& grad_out) {
  require(image.same_spatial(flows), "warp_backward: image/flow size mismatch");
  require(flows.channels % 2 == 0 && flows.channels > 0, "warp_backward: flow needs 2M channels");
  const int H = image.height, W = image.width, C = image.channels;
  const int M = flows.channels / 2;
  require(grad_out.channels == M * C && grad_out.same_spatial(image),
          "warp_backward: grad_out " + grad_out.shape_str() + " does not match warp output");
  WarpGradients g{zeros_like(image), zeros_like(flows)};
  for (int m = 0; m < M; ++m) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const auto ax = detail::axis_sample(x + flows.at(2 * m, y, x), W);
        const auto ay = detail::axis_sample(y + flows.at(2 * m + 1, y, x), H);
        const double w00 = (1 - ax.frac) * (1 - ay.frac), w01 = ax.frac * (1 - ay.frac);
        const double w10 = (1 - ax.frac) * ay.frac, w11 = ax.frac * ay.frac;
        double gdx = 0.0, gdy = 0.0;
        for (int c = 0; c < C; ++c) {
          const double go = grad_out.at(m * C + c, y, x);
          if (go == 0.0) continue;
          g.image.at(c, ay.i0, ax.i0) += w00 * go;
          g.image.at(c, ay.i0, ax.i1) += w01 * go;
          g.image.at(c, ay.i1, ax.i0) += w10 * go;
          g.image.at(c, ay.i1, ax.i1) += w11 * go;
          const double sx0 = detail::axis_slope(ax, W, [&](int i) { return image.at(c, ay.i0, i); });
          const double sx1 = detail::axis_slope(ax, W, [&](int i) { return image.at(c, ay.i1, i); });
          gdx += go * ((1 - ay.frac) * sx0 + ay.frac * sx1);
          const double sy0 = detail::axis_slope(ay, H, [&](int i) { return image.at(c, i, ax.i0); });
          const double sy1 = detail::axis_slope(ay, H, [&](int i) { return image.at(c, i, ax.i1); });
          gdy += go * ((1 - ax.frac) * sy0 + ax.frac * sy1);
        }
        g.flow.at(2 * m, y, x) = gdx;
        g.flow.at(2 * m + 1, y, x) = gdy;
      }
    }
  }
  return g;
}

inline WarpGradients warp_backward(const Frame& image, const FlowField& flow, const Frame& grad_out) {
  return warp_backward(image, flow.planes, grad_out);
}

/// Bilinear resize with half-pixel centres (align_corners = false), edge-clamped.
inline Tensor resize_bilinear(const Tensor& in, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0, "resize_bilinear: empty target");
  Tensor out(in.channels, out_h, out_w);
  const double sy = static_cast<double>(in.height) / out_h;
  const double sx = static_cast<double>(in.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const auto ay = detail::axis_sample((y + 0.5) * sy - 0.5, in.height);
    for (int x = 0; x < out_w; ++x) {
      const auto ax = detail::axis_sample((x + 0.5) * sx - 0.5, in.width);
      for (int c = 0; c < in.channels; ++c) {
        out.at(c, y, x) = (1 - ay.frac) * ((1 - ax.frac) * in.at(c, ay.i0, ax.i0) + ax.frac * in.at(c, ay.i0, ax.i1)) +
                          ay.frac * ((1 - ax.frac) * in.at(c, ay.i1, ax.i0) + ax.frac * in.at(c, ay.i1, ax.i1));
      }
    }
  }
  return out;
}

/// Adjoint of resize_bilinear: scatters an output-sized gradient back to the input grid.
inline Tensor resize_bilinear_backward(const Tensor& grad_out, int in_h, int in_w) {
  Tensor g(grad_out.channels, in_h, in_w);
  const double sy = static_cast<double>(in_h) / grad_out.height;
  const double sx = static_cast<double>(in_w) / grad_out.width;
  for (int y = 0; y < grad_out.height; ++y) {
    const auto ay = detail::axis_sample((y + 0.5) * sy - 0.5, in_h);
    for (int x = 0; x < grad_out.width; ++x) {
      const auto ax = detail::axis_sample((x + 0.5) * sx - 0.5, in_w);
      for (int c = 0; c < grad_out.channels; ++c) {
        const double go = grad_out.at(c, y, x);
        g.at(c, ay.i0, ax.i0) += (1 - ay.frac) * (1 - ax.frac) * go;
        g.at(c, ay.i0, ax.i1) += (1 - ay.frac) * ax.frac * go;
        g.at(c, ay.i1, ax.i0) += ay.frac * (1 - ax.frac) * go;
        g.at(c, ay.i1, ax.i1) += ay.frac * ax.frac * go;
      }
    }
  }
  return g;
}

}  // namespace aba
