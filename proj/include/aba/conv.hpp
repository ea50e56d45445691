#pragma once

// Square-kernel 2-D convolution and transposed convolution with zero padding.
// Weights are stored as Tensor(out*in, k, k) for conv2d (index o*in + i) and
// Tensor(in*out, k, k) for conv_transpose2d (index i*out + o), matching the
// usual framework layouts.

#include <algorithm>
#include <vector>

#include "aba/tensor.hpp"

namespace aba::kernels {

struct ConvShape {
  int in_channels;
  int out_channels;
  int kernel;
  int stride;
  int pad;
};

inline int conv_out_size(int n, const ConvShape& s) { return (n + 2 * s.pad - s.kernel) / s.stride + 1; }
inline int deconv_out_size(int n, const ConvShape& s) { return (n - 1) * s.stride - 2 * s.pad + s.kernel; }

/// Half-open range [lo, hi) of j in [0, n_loop) with j * stride + off in [0, n_target).
struct TapRange {
  int lo, hi;
};

inline TapRange tap_range(int n_loop, int n_target, int stride, int off) {
  const int lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  const int last = n_target - 1 - off;
  const int hi = last < 0 ? 0 : std::min(n_loop, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

inline Tensor conv2d(const Tensor& in, const Tensor& weight, const Tensor& bias, const ConvShape& s) {
  require(in.channels == s.in_channels, "conv2d: input has " + std::to_string(in.channels) + " channels, expected " +
                                            std::to_string(s.in_channels));
  require(weight.channels == s.out_channels * s.in_channels && weight.height == s.kernel &&
              weight.width == s.kernel,
          "conv2d: weight shape " + weight.shape_str());
  const int OH = conv_out_size(in.height, s), OW = conv_out_size(in.width, s);
  require(OH > 0 && OW > 0, "conv2d: input too small");
  Tensor out(s.out_channels, OH, OW);
  for (int o = 0; o < s.out_channels; ++o) {
    auto dst = out.plane(o);
    std::fill(dst.begin(), dst.end(), bias.data[o]);
    for (int i = 0; i < s.in_channels; ++i) {
      for (int ky = 0; ky < s.kernel; ++ky) {
        for (int kx = 0; kx < s.kernel; ++kx) {
          const double w = weight.at(o * s.in_channels + i, ky, kx);
          if (w == 0.0) continue;
          const TapRange ry = tap_range(OH, in.height, s.stride, ky - s.pad);
          const TapRange rx = tap_range(OW, in.width, s.stride, kx - s.pad);
          for (int oy = ry.lo; oy < ry.hi; ++oy) {
            const int iy = oy * s.stride - s.pad + ky;
            const double* src = &in.data[(static_cast<std::size_t>(i) * in.height + iy) * in.width];
            double* drow = &dst[static_cast<std::size_t>(oy) * OW];
            const int off = kx - s.pad;
            for (int ox = rx.lo; ox < rx.hi; ++ox) drow[ox] += w * src[ox * s.stride + off];
          }
        }
      }
    }
  }
  return out;
}

struct ConvGradients {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

inline ConvGradients conv2d_backward(const Tensor& in, const Tensor& weight, const Tensor& grad_out,
                                     const ConvShape& s, bool need_input_grad = true) {
  ConvGradients g{need_input_grad ? zeros_like(in) : Tensor(), zeros_like(weight), Tensor(s.out_channels, 1, 1)};
  const int OH = grad_out.height, OW = grad_out.width;
  for (int o = 0; o < s.out_channels; ++o) {
    auto go = grad_out.plane(o);
    double bsum = 0.0;
    for (double v : go) bsum += v;
    g.bias.data[o] = bsum;
    for (int i = 0; i < s.in_channels; ++i) {
      for (int ky = 0; ky < s.kernel; ++ky) {
        for (int kx = 0; kx < s.kernel; ++kx) {
          const double w = weight.at(o * s.in_channels + i, ky, kx);
          double wsum = 0.0;
          const TapRange ry = tap_range(OH, in.height, s.stride, ky - s.pad);
          const TapRange rx = tap_range(OW, in.width, s.stride, kx - s.pad);
          for (int oy = ry.lo; oy < ry.hi; ++oy) {
            const int iy = oy * s.stride - s.pad + ky;
            const std::size_t row = (static_cast<std::size_t>(i) * in.height + iy) * in.width;
            const double* src = &in.data[row];
            const double* grow = &go[static_cast<std::size_t>(oy) * OW];
            const int off = kx - s.pad;
            for (int ox = rx.lo; ox < rx.hi; ++ox) wsum += grow[ox] * src[ox * s.stride + off];
            if (need_input_grad) {
              double* gin = &g.input.data[row];
              for (int ox = rx.lo; ox < rx.hi; ++ox) gin[ox * s.stride + off] += grow[ox] * w;
            }
          }
          g.weight.at(o * s.in_channels + i, ky, kx) = wsum;
        }
      }
    }
  }
  return g;
}

inline int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

/// Accumulates each output phase (oy mod stride, ox mod stride) into its own
/// dense buffer so the inner loop reads and writes contiguously, then interleaves.
inline Tensor conv_transpose2d(const Tensor& in, const Tensor& weight, const Tensor& bias, const ConvShape& s) {
  require(in.channels == s.in_channels, "conv_transpose2d: input has " + std::to_string(in.channels) +
                                            " channels, expected " + std::to_string(s.in_channels));
  require(weight.channels == s.in_channels * s.out_channels && weight.height == s.kernel &&
              weight.width == s.kernel,
          "conv_transpose2d: weight shape " + weight.shape_str());
  const int OH = deconv_out_size(in.height, s), OW = deconv_out_size(in.width, s), S = s.stride;
  const int MH = (OH + S - 1) / S, MW = (OW + S - 1) / S;
  const std::size_t phase_size = static_cast<std::size_t>(MH) * MW;
  // phases[(o * S + py) * S + px] holds outputs (m_y * S + py, m_x * S + px).
  std::vector<double> phases(static_cast<std::size_t>(s.out_channels) * S * S * phase_size, 0.0);
  for (int i = 0; i < s.in_channels; ++i) {
    for (int o = 0; o < s.out_channels; ++o) {
      for (int ky = 0; ky < s.kernel; ++ky) {
        const int offy = ky - s.pad, py = offy - floor_div(offy, S) * S, qy = floor_div(offy, S);
        const TapRange ry = tap_range(in.height, OH, S, offy);
        for (int kx = 0; kx < s.kernel; ++kx) {
          const double w = weight.at(i * s.out_channels + o, ky, kx);
          if (w == 0.0) continue;
          const int offx = kx - s.pad, px = offx - floor_div(offx, S) * S, qx = floor_div(offx, S);
          const TapRange rx = tap_range(in.width, OW, S, offx);
          double* base = &phases[((static_cast<std::size_t>(o) * S + py) * S + px) * phase_size];
          for (int iy = ry.lo; iy < ry.hi; ++iy) {
            const double* src = &in.data[(static_cast<std::size_t>(i) * in.height + iy) * in.width];
            double* drow = base + static_cast<std::size_t>(iy + qy) * MW + qx;
            for (int ix = rx.lo; ix < rx.hi; ++ix) drow[ix] += w * src[ix];
          }
        }
      }
    }
  }
  Tensor out(s.out_channels, OH, OW);
  for (int o = 0; o < s.out_channels; ++o)
    for (int oy = 0; oy < OH; ++oy) {
      const int py = oy % S, my = oy / S;
      double* drow = &out.data[(static_cast<std::size_t>(o) * OH + oy) * OW];
      for (int ox = 0; ox < OW; ++ox) {
        const int px = ox % S;
        drow[ox] = bias.data[o] +
                   phases[((static_cast<std::size_t>(o) * S + py) * S + px) * phase_size + static_cast<std::size_t>(my) * MW + ox / S];
      }
    }
  return out;
}

inline ConvGradients conv_transpose2d_backward(const Tensor& in, const Tensor& weight, const Tensor& grad_out,
                                               const ConvShape& s, bool need_input_grad = true) {
  ConvGradients g{need_input_grad ? zeros_like(in) : Tensor(), zeros_like(weight), Tensor(s.out_channels, 1, 1)};
  const int OH = grad_out.height, OW = grad_out.width;
  for (int o = 0; o < s.out_channels; ++o) {
    double bsum = 0.0;
    for (double v : grad_out.plane(o)) bsum += v;
    g.bias.data[o] = bsum;
  }
  for (int i = 0; i < s.in_channels; ++i) {
    for (int o = 0; o < s.out_channels; ++o) {
      auto go = grad_out.plane(o);
      for (int ky = 0; ky < s.kernel; ++ky) {
        for (int kx = 0; kx < s.kernel; ++kx) {
          const double w = weight.at(i * s.out_channels + o, ky, kx);
          double wsum = 0.0;
          const TapRange ry = tap_range(in.height, OH, s.stride, ky - s.pad);
          const TapRange rx = tap_range(in.width, OW, s.stride, kx - s.pad);
          for (int iy = ry.lo; iy < ry.hi; ++iy) {
            const int oy = iy * s.stride - s.pad + ky;
            const std::size_t row = (static_cast<std::size_t>(i) * in.height + iy) * in.width;
            const double* src = &in.data[row];
            const double* grow = &go[static_cast<std::size_t>(oy) * OW];
            const int off = kx - s.pad;
            for (int ix = rx.lo; ix < rx.hi; ++ix) wsum += grow[ix * s.stride + off] * src[ix];
            if (need_input_grad) {
              double* gin = &g.input.data[row];
              for (int ix = rx.lo; ix < rx.hi; ++ix) gin[ix] += grow[ix * s.stride + off] * w;
            }
          }
          g.weight.at(i * s.out_channels + o, ky, kx) = wsum;
        }
      }
    }
  }
  return g;
}

}  // namespace aba::kernels
