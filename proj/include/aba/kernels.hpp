#pragma once

// Plane-stack kernels used by both the plain and the taped blur paths. Keeping
// a single implementation guarantees the two paths agree bit for bit.

#include <cmath>

#include "aba/tensor.hpp"

namespace aba::kernels {

/// out[i] = sum_{j<i} in[j] for i = 0..K (K+1 planes, out[0] = 0).
inline Tensor prefix_sums(const Tensor& in) {
  Tensor out(in.channels + 1, in.height, in.width);
  const std::size_t P = in.plane_size();
  for (int i = 1; i <= in.channels; ++i) {
    auto prev = out.plane(i - 1);
    auto src = in.plane(i - 1);
    auto dst = out.plane(i);
    for (std::size_t p = 0; p < P; ++p) dst[p] = prev[p] + src[p];
  }
  return out;
}

inline Tensor prefix_sums_backward(const Tensor& grad_out) {
  // d out[i] / d in[j] = 1 for j < i, so grad_in[j] = sum_{i>j} grad_out[i].
  Tensor g(grad_out.channels - 1, grad_out.height, grad_out.width);
  const std::size_t P = g.plane_size();
  for (int j = g.channels - 1; j >= 0; --j) {
    auto dst = g.plane(j);
    auto go = grad_out.plane(j + 1);
    if (j + 1 < g.channels) {
      auto next = g.plane(j + 1);
      for (std::size_t p = 0; p < P; ++p) dst[p] = next[p] + go[p];
    } else {
      for (std::size_t p = 0; p < P; ++p) dst[p] = go[p];
    }
  }
  return g;
}

/// out[i] = sum_{j>=i} in[j] for i = 0..K (K+1 planes, out[K] = 0).
inline Tensor suffix_sums(const Tensor& in) {
  Tensor out(in.channels + 1, in.height, in.width);
  const std::size_t P = in.plane_size();
  for (int i = in.channels - 1; i >= 0; --i) {
    auto next = out.plane(i + 1);
    auto src = in.plane(i);
    auto dst = out.plane(i);
    for (std::size_t p = 0; p < P; ++p) dst[p] = next[p] + src[p];
  }
  return out;
}

inline Tensor suffix_sums_backward(const Tensor& grad_out) {
  // grad_in[j] = sum_{i<=j} grad_out[i].
  Tensor g(grad_out.channels - 1, grad_out.height, grad_out.width);
  const std::size_t P = g.plane_size();
  for (int j = 0; j < g.channels; ++j) {
    auto dst = g.plane(j);
    auto go = grad_out.plane(j);
    if (j > 0) {
      auto prev = g.plane(j - 1);
      for (std::size_t p = 0; p < P; ++p) dst[p] = prev[p] + go[p];
    } else {
      for (std::size_t p = 0; p < P; ++p) dst[p] = go[p];
    }
  }
  return g;
}

/// out[n*K + k] = scale * r[n] * v[k]  (r: N planes, v: K planes).
inline Tensor outer_planes(const Tensor& r, const Tensor& v, double scale = 1.0) {
  require(r.same_spatial(v), "outer_planes: size mismatch");
  const int N = r.channels, K = v.channels;
  Tensor out(N * K, r.height, r.width);
  const std::size_t P = r.plane_size();
  for (int n = 0; n < N; ++n) {
    auto rn = r.plane(n);
    for (int k = 0; k < K; ++k) {
      auto vk = v.plane(k);
      auto dst = out.plane(n * K + k);
      for (std::size_t p = 0; p < P; ++p) dst[p] = scale * rn[p] * vk[p];
    }
  }
  return out;
}

/// Returns (grad_r, grad_v) for outer_planes.
inline std::pair<Tensor, Tensor> outer_planes_backward(const Tensor& r, const Tensor& v, const Tensor& grad_out,
                                                       double scale = 1.0) {
  const int N = r.channels, K = v.channels;
  Tensor gr = zeros_like(r), gv = zeros_like(v);
  const std::size_t P = r.plane_size();
  for (int n = 0; n < N; ++n) {
    auto rn = r.plane(n);
    auto grn = gr.plane(n);
    for (int k = 0; k < K; ++k) {
      auto vk = v.plane(k);
      auto gvk = gv.plane(k);
      auto go = grad_out.plane(n * K + k);
      for (std::size_t p = 0; p < P; ++p) {
        grn[p] += scale * go[p] * vk[p];
        gvk[p] += scale * go[p] * rn[p];
      }
    }
  }
  return {std::move(gr), std::move(gv)};
}

/// out[c] = sum_i weights[i] * stack[i*C + c]: per-pixel weighting of N
/// C-channel images, weights shared across channels.
inline Tensor weighted_stack_sum(const Tensor& weights, const Tensor& stack) {
  require(weights.same_spatial(stack), "weighted_stack_sum: size mismatch");
  const int N = weights.channels;
  require(N > 0 && stack.channels % N == 0, "weighted_stack_sum: stack has " + std::to_string(stack.channels) +
                                                " planes, not a multiple of " + std::to_string(N));
  const int C = stack.channels / N;
  Tensor out(C, stack.height, stack.width);
  const std::size_t P = stack.plane_size();
  for (int i = 0; i < N; ++i) {
    auto a = weights.plane(i);
    for (int c = 0; c < C; ++c) {
      auto s = stack.plane(i * C + c);
      auto dst = out.plane(c);
      for (std::size_t p = 0; p < P; ++p) dst[p] += a[p] * s[p];
    }
  }
  return out;
}

inline std::pair<Tensor, Tensor> weighted_stack_sum_backward(const Tensor& weights, const Tensor& stack,
                                                             const Tensor& grad_out) {
  const int N = weights.channels;
  const int C = stack.channels / N;
  Tensor gw = zeros_like(weights), gs = zeros_like(stack);
  const std::size_t P = stack.plane_size();
  for (int i = 0; i < N; ++i) {
    auto a = weights.plane(i);
    auto ga = gw.plane(i);
    for (int c = 0; c < C; ++c) {
      auto s = stack.plane(i * C + c);
      auto gsd = gs.plane(i * C + c);
      auto go = grad_out.plane(c);
      for (std::size_t p = 0; p < P; ++p) {
        ga[p] += go[p] * s[p];
        gsd[p] = go[p] * a[p];
      }
    }
  }
  return {std::move(gw), std::move(gs)};
}

/// Softmax across channels at every pixel.
inline Tensor channel_softmax(const Tensor& in) {
  Tensor out = zeros_like(in);
  const std::size_t P = in.plane_size();
  for (std::size_t p = 0; p < P; ++p) {
    double mx = -INFINITY;
    for (int c = 0; c < in.channels; ++c) mx = std::max(mx, in.data[c * P + p]);
    double s = 0.0;
    for (int c = 0; c < in.channels; ++c) {
      const double e = std::exp(in.data[c * P + p] - mx);
      out.data[c * P + p] = e;
      s += e;
    }
    for (int c = 0; c < in.channels; ++c) out.data[c * P + p] /= s;
  }
  return out;
}

inline Tensor channel_softmax_backward(const Tensor& out, const Tensor& grad_out) {
  Tensor g = zeros_like(out);
  const std::size_t P = out.plane_size();
  for (std::size_t p = 0; p < P; ++p) {
    double dot = 0.0;
    for (int c = 0; c < out.channels; ++c) dot += grad_out.data[c * P + p] * out.data[c * P + p];
    for (int c = 0; c < out.channels; ++c)
      g.data[c * P + p] = out.data[c * P + p] * (grad_out.data[c * P + p] - dot);
  }
  return g;
}

/// Luma weights applied to a 3-channel tensor; a 1-channel tensor passes through.
inline Tensor luma(const Tensor& in) { return to_gray(in); }

inline Tensor luma_backward(int channels, const Tensor& grad_out) {
  if (channels == 1) return grad_out;
  Tensor g(3, grad_out.height, grad_out.width);
  const double wts[3] = {0.299, 0.587, 0.114};
  for (int c = 0; c < 3; ++c) {
    auto dst = g.plane(c);
    auto go = grad_out.plane(0);
    for (std::size_t p = 0; p < dst.size(); ++p) dst[p] = wts[c] * go[p];
  }
  return g;
}

inline constexpr double kGradMagEps = 1e-6;

/// sqrt(gx^2 + gy^2 + eps) with central differences and replicated borders.
inline Tensor gradient_magnitude(const Tensor& in) {
  require(in.channels == 1, "gradient_magnitude: expects a single plane");
  const int H = in.height, W = in.width;
  Tensor out(1, H, W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double gx = 0.5 * (in.at(0, y, std::min(x + 1, W - 1)) - in.at(0, y, std::max(x - 1, 0)));
      const double gy = 0.5 * (in.at(0, std::min(y + 1, H - 1), x) - in.at(0, std::max(y - 1, 0), x));
      out.at(0, y, x) = std::sqrt(gx * gx + gy * gy + kGradMagEps);
    }
  }
  return out;
}

inline Tensor gradient_magnitude_backward(const Tensor& in, const Tensor& out, const Tensor& grad_out) {
  const int H = in.height, W = in.width;
  Tensor g = zeros_like(in);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const int xp = std::min(x + 1, W - 1), xm = std::max(x - 1, 0);
      const int yp = std::min(y + 1, H - 1), ym = std::max(y - 1, 0);
      const double gx = 0.5 * (in.at(0, y, xp) - in.at(0, y, xm));
      const double gy = 0.5 * (in.at(0, yp, x) - in.at(0, ym, x));
      const double k = grad_out.at(0, y, x) / out.at(0, y, x);
      g.at(0, y, xp) += 0.5 * k * gx;
      g.at(0, y, xm) -= 0.5 * k * gx;
      g.at(0, yp, x) += 0.5 * k * gy;
      g.at(0, ym, x) -= 0.5 * k * gy;
    }
  }
  return g;
}

}  // namespace aba::kernels
