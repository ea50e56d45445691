#pragma once

// Dense optical flow by Horn–Schunck, optionally coarse-to-fine.
//
// The returned field U satisfies prev(p) ~= cur(p + U(p)). Intensities are
// processed on a 0..255 scale so the default smoothness weight (alpha = 10)
// balances against typical 8-bit gradients. Gradients never flow through
// this module: it is evaluated once per frame pair and treated as a constant.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "aba/image_io.hpp"
#include "aba/tensor.hpp"
#include "aba/warp.hpp"

namespace aba {

struct FlowConfig {
  double smoothness_alpha = 10.0;
  int iterations = 100;
  int pyramid_levels = 2;

  void validate() const {
    require(smoothness_alpha > 0.0, "FlowConfig: smoothness_alpha must be > 0");
    require(iterations >= 1, "FlowConfig: iterations must be >= 1");
    require(pyramid_levels >= 1, "FlowConfig: pyramid_levels must be >= 1");
  }
};

/// floor(log2(min(h, w) / 8)), at least 1. Requests beyond this are clamped.
inline int max_pyramid_levels(int h, int w) {
  int levels = 0;
  for (int m = std::min(h, w); m >= 16; m /= 2) ++levels;
  return std::max(levels, 1);
}

namespace detail {

inline Tensor downsample2(const Tensor& in) {
  const int h = in.height / 2, w = in.width / 2;
  Tensor out(in.channels, h, w);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(c, y, x) = 0.25 * (in.at(c, 2 * y, 2 * x) + in.at(c, 2 * y, 2 * x + 1) + in.at(c, 2 * y + 1, 2 * x) +
                                  in.at(c, 2 * y + 1, 2 * x + 1));
  return out;
}

/// 3x3 Horn–Schunck neighbourhood average (1/6 edge, 1/12 corner), replicated border.
inline void hs_average(const Tensor& u, Tensor& out) {
  const int H = u.height, W = u.width;
  for (int y = 0; y < H; ++y) {
    const int ym = std::max(y - 1, 0), yp = std::min(y + 1, H - 1);
    for (int x = 0; x < W; ++x) {
      const int xm = std::max(x - 1, 0), xp = std::min(x + 1, W - 1);
      out.at(0, y, x) = (u.at(0, ym, x) + u.at(0, yp, x) + u.at(0, y, xm) + u.at(0, y, xp)) / 6.0 +
                        (u.at(0, ym, xm) + u.at(0, ym, xp) + u.at(0, yp, xm) + u.at(0, yp, xp)) / 12.0;
    }
  }
}

/// One linearisation of Horn–Schunck around `flow` at a single scale (in place).
inline void hs_refine(const Tensor& prev, const Tensor& cur, FlowField& flow, const FlowConfig& cfg) {
  const int H = prev.height, W = prev.width;
  const Tensor warped = warp(cur, flow.planes);
  Tensor ix(1, H, W), iy(1, H, W), it(1, H, W);
  for (int y = 0; y < H; ++y) {
    const int ym = std::max(y - 1, 0), yp = std::min(y + 1, H - 1);
    for (int x = 0; x < W; ++x) {
      const int xm = std::max(x - 1, 0), xp = std::min(x + 1, W - 1);
      auto avg = [&](int yy, int xx) { return 0.5 * (prev.at(0, yy, xx) + warped.at(0, yy, xx)); };
      const double gx = 0.5 * (avg(y, xp) - avg(y, xm));
      const double gy = 0.5 * (avg(yp, x) - avg(ym, x));
      ix.at(0, y, x) = gx;
      iy.at(0, y, x) = gy;
      // Linearised about the current flow: gx*u + gy*v + it = 0 at the solution.
      it.at(0, y, x) = warped.at(0, y, x) - prev.at(0, y, x) - gx * flow.dx(y, x) - gy * flow.dy(y, x);
    }
  }
  const double a2 = cfg.smoothness_alpha * cfg.smoothness_alpha;
  Tensor u = channel_slice(flow.planes, 0, 1), v = channel_slice(flow.planes, 1, 1);
  Tensor ub(1, H, W), vb(1, H, W);
  for (int k = 0; k < cfg.iterations; ++k) {
    hs_average(u, ub);
    hs_average(v, vb);
    for (std::size_t p = 0; p < u.size(); ++p) {
      const double gx = ix.data[p], gy = iy.data[p];
      const double r = (gx * ub.data[p] + gy * vb.data[p] + it.data[p]) / (a2 + gx * gx + gy * gy);
      u.data[p] = ub.data[p] - gx * r;
      v.data[p] = vb.data[p] - gy * r;
    }
  }
  std::copy(u.data.begin(), u.data.end(), flow.planes.data.begin());
  std::copy(v.data.begin(), v.data.end(), flow.planes.data.begin() + static_cast<std::ptrdiff_t>(u.size()));
}

}  // namespace detail

inline FlowField estimate_flow(const Frame& prev, const Frame& cur, const FlowConfig& cfg = {}) {
  cfg.validate();
  require(prev.same_spatial(cur), "estimate_flow: frames differ in size");
  require(prev.height >= 8 && prev.width >= 8, "estimate_flow: frames must be at least 8x8, got " +
                                                   std::to_string(prev.height) + "x" + std::to_string(prev.width));
  auto scaled = [](const Frame& f) {
    Tensor g = to_gray(f);
    for (double& v : g.data) v *= 255.0;
    return g;
  };
  const int levels = std::min(cfg.pyramid_levels, max_pyramid_levels(prev.height, prev.width));
  std::vector<Tensor> pp{scaled(prev)}, pc{scaled(cur)};
  for (int l = 1; l < levels; ++l) {
    pp.push_back(detail::downsample2(pp.back()));
    pc.push_back(detail::downsample2(pc.back()));
  }
  FlowField flow(pp.back().height, pp.back().width);
  for (int l = levels - 1; l >= 0; --l) {
    if (flow.height() != pp[l].height || flow.width() != pp[l].width) {
      Tensor up = resize_bilinear(flow.planes, pp[l].height, pp[l].width);
      const double sy = static_cast<double>(pp[l].height) / flow.height();
      const double sx = static_cast<double>(pp[l].width) / flow.width();
      for (std::size_t p = 0; p < up.plane_size(); ++p) {
        up.data[p] *= sx;
        up.data[up.plane_size() + p] *= sy;
      }
      flow = FlowField(std::move(up));
    }
    detail::hs_refine(pp[l], pc[l], flow, cfg);
  }
  return flow;
}

inline double mean_endpoint_error(const FlowField& a, const FlowField& b) {
  require(a.planes.same_shape(b.planes), "mean_endpoint_error: size mismatch");
  double s = 0.0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) s += std::hypot(a.dx(y, x) - b.dx(y, x), a.dy(y, x) - b.dy(y, x));
  return s / (static_cast<double>(a.height()) * a.width());
}

/// "FLOWv1" + 2 pad bytes, H, W (u32 LE), then the dx plane and the dy plane as f32 LE.
inline void write_flow(const std::filesystem::path& path, const FlowField& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  io::bin::put_magic(out, "FLOWv1");
  io::bin::put_u32(out, static_cast<std::uint32_t>(f.height()));
  io::bin::put_u32(out, static_cast<std::uint32_t>(f.width()));
  for (double v : f.planes.data) io::bin::put_f32(out, v);
}

inline FlowField read_flow(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  const std::string what = path.string();
  io::bin::expect_magic(in, "FLOWv1", what);
  const int h = static_cast<int>(io::bin::get_u32(in, what));
  const int w = static_cast<int>(io::bin::get_u32(in, what));
  FlowField f(h, w);
  for (double& v : f.planes.data) v = io::bin::get_f32(in, what);
  return f;
}

}  // namespace aba
