#pragma once

// Dense planar containers shared by every module.
//
// Layout is planar (CHW): element (c, y, x) lives at (c * height + y) * width + x.
// A Frame is a Tensor with 1 or 3 channels and values in [0, 1]; a FlowField
// wraps a 2-channel tensor (dx, dy) in pixels.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "aba/error.hpp"

namespace aba {

struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {
    require(c >= 0 && h >= 0 && w >= 0, "Tensor: negative dimension");
  }

  std::size_t size() const { return data.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  bool empty() const { return data.empty(); }

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  std::span<double> plane(int c) {
    return {data.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
  }
  std::span<const double> plane(int c) const {
    return {data.data() + static_cast<std::size_t>(c) * plane_size(), plane_size()};
  }

  bool same_shape(const Tensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool same_spatial(const Tensor& o) const { return height == o.height && width == o.width; }

  std::string shape_str() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
};

using Frame = Tensor;

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.channels, t.height, t.width); }

inline Tensor scalar_tensor(double v) { return Tensor(1, 1, 1, v); }

/// Copies channels [begin, begin + count) into a new tensor.
inline Tensor channel_slice(const Tensor& t, int begin, int count) {
  require(begin >= 0 && count >= 0 && begin + count <= t.channels, "channel_slice: out of range");
  Tensor out(count, t.height, t.width);
  std::copy_n(t.data.begin() + static_cast<std::ptrdiff_t>(begin * t.plane_size()),
              out.size(), out.data.begin());
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "max_abs_diff: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

inline double mean_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "mean_abs_diff: shape mismatch");
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
  return s / static_cast<double>(a.size());
}

inline bool all_finite(const Tensor& t) {
  return std::all_of(t.data.begin(), t.data.end(), [](double v) { return std::isfinite(v); });
}

inline void clamp01(Tensor& t) {
  for (double& v : t.data) v = std::clamp(v, 0.0, 1.0);
}

/// Luma (0.299, 0.587, 0.114) for 3-channel input; copies single-channel input.
inline Tensor to_gray(const Frame& f) {
  if (f.channels == 1) return f;
  require(f.channels == 3, "to_gray: expected 1 or 3 channels, got " + std::to_string(f.channels));
  Tensor g(1, f.height, f.width);
  auto r = f.plane(0), gr = f.plane(1), b = f.plane(2);
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = 0.299 * r[i] + 0.587 * gr[i] + 0.114 * b[i];
  return g;
}

/// Displacement field in pixels: dx is channel 0, dy channel 1.
struct FlowField {
  Tensor planes;

  FlowField() = default;
  FlowField(int h, int w) : planes(2, h, w) {}
  explicit FlowField(Tensor t) : planes(std::move(t)) {
    require(planes.channels == 2, "FlowField: expected 2 channels");
  }

  int height() const { return planes.height; }
  int width() const { return planes.width; }
  double& dx(int y, int x) { return planes.at(0, y, x); }
  double& dy(int y, int x) { return planes.at(1, y, x); }
  double dx(int y, int x) const { return planes.at(0, y, x); }
  double dy(int y, int x) const { return planes.at(1, y, x); }

  static FlowField constant(int h, int w, double vx, double vy) {
    FlowField f(h, w);
    std::fill_n(f.planes.data.begin(), f.planes.plane_size(), vx);
    std::fill(f.planes.data.begin() + static_cast<std::ptrdiff_t>(f.planes.plane_size()),
              f.planes.data.end(), vy);
    return f;
  }
};

}  // namespace aba
