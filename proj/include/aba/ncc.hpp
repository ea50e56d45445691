#pragma once

// Dense normalized cross-correlation of a single-plane template over a
// single-plane search image (valid positions only) and its gradient with
// respect to the search image.

#include <cmath>
#include <vector>

#include "aba/tensor.hpp"

namespace aba {

inline constexpr double kNccEps = 1e-8;

/// Zero-mean template plus its norm, prepared once per tracker.
struct NccTemplate {
  Tensor centered;  // T - mean(T)
  double norm = 0.0;

  explicit NccTemplate(const Tensor& t) : centered(t) {
    require(t.channels == 1, "NccTemplate: expects a single plane");
    double mean = 0.0;
    for (double v : t.data) mean += v;
    mean /= static_cast<double>(t.size());
    double ss = 0.0;
    for (double& v : centered.data) {
      v -= mean;
      ss += v * v;
    }
    norm = std::sqrt(ss);
  }
  int height() const { return centered.height; }
  int width() const { return centered.width; }
};

namespace detail {

struct WindowStats {
  double mean;
  double norm;  // ||X - mean(X)||
  double dot;   // sum (T - mean T) * X
};

inline WindowStats window_stats(const NccTemplate& t, const Tensor& img, int r, int c) {
  const int th = t.height(), tw = t.width();
  const double n = static_cast<double>(th) * tw;
  double s = 0.0, ss = 0.0, dot = 0.0;
  for (int y = 0; y < th; ++y) {
    const double* row = &img.data[static_cast<std::size_t>(r + y) * img.width + c];
    const double* trow = &t.centered.data[static_cast<std::size_t>(y) * tw];
    for (int x = 0; x < tw; ++x) {
      s += row[x];
      ss += row[x] * row[x];
      dot += trow[x] * row[x];
    }
  }
  const double mean = s / n;
  const double var_sum = std::max(0.0, ss - s * mean);
  return {mean, std::sqrt(var_sum), dot};
}

}  // namespace detail

/// Response map of size (H - th + 1) x (W - tw + 1); values in [-1, 1].
inline Tensor ncc_response(const NccTemplate& t, const Tensor& img) {
  require(img.channels == 1, "ncc_response: expects a single plane");
  require(img.height >= t.height() && img.width >= t.width(),
          "ncc_response: search image smaller than template");
  const int rh = img.height - t.height() + 1, rw = img.width - t.width() + 1;
  Tensor out(1, rh, rw);
  for (int r = 0; r < rh; ++r) {
    for (int c = 0; c < rw; ++c) {
      const auto st = detail::window_stats(t, img, r, c);
      out.at(0, r, c) = st.dot / (t.norm * st.norm + kNccEps);
    }
  }
  return out;
}

/// d(sum_rc grad_map[r,c] * ncc[r,c]) / d img.
inline Tensor ncc_response_backward(const NccTemplate& t, const Tensor& img, const Tensor& grad_map) {
  require(img.channels == 1, "ncc_response_backward: expects a single plane");
  const int th = t.height(), tw = t.width();
  const int rh = img.height - th + 1, rw = img.width - tw + 1;
  require(grad_map.channels == 1 && grad_map.height == rh && grad_map.width == rw,
          "ncc_response_backward: grad_map " + grad_map.shape_str() + " does not match response " +
              std::to_string(rh) + "x" + std::to_string(rw));
  Tensor g = zeros_like(img);
  for (int r = 0; r < rh; ++r) {
    for (int c = 0; c < rw; ++c) {
      const double gm = grad_map.at(0, r, c);
      if (gm == 0.0) continue;
      const auto st = detail::window_stats(t, img, r, c);
      const double D = t.norm * st.norm + kNccEps;
      const double a = gm / D;
      // Second term vanishes when the window is flat (norm == 0).
      const double b = st.norm > 0.0 ? gm * st.dot * t.norm / (st.norm * D * D) : 0.0;
      for (int y = 0; y < th; ++y) {
        double* grow = &g.data[static_cast<std::size_t>(r + y) * img.width + c];
        const double* row = &img.data[static_cast<std::size_t>(r + y) * img.width + c];
        const double* trow = &t.centered.data[static_cast<std::size_t>(y) * tw];
        for (int x = 0; x < tw; ++x) grow[x] += a * trow[x] - b * (row[x] - st.mean);
      }
    }
  }
  return g;
}

}  // namespace aba
