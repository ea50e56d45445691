#pragma once

// Summary table and curve plots from a bench results directory.
//
// Inputs: metrics.csv (per sequence and "mean" rows) and frames.csv (per-frame
// CLE and IoU). Outputs: summary.txt, success.png, precision.png. Plots are
// drawn by a small rasterizer (axes, grid, polylines); the colour legend is
// printed in summary.txt.

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "aba/bench.hpp"
#include "aba/error.hpp"
#include "aba/image_io.hpp"

namespace aba {

struct Rgb {
  double r, g, b;
};

class Canvas {
 public:
  Canvas(int w, int h) : img_(3, h, w, 1.0) {}

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= img_.width || y >= img_.height) return;
    img_.at(0, y, x) = c.r;
    img_.at(1, y, x) = c.g;
    img_.at(2, y, x) = c.b;
  }

  /// Bresenham line, `thick` pixels wide.
  void line(int x0, int y0, int x1, int y1, Rgb c, int thick = 1) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    for (;;) {
      for (int oy = 0; oy < thick; ++oy)
        for (int ox = 0; ox < thick; ++ox) set(x0 + ox - thick / 2, y0 + oy - thick / 2, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void fill(int x0, int y0, int x1, int y1, Rgb c) {
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) set(x, y, c);
  }

  const Frame& image() const { return img_; }

 private:
  Frame img_;
};

struct Series {
  std::string label;
  std::vector<double> y;  // evenly spaced over [x_min, x_max]
};

inline const std::array<Rgb, 6>& palette() {
  static const std::array<Rgb, 6> p{{{0.0, 0.0, 0.0},
                                     {0.12, 0.47, 0.71},
                                     {1.0, 0.5, 0.05},
                                     {0.17, 0.63, 0.17},
                                     {0.84, 0.15, 0.16},
                                     {0.58, 0.4, 0.74}}};
  return p;
}

/// Line plot with y in [0,1], 10 grid divisions per axis; a colour swatch per series on the right.
inline Frame plot_curves(const std::vector<Series>& series, int w = 480, int h = 360) {
  Canvas cv(w, h);
  const int l = 40, r = w - 70, t = 20, b = h - 30;
  const Rgb grid{0.88, 0.88, 0.88}, axis{0, 0, 0};
  for (int k = 0; k <= 10; ++k) {
    const int x = l + (r - l) * k / 10, y = b - (b - t) * k / 10;
    cv.line(x, t, x, b, grid);
    cv.line(l, y, r, y, grid);
    cv.line(x, b, x, b + 4, axis);
    cv.line(l - 4, y, l, y, axis);
  }
  cv.line(l, b, r, b, axis, 2);
  cv.line(l, t, l, b, axis, 2);
  for (std::size_t s = 0; s < series.size(); ++s) {
    const Rgb c = palette()[s % palette().size()];
    const auto& y = series[s].y;
    auto px = [&](std::size_t i) { return l + static_cast<int>(std::lround((r - l) * double(i) / (y.size() - 1))); };
    auto py = [&](double v) { return b - static_cast<int>(std::lround((b - t) * std::clamp(v, 0.0, 1.0))); };
    for (std::size_t i = 1; i < y.size(); ++i) cv.line(px(i - 1), py(y[i - 1]), px(i), py(y[i]), c, 2);
    cv.fill(r + 15, t + 20 * static_cast<int>(s), r + 35, t + 20 * static_cast<int>(s) + 12, c);
  }
  return cv.image();
}

// Results files ----------------------------------------------------------------

struct MetricsRow {
  std::string sequence, attack;
  double precision20, success_auc, prec_drop, succ_drop;
};

struct FrameRow {
  std::string sequence, attack;
  double cle, iou;
};

namespace detail {
inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p, std::size_t min_cols) {
  std::ifstream in(p);
  if (!in) throw LoadError(p.string() + ": missing");
  std::vector<std::vector<std::string>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    if (lineno++ == 0 || line.empty()) continue;
    std::vector<std::string> cols;
    std::string c;
    std::istringstream is(line);
    while (std::getline(is, c, ',')) cols.push_back(c);
    if (cols.size() < min_cols) throw LoadError(p.string() + ":" + std::to_string(lineno) + ": too few columns");
    rows.push_back(std::move(cols));
  }
  return rows;
}
}  // namespace detail

inline std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& p) {
  std::vector<MetricsRow> out;
  for (const auto& c : detail::read_csv(p, 6))
    out.push_back({c[0], c[1], std::stod(c[2]), std::stod(c[3]), std::stod(c[4]), std::stod(c[5])});
  return out;
}

inline std::vector<FrameRow> read_frames_csv(const std::filesystem::path& p) {
  std::vector<FrameRow> out;
  for (const auto& c : detail::read_csv(p, 5)) out.push_back({c[0], c[1], std::stod(c[3]), std::stod(c[4])});
  return out;
}

/// Table row labels in display order, keyed by attack name.
inline const std::vector<std::pair<std::string, std::string>>& table_rows() {
  static const std::vector<std::pair<std::string, std::string>> rows{
      {"none", "Original"},         {"norm-blur", "Norm-Blur"}, {"op-aba-wo-A", "OP-ABA w/o A"},
      {"op-aba-wo-W", "OP-ABA w/o W"}, {"op-aba", "OP-ABA"},       {"os-aba", "OS-ABA"}};
  return rows;
}

inline std::string summary_table(const std::vector<MetricsRow>& metrics) {
  std::string s;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-14s %8s %10s %8s %10s\n", "attack", "success", "succ_drop", "prec20",
                "prec_drop");
  s += buf;
  for (const auto& [key, label] : table_rows()) {
    const MetricsRow* m = nullptr;
    for (const auto& r : metrics)
      if (r.sequence == "mean" && r.attack == key) m = &r;
    if (m)
      std::snprintf(buf, sizeof buf, "%-14s %8.3f %10.3f %8.3f %10.3f\n", label.c_str(), m->success_auc, m->succ_drop,
                    m->precision20, m->prec_drop);
    else
      std::snprintf(buf, sizeof buf, "%-14s %8s %10s %8s %10s\n", label.c_str(), "-", "-", "-", "-");
    s += buf;
  }
  return s;
}

/// Mean-over-sequences success (101 IoU thresholds) and precision (0..50 px) curves per attack.
inline std::pair<std::vector<Series>, std::vector<Series>> curves(const std::vector<FrameRow>& frames) {
  std::vector<Series> succ, prec;
  for (const auto& [key, label] : table_rows()) {
    std::map<std::string, std::vector<const FrameRow*>> by_seq;
    for (const auto& f : frames)
      if (f.attack == key) by_seq[f.sequence].push_back(&f);
    if (by_seq.empty()) continue;
    Series s{label, std::vector<double>(kSuccessThresholds, 0.0)}, p{label, std::vector<double>(51, 0.0)};
    for (const auto& [name, rows] : by_seq) {
      for (int k = 0; k < kSuccessThresholds; ++k) {
        std::size_t n = 0;
        for (const auto* r : rows) n += overlap_passes(r->iou, k);
        s.y[k] += static_cast<double>(n) / rows.size() / by_seq.size();
      }
      for (int th = 0; th <= 50; ++th) {
        std::size_t n = 0;
        for (const auto* r : rows) n += r->cle <= th;
        p.y[th] += static_cast<double>(n) / rows.size() / by_seq.size();
      }
    }
    succ.push_back(std::move(s));
    prec.push_back(std::move(p));
  }
  return {succ, prec};
}

/// Writes summary.txt, success.png and precision.png into `dir`.
inline std::string emit_report(const std::filesystem::path& dir) {
  const auto metrics = read_metrics_csv(dir / "metrics.csv");
  const auto frames = read_frames_csv(dir / "frames.csv");
  if (metrics.empty()) throw LoadError((dir / "metrics.csv").string() + ": no rows");
  std::string text = summary_table(metrics);
  auto [succ, prec] = curves(frames);
  text += "\nplot colours:";
  static const char* names[] = {"black", "blue", "orange", "green", "red", "purple"};
  for (std::size_t i = 0; i < succ.size(); ++i) text += std::string(i ? "," : "") + " " + succ[i].label + "=" + names[i % 6];
  text += "\n";
  std::ofstream(dir / "summary.txt") << text;
  io::write_png(dir / "success.png", plot_curves(succ));
  io::write_png(dir / "precision.png", plot_curves(prec));
  return text;
}

}  // namespace aba
