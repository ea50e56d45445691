#pragma once

// Procedural test sequences with exact ground truth, plus loading of
// sequences stored on disk as 000001.png... and groundtruth.txt.
//
// A scene is a value-noise background panned by a constant camera motion and
// a differently textured rectangle moving along a motion program. Pixels are
// area-sampled against the box, so sub-pixel motion stays consistent with the
// recorded flow. Flow for the pair (t-1, t) lives on frame t-1's grid: pixels
// whose centre lies in the object at t-1 carry the object's displacement,
// every other pixel carries the camera displacement.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "aba/error.hpp"
#include "aba/image_io.hpp"
#include "aba/tensor.hpp"
#include "aba/tracker.hpp"

namespace aba {

struct Sequence {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<Frame> frames;
  std::vector<BBox> gt_boxes;
  std::vector<FlowField> gt_flow;  // empty, or frames.size() - 1 entries

  int size() const { return static_cast<int>(frames.size()); }

  void validate() const {
    require(frames.size() >= 10, "Sequence " + name + ": needs at least 10 frames");
    require(gt_boxes.size() == frames.size(), "Sequence " + name + ": one gt box per frame required");
    require(gt_flow.empty() || gt_flow.size() + 1 == frames.size(),
            "Sequence " + name + ": gt_flow must have frames - 1 entries");
    for (std::size_t i = 0; i < frames.size(); ++i) {
      const BBox& b = gt_boxes[i];
      require(b.left() >= -0.5 && b.top() >= -0.5 && b.left() + b.w <= frames[i].width + 0.5 &&
                  b.top() + b.h <= frames[i].height + 0.5,
              "Sequence " + name + ": gt box of frame " + std::to_string(i + 1) + " leaves the frame");
    }
  }
};

/// Flow of the pair (frame_index - 1, frame_index), frame_index 0-based.
inline const FlowField& ground_truth_flow(const Sequence& s, int frame_index) {
  if (frame_index <= 0 || frame_index >= s.size()) throw Unavailable("no flow for frame " + std::to_string(frame_index));
  if (s.gt_flow.empty()) throw Unavailable("sequence " + s.name + " has no ground-truth flow");
  return s.gt_flow[frame_index - 1];
}

enum class MotionKind { Linear, Sinusoidal, RandomWalk };

inline std::string to_string(MotionKind k) {
  switch (k) {
    case MotionKind::Linear: return "linear";
    case MotionKind::Sinusoidal: return "sinusoidal";
    default: return "random-walk";
  }
}

inline MotionKind parse_motion_kind(const std::string& s) {
  if (s == "linear") return MotionKind::Linear;
  if (s == "sinusoidal") return MotionKind::Sinusoidal;
  if (s == "random-walk") return MotionKind::RandomWalk;
  throw InvalidArgument("unknown motion program '" + s + "' (expected linear|sinusoidal|random-walk)");
}

struct MotionProgram {
  MotionKind kind = MotionKind::Linear;
  double vx = 2.0;  // linear: per-frame step
  double vy = 0.0;
  double amp_x = 20.0;  // sinusoidal: amplitude and period in frames
  double amp_y = 10.0;
  double period = 40.0;
  double max_step = 3.0;  // random walk: per-frame step bound
  int segment = 8;        // random walk: frames per constant-velocity segment
};

inline constexpr double kMaxStep = 4.0;

struct SceneConfig {
  int height = 128;
  int width = 128;
  int channels = 1;
  double object_w = 20.0;
  double object_h = 20.0;
  int n_frames = 40;
  MotionProgram motion;
  double camera_vx = 0.0;
  double camera_vy = 0.0;
  int background_octaves = 4;
  double background_scale = 24.0;  // coarsest noise cell in px
  double object_scale = 5.0;

  void validate() const {
    require(height >= 16 && width >= 16, "SceneConfig: frame must be at least 16x16");
    require(channels == 1 || channels == 3, "SceneConfig: channels must be 1 or 3");
    require(object_w >= 4 && object_h >= 4, "SceneConfig: object must be at least 4x4");
    require(object_w < width && object_h < height, "SceneConfig: object larger than the frame");
    require(n_frames >= 10, "SceneConfig: n_frames must be >= 10");
    require(std::hypot(camera_vx, camera_vy) <= kMaxStep, "SceneConfig: camera step exceeds 4 px");
    require(background_octaves >= 1 && background_scale >= 2 && object_scale >= 1,
            "SceneConfig: bad noise parameters");
    require(motion.period > 0 && motion.segment >= 1 && motion.max_step >= 0 && motion.max_step <= kMaxStep,
            "SceneConfig: bad motion program");
  }
};

namespace detail {

/// Lattice value noise on an integer grid, smoothly interpolated, hashed from a seed.
class ValueNoise {
 public:
  explicit ValueNoise(std::uint64_t seed) : seed_(seed) {}

  double operator()(double x, double y) const {
    const double fx = std::floor(x), fy = std::floor(y);
    const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
    const double tx = smooth(x - fx), ty = smooth(y - fy);
    const double a = lattice(ix, iy), b = lattice(ix + 1, iy);
    const double c = lattice(ix, iy + 1), d = lattice(ix + 1, iy + 1);
    return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
  }

  /// Octave sum normalised to [0,1].
  double fractal(double x, double y, double scale, int octaves) const {
    double sum = 0.0, amp = 1.0, norm = 0.0, f = 1.0 / scale;
    for (int o = 0; o < octaves; ++o) {
      sum += amp * (*this)(x * f + 17.0 * o, y * f - 31.0 * o);
      norm += amp;
      amp *= 0.5;
      f *= 2.0;
    }
    return sum / norm;
  }

 private:
  static double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

  double lattice(std::int64_t x, std::int64_t y) const {
    std::uint64_t h = seed_ ^ (static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ULL) ^
                      (static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4FULL);
    h ^= h >> 33;
    h *= 0xFF51AFD7ED558CCDULL;
    h ^= h >> 33;
    h *= 0xC4CEB9FE1A85EC53ULL;
    h ^= h >> 33;
    return static_cast<double>(h >> 11) / static_cast<double>(1ULL << 53);
  }

  std::uint64_t seed_;
};

/// Object top-left positions for every frame.
inline std::vector<std::pair<double, double>> object_path(const SceneConfig& cfg, std::mt19937_64& rng) {
  const MotionProgram& m = cfg.motion;
  std::vector<std::pair<double, double>> pos;
  double x0 = 0.0, y0 = 0.0;
  const double pi = 3.14159265358979323846;
  if (m.kind == MotionKind::Linear) {
    require(std::hypot(m.vx, m.vy) <= kMaxStep, "generate_scene: linear step exceeds 4 px");
    // Centre the trajectory in the frame.
    x0 = (cfg.width - cfg.object_w) / 2.0 - m.vx * (cfg.n_frames - 1) / 2.0;
    y0 = (cfg.height - cfg.object_h) / 2.0 - m.vy * (cfg.n_frames - 1) / 2.0;
    for (int t = 0; t < cfg.n_frames; ++t) pos.emplace_back(x0 + m.vx * t, y0 + m.vy * t);
  } else if (m.kind == MotionKind::Sinusoidal) {
    require(2 * pi * std::hypot(m.amp_x, m.amp_y) / m.period <= kMaxStep,
            "generate_scene: sinusoidal program exceeds 4 px per frame");
    x0 = (cfg.width - cfg.object_w) / 2.0;
    y0 = (cfg.height - cfg.object_h) / 2.0;
    for (int t = 0; t < cfg.n_frames; ++t) {
      const double ph = 2 * pi * t / m.period;
      pos.emplace_back(x0 + m.amp_x * std::sin(ph), y0 + m.amp_y * std::sin(2 * ph));
    }
  } else {
    // Piecewise-constant velocity, reflected off a margin so the walk stays inside.
    std::uniform_real_distribution<double> ang(0.0, 2 * pi), mag(0.5 * m.max_step, m.max_step);
    double x = (cfg.width - cfg.object_w) / 2.0, y = (cfg.height - cfg.object_h) / 2.0;
    double vx = 0, vy = 0;
    const double lo = 4.0, hx = cfg.width - cfg.object_w - 4.0, hy = cfg.height - cfg.object_h - 4.0;
    for (int t = 0; t < cfg.n_frames; ++t) {
      if (t % m.segment == 0) {
        const double a = ang(rng), r = mag(rng);
        vx = r * std::cos(a);
        vy = r * std::sin(a);
      }
      pos.emplace_back(x, y);
      if ((x + vx < lo && vx < 0) || (x + vx > hx && vx > 0)) vx = -vx;
      if ((y + vy < lo && vy < 0) || (y + vy > hy && vy > 0)) vy = -vy;
      x += vx;
      y += vy;
    }
  }
  for (const auto& [x, y] : pos)
    if (x < 0 || y < 0 || x + cfg.object_w > cfg.width || y + cfg.object_h > cfg.height)
      throw InvalidArgument("generate_scene: object leaves the frame under this motion program");
  return pos;
}

inline double overlap_1d(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

}  // namespace detail

inline Sequence generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const auto path = detail::object_path(cfg, rng);
  const detail::ValueNoise bg_noise(seed * 2 + 1), obj_noise(seed * 2 + 2);
  // Per-channel tints so colour scenes are not grey.
  std::uniform_real_distribution<double> tint(0.7, 1.0);
  std::vector<double> bg_tint(cfg.channels), obj_tint(cfg.channels);
  for (int c = 0; c < cfg.channels; ++c) {
    bg_tint[c] = cfg.channels == 1 ? 1.0 : tint(rng);
    obj_tint[c] = cfg.channels == 1 ? 1.0 : tint(rng);
  }

  Sequence s;
  s.seed = seed;
  s.name = "scene-" + std::to_string(seed);
  for (int t = 0; t < cfg.n_frames; ++t) {
    const double ox = path[t].first, oy = path[t].second;
    const double cam_x = cfg.camera_vx * t, cam_y = cfg.camera_vy * t;
    Frame f(cfg.channels, cfg.height, cfg.width);
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        // Background: mid-contrast band so the object stands out.
        const double bg = 0.15 + 0.5 * bg_noise.fractal(px - cam_x, py - cam_y, cfg.background_scale,
                                                        cfg.background_octaves);
        const double cov = detail::overlap_1d(x, x + 1.0, ox, ox + cfg.object_w) *
                           detail::overlap_1d(y, y + 1.0, oy, oy + cfg.object_h);
        double ob = 0.0;
        if (cov > 0.0) {
          const double lx = std::clamp(px - ox, 0.0, cfg.object_w), ly = std::clamp(py - oy, 0.0, cfg.object_h);
          ob = 0.1 + 0.85 * obj_noise.fractal(lx, ly, cfg.object_scale, 2);
        }
        for (int c = 0; c < cfg.channels; ++c)
          f.at(c, y, x) = std::clamp((1.0 - cov) * bg * bg_tint[c] + cov * ob * obj_tint[c], 0.0, 1.0);
      }
    s.frames.push_back(std::move(f));
    s.gt_boxes.push_back(BBox::from_top_left(ox, oy, cfg.object_w, cfg.object_h));
    if (t > 0) {
      const double px0 = path[t - 1].first, py0 = path[t - 1].second;
      const double mx = ox - px0, my = oy - py0;
      FlowField fl = FlowField::constant(cfg.height, cfg.width, cfg.camera_vx, cfg.camera_vy);
      for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
          const double px = x + 0.5, py = y + 0.5;
          if (px >= px0 && px < px0 + cfg.object_w && py >= py0 && py < py0 + cfg.object_h) {
            fl.planes.at(0, y, x) = mx;
            fl.planes.at(1, y, x) = my;
          }
        }
      s.gt_flow.push_back(std::move(fl));
    }
  }
  s.validate();
  return s;
}

/// Parses one "x,y,w,h" line (top-left convention); whitespace around fields is ignored.
inline std::optional<BBox> parse_box_line(const std::string& line) {
  std::string norm = line;
  for (char& ch : norm)
    if (ch == ',' || ch == '\t' || ch == '\r') ch = ' ';
  std::istringstream is(norm);
  double v[4];
  for (double& x : v)
    if (!(is >> x)) return std::nullopt;
  std::string rest;
  if (is >> rest) return std::nullopt;
  if (!(v[2] > 0 && v[3] > 0)) return std::nullopt;
  return BBox::from_top_left(v[0], v[1], v[2], v[3]);
}

inline std::string frame_file_name(int index_1based) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06d.png", index_1based);
  return buf;
}

inline Sequence load_sequence(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw LoadError(dir.string() + ": not a directory");
  const fs::path gt_path = dir / "groundtruth.txt";
  std::ifstream gt(gt_path);
  if (!gt) throw LoadError(gt_path.string() + ": missing");
  Sequence s;
  s.name = dir.filename().string();
  if (s.name.empty()) s.name = dir.parent_path().filename().string();
  std::string line;
  int lineno = 0;
  while (std::getline(gt, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto b = parse_box_line(line);
    if (!b) throw LoadError(gt_path.string() + ":" + std::to_string(lineno) + ": cannot parse box '" + line + "'");
    s.gt_boxes.push_back(*b);
  }
  for (int i = 1;; ++i) {
    const fs::path p = dir / frame_file_name(i);
    if (!fs::exists(p)) break;
    s.frames.push_back(io::read_image(p));
  }
  if (s.frames.empty()) throw LoadError(dir.string() + ": no frames (expected 000001.png...)");
  if (s.frames.size() != s.gt_boxes.size())
    throw LoadError(gt_path.string() + ": " + std::to_string(s.gt_boxes.size()) + " boxes for " +
                    std::to_string(s.frames.size()) + " frames");
  for (const auto& f : s.frames)
    if (!f.same_shape(s.frames.front())) throw LoadError(dir.string() + ": frames differ in size");
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw LoadError(dir.string() + ": " + e.what());
  }
  return s;
}

inline void save_sequence(const std::filesystem::path& dir, const Sequence& s) {
  std::filesystem::create_directories(dir);
  std::ofstream gt(dir / "groundtruth.txt");
  if (!gt) throw LoadError((dir / "groundtruth.txt").string() + ": cannot write");
  char buf[128];
  for (int i = 0; i < s.size(); ++i) {
    io::write_image(dir / frame_file_name(i + 1), s.frames[i]);
    const BBox& b = s.gt_boxes[i];
    std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.4f,%.4f\n", b.left(), b.top(), b.w, b.h);
    gt << buf;
  }
}

/// The frozen benchmark suite: scene i uses seed `seeds[i]` and a motion
/// program chosen by i so the suite mixes all three programs and camera pans.
struct SuiteEntry {
  std::uint64_t seed;
  SceneConfig config;
};

inline SceneConfig suite_scene_config(int index, std::uint64_t seed) {
  SceneConfig c;
  c.n_frames = 40;
  c.object_w = c.object_h = 24.0;
  std::mt19937_64 rng(seed ^ 0x5DEECE66DULL);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double pi = 3.14159265358979323846;
  switch (index % 3) {
    case 0: {
      const double a = pi * u(rng);
      c.motion.kind = MotionKind::Linear;
      c.motion.vx = 1.5 * std::cos(a);
      c.motion.vy = 1.5 * std::sin(a);
      break;
    }
    case 1:
      c.motion.kind = MotionKind::Sinusoidal;
      c.motion.amp_x = 14.0 + 4.0 * u(rng);
      c.motion.amp_y = 6.0 + 2.0 * u(rng);
      c.motion.period = 48.0;
      break;
    default:
      c.motion.kind = MotionKind::RandomWalk;
      c.motion.max_step = 2.0;
      break;
  }
  if (index % 2 == 1) {
    c.camera_vx = 0.8 * u(rng);
    c.camera_vy = 0.6 * u(rng);
  }
  return c;
}

}  // namespace aba
