#pragma once

// Differentiable template tracker: dense NCC of a fixed first-frame template
// over a square search region, argmax localisation, fixed box size.
//
// Coordinates are continuous with pixel k covering [k, k+1); a box centre is
// left + w/2. Response cell (r, c) is the template window whose top-left is
// region pixel (c, r); its centre maps to frame coordinates
// (x0 + c + tw/2, y0 + r + th/2) where (x0, y0) is the region's frame offset.

#include <cmath>
#include <memory>
#include <string>

#include "aba/kernels.hpp"
#include "aba/ncc.hpp"
#include "aba/tape.hpp"
#include "aba/tensor.hpp"

namespace aba {

struct BBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double left() const { return cx - w / 2; }
  double top() const { return cy - h / 2; }
  static BBox from_top_left(double x, double y, double w, double h) { return {x + w / 2, y + h / 2, w, h}; }
};

inline double iou(const BBox& a, const BBox& b) {
  const double ix = std::max(0.0, std::min(a.left() + a.w, b.left() + b.w) - std::max(a.left(), b.left()));
  const double iy = std::max(0.0, std::min(a.top() + a.h, b.top() + b.h) - std::max(a.top(), b.top()));
  const double inter = ix * iy;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double center_error(const BBox& a, const BBox& b) { return std::hypot(a.cx - b.cx, a.cy - b.cy); }

enum class FeatureKind { Intensity, GradientMagnitude };

inline std::string to_string(FeatureKind k) {
  return k == FeatureKind::Intensity ? "intensity" : "gradient";
}

inline FeatureKind parse_feature_kind(const std::string& s) {
  if (s == "intensity") return FeatureKind::Intensity;
  if (s == "gradient" || s == "gradient-magnitude") return FeatureKind::GradientMagnitude;
  throw InvalidArgument("unknown tracker feature '" + s + "' (expected intensity|gradient)");
}

/// Feature plane the correlation runs on.
inline Tensor extract_features(const Frame& f, FeatureKind kind) {
  Tensor g = kernels::luma(f);
  return kind == FeatureKind::Intensity ? g : kernels::gradient_magnitude(g);
}

inline Var extract_features(Var f, FeatureKind kind) {
  Var g = ad::luma(f);
  return kind == FeatureKind::Intensity ? g : ad::gradient_magnitude(g);
}

/// Immutable after init.
struct TrackerModel {
  std::shared_ptr<const NccTemplate> tmpl;
  FeatureKind feature_kind = FeatureKind::Intensity;
  int template_w = 0;
  int template_h = 0;
  double bbox_w = 0.0;  // box size reported by locate()
  double bbox_h = 0.0;
};

/// Integer-aligned frame offset of a search region.
struct RegionTransform {
  int x0 = 0;
  int y0 = 0;
  double to_frame_x(double rx) const { return x0 + rx; }
  double to_frame_y(double ry) const { return y0 + ry; }
  double to_region_x(double fx) const { return fx - x0; }
  double to_region_y(double fy) const { return fy - y0; }
};

struct SearchRegion {
  Frame pixels;
  RegionTransform transform;
};

struct ResponseMap {
  Tensor values;  // 1 x rows x cols
  /// Frame coordinates of the centre of cell (0, 0); cells are 1 px apart.
  double origin_x = 0.0;
  double origin_y = 0.0;

  int rows() const { return values.height; }
  int cols() const { return values.width; }
  double frame_x(int col) const { return origin_x + col; }
  double frame_y(int row) const { return origin_y + row; }
};

/// Copies a window with replicated borders where it leaves the frame.
inline Frame crop_replicate(const Frame& f, int x0, int y0, int w, int h) {
  Frame out(f.channels, h, w);
  for (int c = 0; c < f.channels; ++c)
    for (int y = 0; y < h; ++y) {
      const int sy = std::clamp(y0 + y, 0, f.height - 1);
      for (int x = 0; x < w; ++x) out.at(c, y, x) = f.at(c, sy, std::clamp(x0 + x, 0, f.width - 1));
    }
  return out;
}

inline TrackerModel init(const Frame& frame, const BBox& bbox, FeatureKind kind = FeatureKind::Intensity) {
  require(bbox.w > 0 && bbox.h > 0, "tracker init: box must have positive size");
  require(bbox.w * bbox.h >= 16.0, "tracker init: box area below 16 px^2");
  require(bbox.left() >= -0.5 && bbox.top() >= -0.5 && bbox.left() + bbox.w <= frame.width + 0.5 &&
              bbox.top() + bbox.h <= frame.height + 0.5,
          "tracker init: box lies outside the frame");
  TrackerModel m;
  m.feature_kind = kind;
  m.template_w = static_cast<int>(std::lround(bbox.w));
  m.template_h = static_cast<int>(std::lround(bbox.h));
  m.bbox_w = bbox.w;
  m.bbox_h = bbox.h;
  const int x0 = static_cast<int>(std::lround(bbox.left()));
  const int y0 = static_cast<int>(std::lround(bbox.top()));
  const Tensor feat = extract_features(frame, kind);
  auto t = std::make_shared<NccTemplate>(crop_replicate(feat, x0, y0, m.template_w, m.template_h));
  if (t->norm * t->norm / static_cast<double>(t->centered.size()) <= 1e-8)
    throw DegenerateTemplate("tracker init: template has no variance");
  m.tmpl = std::move(t);
  return m;
}

inline int search_side(const BBox& b, double context) {
  return static_cast<int>(std::lround(context * std::max(b.w, b.h)));
}

inline SearchRegion crop_search_region(const Frame& frame, const BBox& prev_bbox, double context = 2.5) {
  require(context >= 1.5, "crop_search_region: context must be >= 1.5");
  const int side = search_side(prev_bbox, context);
  const int x0 = static_cast<int>(std::lround(prev_bbox.cx - side / 2.0));
  const int y0 = static_cast<int>(std::lround(prev_bbox.cy - side / 2.0));
  return {crop_replicate(frame, x0, y0, side, side), {x0, y0}};
}

inline ResponseMap make_response(const TrackerModel& m, const RegionTransform& tr, Tensor values) {
  return {std::move(values), tr.x0 + m.template_w / 2.0, tr.y0 + m.template_h / 2.0};
}

inline ResponseMap respond(const TrackerModel& m, const Frame& region, const RegionTransform& tr = {}) {
  require(region.height >= m.template_h && region.width >= m.template_w,
          "respond: region " + region.shape_str() + " smaller than template");
  return make_response(m, tr, ncc_response(*m.tmpl, extract_features(region, m.feature_kind)));
}

inline ResponseMap respond(const TrackerModel& m, const SearchRegion& r) { return respond(m, r.pixels, r.transform); }

/// Taped response values for a region held in a Var.
inline Var respond_taped(const TrackerModel& m, Var region) {
  return ad::ncc(extract_features(region, m.feature_kind), m.tmpl);
}

/// Gradient of sum(grad_map * response) with respect to the region pixels.
inline Tensor respond_backward(const TrackerModel& m, const Frame& region, const Tensor& grad_map) {
  Tape tape;
  Var in = tape.leaf(region);
  Var resp = respond_taped(m, in);
  require(grad_map.same_shape(resp.value()),
          "respond_backward: grad_map " + grad_map.shape_str() + " vs response " + resp.value().shape_str());
  Var loss = ad::reduce_sum(ad::mul(resp, tape.constant(grad_map)));
  tape.backward(loss);
  return tape.grad(in);
}

/// Row-major first maximum.
inline std::pair<int, int> argmax(const Tensor& values) {
  require(!values.empty(), "argmax: empty map");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.plane_size(); ++i)
    if (values.data[i] > values.data[best]) best = i;
  return {static_cast<int>(best / values.width), static_cast<int>(best % values.width)};
}

/// Argmax mapped to frame coordinates; the centre is clamped into the frame when dims are given.
inline BBox locate(const ResponseMap& map, const TrackerModel& m, int frame_h = 0, int frame_w = 0) {
  const auto [r, c] = argmax(map.values);
  BBox b{map.frame_x(c), map.frame_y(r), m.bbox_w, m.bbox_h};
  if (frame_w > 0) b.cx = std::clamp(b.cx, 0.0, static_cast<double>(frame_w));
  if (frame_h > 0) b.cy = std::clamp(b.cy, 0.0, static_cast<double>(frame_h));
  return b;
}

}  // namespace aba
