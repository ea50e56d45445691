#pragma once

// Flow-guided motion blur synthesis.
//
// Between I_{t-1} (prev) and I_t (cur) the flow U is split into N-1
// sub-motions with per-pixel ratios W^1..W^{N-1}. Instant i (1-based) sits at
// cumulative flow C_i = (sum_{j<i} W^j) U from prev and remaining flow
// R_i = (sum_{j>=i} W^j) U to cur:
//
//   I^i = 1/2 warp(prev, -C_i) + 1/2 warp(cur, +R_i)
//   blurred = sum_i A^i (.) I^i
//
// With sum_j W^j = 1 this gives I^1 = prev and I^N ~= cur. The accumulation
// weights A^i are single planes shared by every colour channel.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "aba/image_io.hpp"
#include "aba/kernels.hpp"
#include "aba/tape.hpp"
#include "aba/tensor.hpp"
#include "aba/warp.hpp"

namespace aba {

inline constexpr double kSimplexTolerance = 1e-5;

/// N-1 planes, each element in [0,1], per-pixel sum 1.
struct MotionRatios {
  Tensor planes;
  int count() const { return planes.channels; }
};

/// N planes, each element in [0,1], per-pixel sum 1.
struct AccumWeights {
  Tensor planes;
  int count() const { return planes.channels; }
};

struct BlurParams {
  int n_instants = 17;
  MotionRatios ratios;
  AccumWeights accum;

  int height() const { return accum.planes.height; }
  int width() const { return accum.planes.width; }
};

struct BlurOptions {
  /// Use the literal sum_j W^j (.) U^j = sum_j (W^j)^2 U cumulative flow
  /// instead of sum_j W^j U. Off by default; kept for comparison runs.
  bool literal_squared_ratios = false;
};

/// Largest per-pixel deviation of a plane stack from the probability simplex
/// (range violation or |sum - 1|).
inline double simplex_violation(const Tensor& planes) {
  const std::size_t P = planes.plane_size();
  double worst = 0.0;
  for (std::size_t p = 0; p < P; ++p) {
    double s = 0.0;
    for (int c = 0; c < planes.channels; ++c) {
      const double v = planes.data[c * P + p];
      if (!std::isfinite(v)) return INFINITY;
      worst = std::max({worst, -v, v - 1.0});
      s += v;
    }
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

inline bool satisfies_constraints(const BlurParams& bp, double tol = kSimplexTolerance) {
  return simplex_violation(bp.ratios.planes) <= tol && simplex_violation(bp.accum.planes) <= tol;
}

inline void validate_shapes(const BlurParams& bp) {
  require(bp.n_instants >= 2, "BlurParams: need at least 2 instants");
  require(bp.ratios.count() == bp.n_instants - 1, "BlurParams: expected " + std::to_string(bp.n_instants - 1) +
                                                      " ratio planes, got " + std::to_string(bp.ratios.count()));
  require(bp.accum.count() == bp.n_instants, "BlurParams: expected " + std::to_string(bp.n_instants) +
                                                 " accumulation planes, got " + std::to_string(bp.accum.count()));
  require(bp.ratios.planes.same_spatial(bp.accum.planes), "BlurParams: ratio/accum sizes differ");
}

/// W = 1/(n-1), A = 1/n everywhere (the plain-exposure blur).
inline BlurParams uniform_params(int n, int height, int width) {
  require(n >= 2, "uniform_params: n must be >= 2, got " + std::to_string(n));
  BlurParams bp;
  bp.n_instants = n;
  bp.ratios.planes = Tensor(n - 1, height, width, 1.0 / (n - 1));
  bp.accum.planes = Tensor(n, height, width, 1.0 / n);
  return bp;
}

/// Clip to [0,1] then divide by the per-pixel sum; a pixel whose clipped sum
/// is below 1e-8 is reset to uniform weights.
inline Tensor project_simplex_l1(Tensor planes) {
  const std::size_t P = planes.plane_size();
  const int K = planes.channels;
  for (std::size_t p = 0; p < P; ++p) {
    double s = 0.0;
    for (int c = 0; c < K; ++c) {
      double& v = planes.data[c * P + p];
      v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
      s += v;
    }
    for (int c = 0; c < K; ++c) {
      double& v = planes.data[c * P + p];
      v = s < 1e-8 ? 1.0 / K : v / s;
    }
  }
  return planes;
}

inline BlurParams project_constraints(BlurParams bp) {
  bp.ratios.planes = project_simplex_l1(std::move(bp.ratios.planes));
  bp.accum.planes = project_simplex_l1(std::move(bp.accum.planes));
  return bp;
}

/// Per-instant cumulative (from prev) and remaining (to cur) flows, i = 1..N.
struct SubMotionFlows {
  std::vector<FlowField> cumulative;
  std::vector<FlowField> remaining;
};

namespace detail {

inline Tensor ratio_source(const MotionRatios& r, const BlurOptions& opt) {
  if (!opt.literal_squared_ratios) return r.planes;
  Tensor sq = r.planes;
  for (double& v : sq.data) v *= v;
  return sq;
}

inline void check_blur_inputs(const Frame& prev, const Frame& cur, const FlowField& flow, const Tensor& ratios) {
  require(prev.same_shape(cur), "blur: prev " + prev.shape_str() + " and cur " + cur.shape_str() + " differ");
  require(prev.same_spatial(flow.planes), "blur: flow size differs from frames");
  require(ratios.same_spatial(prev), "blur: ratio planes differ in size from frames");
}

}  // namespace detail

inline SubMotionFlows cumulative_flows(const FlowField& flow, const MotionRatios& ratios,
                                       const BlurOptions& opt = {}) {
  require(flow.planes.same_spatial(ratios.planes), "cumulative_flows: flow and ratios differ in size");
  const Tensor src = detail::ratio_source(ratios, opt);
  const Tensor cw = kernels::outer_planes(kernels::prefix_sums(src), flow.planes);
  const Tensor rw = kernels::outer_planes(kernels::suffix_sums(src), flow.planes);
  SubMotionFlows out;
  for (int i = 0; i <= ratios.count(); ++i) {
    out.cumulative.emplace_back(channel_slice(cw, 2 * i, 2));
    out.remaining.emplace_back(channel_slice(rw, 2 * i, 2));
  }
  return out;
}

/// All N instants stacked: instant i occupies channels [i*C, (i+1)*C).
inline Tensor instant_stack(const Frame& prev, const Frame& cur, const FlowField& flow, const MotionRatios& ratios,
                            const BlurOptions& opt = {}) {
  detail::check_blur_inputs(prev, cur, flow, ratios.planes);
  const Tensor src = detail::ratio_source(ratios, opt);
  const Tensor to_prev = kernels::outer_planes(kernels::prefix_sums(src), flow.planes, -1.0);
  const Tensor to_cur = kernels::outer_planes(kernels::suffix_sums(src), flow.planes, 1.0);
  Tensor a = warp(prev, to_prev);
  const Tensor b = warp(cur, to_cur);
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] = (a.data[i] + b.data[i]) * 0.5;
  return a;
}

inline std::vector<Frame> instant_images(const Frame& prev, const Frame& cur, const FlowField& flow,
                                         const MotionRatios& ratios, const BlurOptions& opt = {}) {
  const Tensor stack = instant_stack(prev, cur, flow, ratios, opt);
  std::vector<Frame> out;
  for (int i = 0; i <= ratios.count(); ++i) out.push_back(channel_slice(stack, i * prev.channels, prev.channels));
  return out;
}

inline Frame accumulate(const std::vector<Frame>& instants, const AccumWeights& accum) {
  require(!instants.empty() && static_cast<int>(instants.size()) == accum.count(),
          "accumulate: " + std::to_string(instants.size()) + " instants but " + std::to_string(accum.count()) +
              " weight planes");
  require(simplex_violation(accum.planes) <= 1e-3, "accumulate: weights violate the simplex constraint");
  const Frame& f0 = instants.front();
  Tensor stack(f0.channels * accum.count(), f0.height, f0.width);
  for (int i = 0; i < accum.count(); ++i) {
    require(instants[i].same_shape(f0) && f0.same_spatial(accum.planes), "accumulate: shape mismatch");
    std::copy(instants[i].data.begin(), instants[i].data.end(),
              stack.data.begin() + static_cast<std::ptrdiff_t>(i * f0.size()));
  }
  return kernels::weighted_stack_sum(accum.planes, stack);
}

inline Frame blur(const Frame& cur, const Frame& prev, const FlowField& flow, const BlurParams& params,
                  const BlurOptions& opt = {}) {
  validate_shapes(params);
  require(params.accum.planes.same_spatial(cur), "blur: params and frames differ in size");
  return kernels::weighted_stack_sum(params.accum.planes, instant_stack(prev, cur, flow, params.ratios, opt));
}

inline Frame norm_blur(const Frame& cur, const Frame& prev, const FlowField& flow, int n) {
  return blur(cur, prev, flow, uniform_params(n, cur.height, cur.width));
}

/// Taped blur; `ratios` (N-1 planes) and `accum` (N planes) may be any Vars.
inline Var blur_taped(Tape& tape, const Frame& cur, const Frame& prev, const FlowField& flow, Var ratios, Var accum,
                      const BlurOptions& opt = {}) {
  detail::check_blur_inputs(prev, cur, flow, ratios.value());
  require(accum.value().channels == ratios.value().channels + 1, "blur_taped: need N accum planes for N-1 ratios");
  Var u = tape.constant(flow.planes);
  Var src = opt.literal_squared_ratios ? ad::mul(ratios, ratios) : ratios;
  Var to_prev = ad::outer_planes(ad::prefix_sums(src), u, -1.0);
  Var to_cur = ad::outer_planes(ad::suffix_sums(src), u, 1.0);
  Var wp = ad::warp(tape.constant(prev), to_prev);
  Var wc = ad::warp(tape.constant(cur), to_cur);
  Var instants = ad::affine(ad::add(wp, wc), 0.5);
  return ad::weighted_stack_sum(accum, instants);
}

/// "BPRMv1" + 2 pad bytes, N, H, W (u32 LE), then the N-1 W-planes and the N A-planes as f32 LE.
inline void write_params(const std::filesystem::path& path, const BlurParams& bp) {
  validate_shapes(bp);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  io::bin::put_magic(out, "BPRMv1");
  io::bin::put_u32(out, static_cast<std::uint32_t>(bp.n_instants));
  io::bin::put_u32(out, static_cast<std::uint32_t>(bp.height()));
  io::bin::put_u32(out, static_cast<std::uint32_t>(bp.width()));
  for (double v : bp.ratios.planes.data) io::bin::put_f32(out, v);
  for (double v : bp.accum.planes.data) io::bin::put_f32(out, v);
}

inline BlurParams read_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  const std::string what = path.string();
  io::bin::expect_magic(in, "BPRMv1", what);
  const int n = static_cast<int>(io::bin::get_u32(in, what));
  const int h = static_cast<int>(io::bin::get_u32(in, what));
  const int w = static_cast<int>(io::bin::get_u32(in, what));
  if (n < 2) throw LoadError(what + ": N must be >= 2");
  BlurParams bp;
  bp.n_instants = n;
  bp.ratios.planes = Tensor(n - 1, h, w);
  bp.accum.planes = Tensor(n, h, w);
  for (double& v : bp.ratios.planes.data) v = io::bin::get_f32(in, what);
  for (double& v : bp.accum.planes.data) v = io::bin::get_f32(in, what);
  return bp;
}

}  // namespace aba
