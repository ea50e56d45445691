#pragma once

// Finite-difference check of the whole blur -> track -> loss pipeline with
// respect to every motion-ratio and accumulation-weight element.
//
// Bilinear sampling is only piecewise smooth, so a probe that moves a sample
// coordinate across a pixel knot (or onto the clamped border) measures a kink
// rather than a derivative. Instances are therefore drawn so that every sample
// coordinate keeps at least `knot_margin` from knots and borders; the margin
// exceeds the coordinate shift a probe of size eps can cause.

#include <cmath>
#include <random>

#include "aba/attack_op.hpp"
#include "aba/blur.hpp"
#include "aba/gradcheck.hpp"
#include "aba/tracker.hpp"

namespace aba {

struct PipelineInstance {
  Frame prev;
  Frame cur;
  FlowField flow;
  BlurParams params;
  TrackerModel tracker;
  AttackTarget target;
};

namespace detail {

inline bool coordinate_ok(double s, int n, double margin) {
  if (s < 0.0) return s < -margin;
  if (s > n - 1) return s > n - 1 + margin;
  const double f = s - std::floor(s);
  return f >= margin && f <= 1.0 - margin;
}

inline Tensor random_simplex(int k, int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.2, 1.0);
  Tensor t(k, h, w);
  for (double& v : t.data) v = u(rng);
  return project_simplex_l1(std::move(t));
}

}  // namespace detail

/// Random single-channel instance of side `size` with `n` instants; flow
/// magnitudes up to 2 px; tracker template is a 4x4 (or larger) crop of cur.
inline PipelineInstance make_pipeline_instance(int size, int n, std::uint64_t seed, double knot_margin = 5e-3,
                                               LossKind loss = LossKind::L2) {
  require(size >= 6 && n >= 2, "make_pipeline_instance: need size >= 6 and n >= 2");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pix(0.0, 1.0), fl(-2.0, 2.0);
  PipelineInstance in;
  in.prev = Frame(1, size, size);
  in.cur = Frame(1, size, size);
  for (double& v : in.prev.data) v = pix(rng);
  for (double& v : in.cur.data) v = pix(rng);
  in.params.n_instants = n;
  in.params.ratios.planes = detail::random_simplex(n - 1, size, size, rng);
  in.params.accum.planes = detail::random_simplex(n, size, size, rng);

  // Per-pixel rejection: every instant's prev/cur sample position must avoid knots.
  in.flow = FlowField(size, size);
  const Tensor& w = in.params.ratios.planes;
  const std::size_t P = w.plane_size();
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * size + x;
      for (int attempt = 0;; ++attempt) {
        if (attempt > 10000) throw InternalConsistency("make_pipeline_instance: cannot place flow away from knots");
        const double u = fl(rng), v = fl(rng);
        bool ok = true;
        double before = 0.0;
        for (int i = 0; i < n && ok; ++i) {
          const double after = 1.0 - before;  // remaining share
          // Instant 1 has zero cumulative and instant N zero remaining flow;
          // those offsets do not depend on W, so a knot there is harmless.
          if (i > 0)
            ok = detail::coordinate_ok(x - before * u, size, knot_margin) &&
                 detail::coordinate_ok(y - before * v, size, knot_margin);
          if (ok && i < n - 1)
            ok = detail::coordinate_ok(x + after * u, size, knot_margin) &&
                 detail::coordinate_ok(y + after * v, size, knot_margin);
          if (i < n - 1) before += w.data[i * P + p];
        }
        if (ok) {
          in.flow.planes.at(0, y, x) = u;
          in.flow.planes.at(1, y, x) = v;
          break;
        }
      }
    }

  const int side = std::max(4, size / 2);
  const double off = (size - side) / 2.0;
  in.tracker = init(in.cur, BBox::from_top_left(off, off, side, side), FeatureKind::Intensity);
  in.target = make_target(respond(in.tracker, in.cur).values, in.tracker.bbox_w, in.tracker.bbox_h, loss);
  return in;
}

/// Adversarial loss as a function of (W, A) for one instance.
inline TapedScalarFn pipeline_loss(const PipelineInstance& in) {
  return [&in](Tape& tape, const std::vector<Var>& p) {
    Var blurred = blur_taped(tape, in.cur, in.prev, in.flow, p[0], p[1]);
    return adversarial_loss(respond_taped(in.tracker, blurred), in.target);
  };
}

inline GradCheckResult pipeline_grad_check(int size, int n, std::uint64_t seed, double eps = 1e-3) {
  const PipelineInstance in = make_pipeline_instance(size, n, seed);
  return grad_check_detailed(pipeline_loss(in), {in.params.ratios.planes, in.params.accum.planes}, eps);
}

}  // namespace aba
