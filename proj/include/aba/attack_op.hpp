#pragma once

// Optimisation-based adversarial blur: signed gradient descent on the motion
// ratios W and accumulation weights A of a blurred search region so that the
// tracker's response peaks on a background location instead of the object.

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "aba/blur.hpp"
#include "aba/flow.hpp"
#include "aba/tape.hpp"
#include "aba/tracker.hpp"

namespace aba {

enum class LossKind { L2, CrossEntropy };

inline std::string to_string(LossKind k) { return k == LossKind::L2 ? "l2" : "cross-entropy"; }

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "l2" || s == "l2-regression") return LossKind::L2;
  if (s == "ce" || s == "cross-entropy") return LossKind::CrossEntropy;
  throw InvalidArgument("unknown loss kind '" + s + "' (expected l2|cross-entropy)");
}

struct AttackTarget {
  Tensor target_map;  // Y*
  int q_row = 0;
  int q_col = 0;
  LossKind loss_kind = LossKind::L2;
};

struct OpAttackConfig {
  int iterations = 10;
  double step_ratios = 0.002;
  double step_accum = 0.0002;
  int n_instants = 17;
  int attack_every = 5;
  LossKind loss_kind = LossKind::L2;
  /// Use the previously blurred region as prev instead of the clean one.
  bool chain_prev_blurred = false;
  FlowConfig flow;
  BlurOptions blur;

  void validate() const {
    require(iterations >= 1, "OpAttackConfig: iterations must be >= 1");
    require(step_ratios >= 0.0 && step_accum >= 0.0, "OpAttackConfig: step sizes must be non-negative");
    require(step_ratios > 0.0 || step_accum > 0.0, "OpAttackConfig: at least one stack must be live");
    require(n_instants >= 2, "OpAttackConfig: n_instants must be >= 2");
    require(attack_every >= 1, "OpAttackConfig: attack_every must be >= 1");
    flow.validate();
  }
};

enum class Freeze { None, Ratios, Accum };

/// Table-style ablations: a frozen stack keeps its uniform initialisation.
inline OpAttackConfig ablation_variant(OpAttackConfig cfg, Freeze freeze) {
  if (freeze == Freeze::Ratios) cfg.step_ratios = 0.0;
  if (freeze == Freeze::Accum) cfg.step_accum = 0.0;
  return cfg;
}

/// 1-based frame index schedule: frame 1 is never attacked; from frame 2 every
/// `every`-th frame is.
inline bool is_attack_frame(int frame_index_1based, int every) {
  return frame_index_1based >= 2 && (frame_index_1based - 2) % every == 0;
}

/// Y* from the clean response: mask an object-sized rectangle around the clean
/// argmax and put the peak on the strongest remaining (background) cell.
inline AttackTarget make_target(const Tensor& clean_map, double object_w, double object_h, LossKind kind) {
  require(clean_map.channels == 1 && !clean_map.empty(), "make_target: expects a non-empty single-plane map");
  const auto [r0, c0] = argmax(clean_map);
  const int R = clean_map.height, C = clean_map.width;
  auto in_object = [&](int r, int c) { return std::abs(r - r0) <= object_h / 2 && std::abs(c - c0) <= object_w / 2; };
  int qr = -1, qc = -1;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c)
      if (!in_object(r, c) && (qr < 0 || clean_map.at(0, r, c) > clean_map.at(0, qr, qc))) {
        qr = r;
        qc = c;
      }
  if (qr < 0) {
    // Object covers the whole map: fall back to the best corner.
    const int corners[4][2] = {{0, 0}, {0, C - 1}, {R - 1, 0}, {R - 1, C - 1}};
    qr = 0;
    qc = 0;
    for (const auto& k : corners)
      if (clean_map.at(0, k[0], k[1]) > clean_map.at(0, qr, qc)) {
        qr = k[0];
        qc = k[1];
      }
  }
  AttackTarget t;
  t.loss_kind = kind;
  t.q_row = qr;
  t.q_col = qc;
  t.target_map = Tensor(1, R, C, kind == LossKind::L2 ? 0.0 : -1.0);
  t.target_map.at(0, qr, qc) = 1.0;
  return t;
}

namespace detail {
inline Tensor bce_labels(const Tensor& target_map) {
  Tensor y = target_map;
  for (double& v : y.data) v = v > 0.0 ? 1.0 : 0.0;
  return y;
}
}  // namespace detail

/// L2: sum (pred - Y*)^2. Cross-entropy: BCE of sigmoid(pred) against Y* mapped {+1 -> 1, -1 -> 0}.
inline Var adversarial_loss(Var pred, const AttackTarget& target) {
  require(pred.value().same_shape(target.target_map), "adversarial_loss: map " + pred.value().shape_str() +
                                                          " vs target " + target.target_map.shape_str());
  if (target.loss_kind == LossKind::L2) return ad::squared_error(pred, target.target_map);
  return ad::bce_with_logits(pred, detail::bce_labels(target.target_map));
}

inline double adversarial_loss(const Tensor& pred, const AttackTarget& target) {
  Tape tape;
  return adversarial_loss(tape.constant(pred), target).value().data[0];
}

inline double sign_of(double g) { return g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0); }

/// W -= step_ratios * sign(dW); A -= step_accum * sign(dA); then project.
inline BlurParams signed_step(BlurParams params, const Tensor& grad_ratios, const Tensor& grad_accum,
                              const OpAttackConfig& cfg) {
  require(grad_ratios.same_shape(params.ratios.planes) && grad_accum.same_shape(params.accum.planes),
          "signed_step: gradient shapes do not match params");
  if (!all_finite(grad_ratios) || !all_finite(grad_accum))
    throw NumericFailure("signed_step: non-finite gradient, iteration aborted");
  for (std::size_t i = 0; i < grad_ratios.size(); ++i)
    params.ratios.planes.data[i] -= cfg.step_ratios * sign_of(grad_ratios.data[i]);
  for (std::size_t i = 0; i < grad_accum.size(); ++i)
    params.accum.planes.data[i] -= cfg.step_accum * sign_of(grad_accum.data[i]);
  return project_constraints(std::move(params));
}

struct AttackStats {
  /// Loss at iteration k's parameters, k = 0..iterations (0 is the uniform start).
  std::vector<double> loss_trace;
  std::vector<std::pair<int, int>> argmax_trace;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  /// Worst simplex violation seen after any update.
  double max_constraint_violation = 0.0;
  bool aborted = false;
  bool skipped = false;
  double latency_ms = 0.0;
};

struct AttackResult {
  Frame blurred_region;
  BlurParams params;
  AttackStats stats;
};

namespace detail {

struct Evaluation {
  double loss;
  std::pair<int, int> peak;
  Tensor grad_ratios;
  Tensor grad_accum;
};

inline Evaluation evaluate(const TrackerModel& tracker, const Frame& cur, const Frame& prev, const FlowField& flow,
                           const BlurParams& params, const AttackTarget& target, const BlurOptions& opt,
                           bool with_grad) {
  Tape tape;
  Var w = tape.leaf(params.ratios.planes);
  Var a = tape.leaf(params.accum.planes);
  Var blurred = blur_taped(tape, cur, prev, flow, w, a, opt);
  Var resp = respond_taped(tracker, blurred);
  Var loss = adversarial_loss(resp, target);
  Evaluation ev{loss.value().data[0], argmax(resp.value()), {}, {}};
  if (with_grad) {
    tape.backward(loss);
    ev.grad_ratios = tape.grad(w);
    ev.grad_accum = tape.grad(a);
  }
  return ev;
}

}  // namespace detail

/// Runs the attack on already-cropped, co-located regions. `flow` is held fixed.
inline AttackResult attack_region(const TrackerModel& tracker, const Frame& cur_region, const Frame& prev_region,
                                  const FlowField& flow, const OpAttackConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor clean = respond(tracker, cur_region).values;
  const AttackTarget target = make_target(clean, tracker.bbox_w, tracker.bbox_h, cfg.loss_kind);

  AttackResult res;
  res.params = uniform_params(cfg.n_instants, cur_region.height, cur_region.width);
  for (int it = 0; it < cfg.iterations; ++it) {
    auto ev = detail::evaluate(tracker, cur_region, prev_region, flow, res.params, target, cfg.blur, true);
    res.stats.loss_trace.push_back(ev.loss);
    res.stats.argmax_trace.push_back(ev.peak);
    try {
      res.params = signed_step(res.params, ev.grad_ratios, ev.grad_accum, cfg);
    } catch (const NumericFailure&) {
      res.stats.aborted = true;
      break;
    }
    res.stats.max_constraint_violation =
        std::max({res.stats.max_constraint_violation, simplex_violation(res.params.ratios.planes),
                  simplex_violation(res.params.accum.planes)});
  }
  const auto last = detail::evaluate(tracker, cur_region, prev_region, flow, res.params, target, cfg.blur, false);
  res.stats.loss_trace.push_back(last.loss);
  res.stats.argmax_trace.push_back(last.peak);
  res.stats.initial_loss = res.stats.loss_trace.front();
  res.stats.final_loss = last.loss;
  res.blurred_region = blur(cur_region, prev_region, flow, res.params, cfg.blur);
  res.stats.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// Crops co-located search regions around `prev_bbox` in both frames, estimates
/// flow once and attacks the current region. Returns the blurred region and
/// the region's frame offset.
inline std::pair<AttackResult, SearchRegion> attack_frame(const TrackerModel& tracker, const Frame& cur,
                                                          const Frame& prev, const BBox& prev_bbox,
                                                          const OpAttackConfig& cfg, double context = 2.5) {
  const auto t0 = std::chrono::steady_clock::now();
  SearchRegion cr = crop_search_region(cur, prev_bbox, context);
  SearchRegion pr = crop_search_region(prev, prev_bbox, context);
  const FlowField flow = estimate_flow(pr.pixels, cr.pixels, cfg.flow);
  AttackResult res = attack_region(tracker, cr.pixels, pr.pixels, flow, cfg);
  res.stats.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(res), std::move(cr)};
}

}  // namespace aba
