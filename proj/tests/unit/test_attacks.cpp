#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "aba/attack_op.hpp"
#include "aba/attack_os.hpp"
#include "aba/bench.hpp"
#include "aba/gradcheck.hpp"
#include "aba/scene.hpp"
#include "helpers.hpp"

using namespace aba;
using aba::test::random_tensor;

namespace {

Sequence moving_scene(std::uint64_t seed, double vx = 2.0, double vy = 1.0) {
  SceneConfig cfg;
  cfg.n_frames = 12;
  cfg.motion.vx = vx;
  cfg.motion.vy = vy;
  return generate_scene(cfg, seed);
}

struct RegionPair {
  TrackerModel tracker;
  Frame prev, cur;
  FlowField flow;
};

RegionPair region_pair(const Sequence& s, int t) {
  const BBox& box = s.gt_boxes[t - 1];
  RegionPair r{init(s.frames[0], s.gt_boxes[0]), crop_search_region(s.frames[t - 1], box).pixels,
               crop_search_region(s.frames[t], box).pixels, FlowField(1, 1)};
  r.flow = estimate_flow(r.prev, r.cur);
  return r;
}

Tensor map_from(std::vector<double> v, int rows, int cols) {
  Tensor t(1, rows, cols);
  t.data = std::move(v);
  return t;
}

}  // namespace

// Target -----------------------------------------------------------------------

TEST(MakeTarget, BackgroundPeakBecomesTarget) {
  Tensor m(1, 5, 5, 0.1);
  m.at(0, 2, 2) = 0.9;
  m.at(0, 1, 1) = 0.8;  // inside the 3x3 object window
  m.at(0, 0, 0) = 0.4;
  const AttackTarget t = make_target(m, 3, 3, LossKind::L2);
  EXPECT_EQ(t.q_row, 0);
  EXPECT_EQ(t.q_col, 0);
  double sum = 0;
  for (double v : t.target_map.data) sum += v;
  EXPECT_DOUBLE_EQ(sum, 1.0);
  EXPECT_DOUBLE_EQ(t.target_map.at(0, 0, 0), 1.0);
}

TEST(MakeTarget, CrossEntropyLabels) {
  Tensor m(1, 5, 5, 0.1);
  m.at(0, 2, 2) = 0.9;
  m.at(0, 0, 0) = 0.4;
  const AttackTarget t = make_target(m, 3, 3, LossKind::CrossEntropy);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) EXPECT_DOUBLE_EQ(t.target_map.at(0, r, c), r == 0 && c == 0 ? 1.0 : -1.0);
}

TEST(MakeTarget, TiesPickRowMajorFirst) {
  Tensor m(1, 5, 5, 0.0);
  m.at(0, 2, 2) = 0.9;
  m.at(0, 4, 0) = 0.5;
  m.at(0, 0, 4) = 0.5;
  const AttackTarget t = make_target(m, 3, 3, LossKind::L2);
  EXPECT_EQ(std::make_pair(t.q_row, t.q_col), std::make_pair(0, 4));
}

TEST(MakeTarget, FullCoverageFallsBackToBestCorner) {
  Tensor m = map_from({0.1, 0.2, 0.3, 0.9, 0.5, 0.2, 0.6, 0.1, 0.4}, 3, 3);
  const AttackTarget t = make_target(m, 10, 10, LossKind::L2);
  EXPECT_EQ(std::make_pair(t.q_row, t.q_col), std::make_pair(2, 0));
}

// Loss -------------------------------------------------------------------------

TEST(AdversarialLoss, ZeroAtTarget) {
  Tensor m(1, 4, 4, 0.2);
  m.at(0, 1, 1) = 0.7;
  const AttackTarget t = make_target(m, 1, 1, LossKind::L2);
  EXPECT_DOUBLE_EQ(adversarial_loss(t.target_map, t), 0.0);
}

TEST(AdversarialLoss, UnitDeviation) {
  Tensor m(1, 4, 4, 0.2);
  m.at(0, 1, 1) = 0.7;
  const AttackTarget t = make_target(m, 1, 1, LossKind::L2);
  EXPECT_DOUBLE_EQ(adversarial_loss(Tensor(1, 4, 4), t), 1.0);
}

TEST(AdversarialLoss, CrossEntropyAtZeroLogits) {
  Tensor m(1, 3, 3, 0.0);
  m.at(0, 1, 1) = 1.0;
  const AttackTarget t = make_target(m, 1, 1, LossKind::CrossEntropy);
  EXPECT_NEAR(adversarial_loss(Tensor(1, 3, 3), t), 9 * std::log(2.0), 1e-12);
}

TEST(AdversarialLoss, ShapeMismatchThrows) {
  const AttackTarget t = make_target(Tensor(1, 3, 3, 0.5), 1, 1, LossKind::L2);
  EXPECT_THROW(adversarial_loss(Tensor(1, 3, 4), t), InvalidArgument);
}

// Signed step ------------------------------------------------------------------

TEST(SignedStep, Defaults) {
  const OpAttackConfig cfg;
  EXPECT_EQ(cfg.iterations, 10);
  EXPECT_DOUBLE_EQ(cfg.step_ratios, 0.002);
  EXPECT_DOUBLE_EQ(cfg.step_accum, 0.0002);
  EXPECT_EQ(cfg.n_instants, 17);
  EXPECT_EQ(cfg.attack_every, 5);
}

TEST(SignedStep, MovesAgainstGradientSign) {
  const BlurParams bp = uniform_params(3, 1, 1);
  Tensor gw(2, 1, 1), ga(3, 1, 1);
  gw.data = {-2.0, 2.0};
  const BlurParams out = signed_step(bp, gw, ga, OpAttackConfig{});
  EXPECT_NEAR(out.ratios.planes.data[0], 0.502, 1e-12);
  EXPECT_NEAR(out.ratios.planes.data[1], 0.498, 1e-12);
  for (double v : out.accum.planes.data) EXPECT_DOUBLE_EQ(v, 1.0 / 3);
}

TEST(SignedStep, ZeroGradientKeepsParams) {
  std::mt19937_64 rng(1);
  BlurParams bp;
  bp.n_instants = 4;
  bp.ratios.planes = aba::test::random_simplex(3, 4, 4, rng);
  bp.accum.planes = aba::test::random_simplex(4, 4, 4, rng);
  const BlurParams out = signed_step(bp, Tensor(3, 4, 4), Tensor(4, 4, 4), OpAttackConfig{});
  EXPECT_LT(max_abs_diff(out.ratios.planes, bp.ratios.planes), 1e-12);
  EXPECT_LT(max_abs_diff(out.accum.planes, bp.accum.planes), 1e-12);
}

TEST(SignedStep, NonFiniteGradientAborts) {
  Tensor gw(2, 1, 1);
  gw.data[0] = std::nan("");
  EXPECT_THROW(signed_step(uniform_params(3, 1, 1), gw, Tensor(3, 1, 1), OpAttackConfig{}), NumericFailure);
}

// Schedule and variants ----------------------------------------------------------

TEST(Schedule, EveryFifthFromFrameTwo) {
  std::vector<int> hit;
  for (int f = 1; f <= 12; ++f)
    if (is_attack_frame(f, 5)) hit.push_back(f);
  EXPECT_EQ(hit, (std::vector<int>{2, 7, 12}));
}

TEST(Ablation, FrozenStackGetsZeroStep) {
  const OpAttackConfig base;
  EXPECT_EQ(ablation_variant(base, Freeze::Ratios).step_ratios, 0.0);
  EXPECT_EQ(ablation_variant(base, Freeze::Ratios).step_accum, base.step_accum);
  EXPECT_EQ(ablation_variant(base, Freeze::Accum).step_accum, 0.0);
  EXPECT_EQ(ablation_variant(base, Freeze::None).step_ratios, base.step_ratios);
}

// Attack loop -------------------------------------------------------------------

TEST(OpAttack, ZeroFlowLossTraceIsConstant) {
  const Sequence s = moving_scene(3);
  RegionPair r = region_pair(s, 2);
  const AttackResult res = attack_region(r.tracker, r.cur, r.cur, FlowField(r.cur.height, r.cur.width), {});
  ASSERT_EQ(res.stats.loss_trace.size(), 11u);
  for (double l : res.stats.loss_trace) EXPECT_NEAR(l, res.stats.loss_trace.front(), 1e-12 * l);
  EXPECT_LT(max_abs_diff(res.blurred_region, r.cur), 1e-9);
}

TEST(OpAttack, StartsFromNormBlur) {
  const Sequence s = moving_scene(4);
  RegionPair r = region_pair(s, 2);
  const AttackResult res = attack_region(r.tracker, r.cur, r.prev, r.flow, {});
  const Tensor clean = respond(r.tracker, r.cur).values;
  const AttackTarget t = make_target(clean, r.tracker.bbox_w, r.tracker.bbox_h, LossKind::L2);
  const Frame nb = norm_blur(r.cur, r.prev, r.flow, 17);
  EXPECT_NEAR(res.stats.initial_loss, adversarial_loss(respond(r.tracker, nb).values, t), 1e-9);
}

TEST(OpAttack, LossDecreasesAndConstraintsHold) {
  const Sequence s = moving_scene(5);
  for (int t : {2, 7}) {
    RegionPair r = region_pair(s, t);
    const AttackResult res = attack_region(r.tracker, r.cur, r.prev, r.flow, {});
    EXPECT_LT(res.stats.final_loss, res.stats.initial_loss);
    EXPECT_LE(res.stats.max_constraint_violation, 1e-5);
    EXPECT_TRUE(satisfies_constraints(res.params));
    EXPECT_FALSE(res.stats.aborted);
  }
}

TEST(OpAttack, CrossEntropyModeDescends) {
  const Sequence s = moving_scene(6);
  RegionPair r = region_pair(s, 2);
  OpAttackConfig cfg;
  cfg.loss_kind = LossKind::CrossEntropy;
  const AttackResult res = attack_region(r.tracker, r.cur, r.prev, r.flow, cfg);
  EXPECT_LT(res.stats.final_loss, res.stats.initial_loss);
}

TEST(OpAttack, FrozenRatiosStayUniform) {
  const Sequence s = moving_scene(7);
  RegionPair r = region_pair(s, 2);
  const AttackResult res = attack_region(r.tracker, r.cur, r.prev, r.flow, ablation_variant({}, Freeze::Ratios));
  for (double v : res.params.ratios.planes.data) EXPECT_NEAR(v, 1.0 / 16, 1e-12);
  const AttackResult res2 = attack_region(r.tracker, r.cur, r.prev, r.flow, ablation_variant({}, Freeze::Accum));
  for (double v : res2.params.accum.planes.data) EXPECT_NEAR(v, 1.0 / 17, 1e-12);
}

TEST(OpAttack, FrameCropsCoLocatedRegions) {
  const Sequence s = moving_scene(8);
  const TrackerModel m = init(s.frames[0], s.gt_boxes[0]);
  auto [res, region] = attack_frame(m, s.frames[2], s.frames[1], s.gt_boxes[1], OpAttackConfig{});
  EXPECT_EQ(res.blurred_region.width, search_side(s.gt_boxes[1], 2.5));
  EXPECT_EQ(region.pixels.width, res.blurred_region.width);
  EXPECT_EQ(res.stats.loss_trace.size(), 11u);
}

TEST(OpAttack, InvalidConfigRejected) {
  OpAttackConfig cfg;
  cfg.iterations = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.attack_every = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

// Predictor ---------------------------------------------------------------------

TEST(Predictor, DefaultShapeAndSize) {
  const PredictorNet net = make_predictor({}, 1);
  EXPECT_EQ(net.config.input_channels(), 17);
  EXPECT_EQ(net.parameter_count(), 53801u);
  EXPECT_EQ(net.decoder_out(net.config.depth - 1, net.accum_head()), 17);
  EXPECT_EQ(net.decoder_out(net.config.depth - 1, net.ratio_head()), 16);
}

TEST(Predictor, InvalidConfigRejected) {
  PredictorConfig c;
  c.input_size = 40;  // not divisible by 16
  EXPECT_THROW(make_predictor(c, 1), InvalidArgument);
  c = {};
  c.widths = {8, 8};
  EXPECT_THROW(make_predictor(c, 1), InvalidArgument);
}

TEST(Predictor, ZeroInitReproducesNormBlur) {
  const Sequence s = moving_scene(9);
  RegionPair r = region_pair(s, 3);
  const PredictorNet net = make_predictor({}, 2);
  const OsAttackResult os = os_attack_region(net, r.cur, r.prev, FlowConfig{});
  for (double v : os.params.accum.planes.data) EXPECT_NEAR(v, 1.0 / 17, 1e-12);
  for (double v : os.params.ratios.planes.data) EXPECT_NEAR(v, 1.0 / 16, 1e-12);
  EXPECT_LT(max_abs_diff(os.blurred_region, norm_blur(r.cur, r.prev, r.flow, 17)), 1e-6);
}

TEST(Predictor, RandomNetSatisfiesConstraints) {
  PredictorNet net = make_predictor({}, 3);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0.0, 0.5);
  for (auto i : {net.accum_index(3), net.ratio_index(3)})
    for (double& v : net.params[i].data) v = nd(rng);
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor instants = random_tensor(17, 40, 40, rng);
    const BlurParams bp = predict_params(net, instants);
    EXPECT_EQ(bp.accum.planes.channels, 17);
    EXPECT_EQ(bp.ratios.planes.height, 40);
    for (const Tensor* t : {&bp.accum.planes, &bp.ratios.planes})
      for (double v : t->data) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    EXPECT_TRUE(satisfies_constraints(bp));
  }
}

TEST(Predictor, InputIsNormalizedToSignedRange) {
  const PredictorNet net = make_predictor({}, 5);
  const Tensor x = predictor_input(net, Tensor(17, 40, 40, 1.0));
  EXPECT_EQ(x.height, 64);
  for (double v : x.data) EXPECT_DOUBLE_EQ(v, 1.0);
  EXPECT_THROW(predictor_input(net, Tensor(16, 40, 40)), InvalidArgument);
}

TEST(Predictor, CheckpointRoundTrip) {
  PredictorConfig c;
  c.n_instants = 5;
  c.input_size = 32;
  c.depth = 3;
  c.widths = {4, 6, 8};
  PredictorNet net = make_predictor(c, 6);
  std::mt19937_64 rng(7);
  for (double& v : net.params.back().data) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  const auto dir = aba::test::scratch_dir("ckpt");
  write_checkpoint(dir / "n.jama", net);
  const PredictorNet back = read_checkpoint(dir / "n.jama");
  EXPECT_EQ(back.config.n_instants, 5);
  EXPECT_EQ(back.config.widths, c.widths);
  ASSERT_EQ(back.params.size(), net.params.size());
  for (std::size_t k = 0; k < net.params.size(); ++k) EXPECT_LT(max_abs_diff(back.params[k], net.params[k]), 1e-6);
  std::ofstream(dir / "bad.jama") << "JUNKJUNKJUNK";
  EXPECT_THROW(read_checkpoint(dir / "bad.jama"), LoadError);
  EXPECT_THROW(read_checkpoint(dir / "missing.jama"), LoadError);
}

TEST(NaturalLoss, ZeroAtUniform) {
  Tape t;
  EXPECT_DOUBLE_EQ(natural_loss(t.constant(uniform_params(4, 3, 3).accum.planes)).value().data[0], 0.0);
}

TEST(NaturalLoss, SumOfPlaneNorms) {
  Tensor a = uniform_params(3, 3, 3).accum.planes;
  a.at(0, 1, 2) += 0.1;
  a.at(2, 1, 2) -= 0.1;
  Tape t;
  EXPECT_NEAR(natural_loss(t.constant(a)).value().data[0], 0.2, 1e-12);
}

TEST(TotalLoss, DefaultLambdaAndComposition) {
  EXPECT_DOUBLE_EQ(TrainConfig{}.lambda_natural, 0.001);
  const Sequence s = moving_scene(10);
  RegionPair r = region_pair(s, 2);
  const PredictorNet net = make_predictor({}, 8);
  const AttackTarget target =
      make_target(respond(r.tracker, r.cur).values, r.tracker.bbox_w, r.tracker.bbox_h, LossKind::L2);
  Tape tape;
  auto nv = detail::bind(tape, net, false);
  const auto parts = total_loss(tape, net, nv, r.tracker, r.cur, r.prev, r.flow, target, 0.5);
  const double adv = parts.adversarial.value().data[0], nat = parts.natural.value().data[0];
  EXPECT_NEAR(parts.total.value().data[0], adv + 0.5 * nat, 1e-12);
  EXPECT_NEAR(nat, 0.0, 1e-12);
  EXPECT_NEAR(adv, adversarial_loss(respond(r.tracker, norm_blur(r.cur, r.prev, r.flow, 17)).values, target), 1e-9);
}

namespace {

/// Smallest gap, over pixels, between the two smallest accumulation offsets.
/// The simplex completion resets the minimal-offset plane, so the loss jumps
/// where two offsets tie; finite differences are only valid away from ties.
double min_offset_gap(const Tensor& off) {
  const std::size_t P = off.plane_size();
  double gap = 1e9;
  for (std::size_t p = 0; p < P; ++p) {
    double lo = 1e9, second = 1e9;
    for (int i = 0; i < off.channels; ++i) {
      const double v = off.data[i * P + p];
      if (v < lo) second = lo, lo = v;
      else if (v < second) second = v;
    }
    gap = std::min(gap, second - lo);
  }
  return gap;
}

}  // namespace

TEST(TotalLoss, NetworkGradientMatchesFiniteDifferences) {
  PredictorConfig c;
  c.n_instants = 3;
  c.input_size = 16;
  c.depth = 2;
  c.widths = {4, 4};

  const Sequence s = moving_scene(11, 1.5, 0.5);
  const BBox box = s.gt_boxes[1];
  const TrackerModel tracker = init(s.frames[0], s.gt_boxes[0]);
  const Frame prev = crop_search_region(s.frames[1], box, 1.5).pixels;
  const Frame cur = crop_search_region(s.frames[2], box, 1.5).pixels;
  const FlowField flow = estimate_flow(prev, cur);
  const AttackTarget target = make_target(respond(tracker, cur).values, tracker.bbox_w, tracker.bbox_h, LossKind::L2);
  const Tensor instants = instant_stack(prev, cur, flow, uniform_params(3, cur.height, cur.width).ratios);

  // Random non-zero heads, redrawn until no pixel sits near an offset tie.
  PredictorNet net;
  std::mt19937_64 rng(10);
  for (int attempt = 0;; ++attempt) {
    ASSERT_LT(attempt, 200) << "no tie-free network drawn";
    net = make_predictor(c, 100 + attempt);
    std::normal_distribution<double> nd(0.0, 0.3);
    for (auto i : {net.accum_index(1), net.ratio_index(1)})
      for (double& v : net.params[i].data) v = nd(rng);
    Tape tape;
    const auto pv = predict_taped(tape, net, detail::bind(tape, net, false), instants, cur.height, cur.width);
    if (min_offset_gap(pv.accum_offsets) > 2e-3) break;
  }

  std::vector<ParamElement> subset;
  std::uniform_int_distribution<std::size_t> pick_layer(0, net.params.size() - 1);
  while (subset.size() < 50) {
    const auto k = pick_layer(rng);
    subset.emplace_back(static_cast<int>(k), std::uniform_int_distribution<std::size_t>(0, net.params[k].size() - 1)(rng));
  }
  const auto r = grad_check_detailed(
      [&](Tape& tape, const std::vector<Var>& p) {
        detail::NetVars nv{p};
        return total_loss(tape, net, nv, tracker, cur, prev, flow, target, 0.001).total;
      },
      net.params, 1e-4, subset);
  EXPECT_EQ(r.checked, 50u);
  EXPECT_LT(r.max_relative_error, 1e-3) << "worst layer " << r.worst.first << " elem " << r.worst.second
                                        << " analytic " << r.worst_analytic << " numeric " << r.worst_numeric;
}

// Training ------------------------------------------------------------------------

namespace {

std::vector<TrainingSample> small_training_set() {
  std::vector<Sequence> seqs{suite_scene(0, 60000), suite_scene(1, 60001)};
  return make_training_set(seqs, 2, 3, FlowConfig{});
}

}  // namespace

TEST(Training, DeterministicForFixedSeed) {
  const auto data = small_training_set();
  TrainConfig cfg;
  cfg.steps = 5;
  PredictorNet a = make_predictor({}, 1), b = make_predictor({}, 1);
  const TrainLog la = train(a, data, cfg), lb = train(b, data, cfg);
  ASSERT_EQ(la.records.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(la.records[i].total, lb.records[i].total);
  for (std::size_t k = 0; k < a.params.size(); ++k) EXPECT_EQ(a.params[k].data, b.params[k].data);
}

TEST(Training, FirstStepIsNormBlurLoss) {
  const auto data = small_training_set();
  TrainConfig cfg;
  cfg.steps = 1;
  cfg.seed = 5;
  PredictorNet net = make_predictor({}, 1);
  const TrainLog log = train(net, data, cfg);
  std::mt19937_64 rng(cfg.seed);
  const TrainingSample& s = data[std::uniform_int_distribution<std::size_t>(0, data.size() - 1)(rng)];
  const AttackTarget t = make_target(respond(s.tracker, s.cur_region).values, s.tracker.bbox_w, s.tracker.bbox_h,
                                     LossKind::L2);
  const double nb = adversarial_loss(respond(s.tracker, norm_blur(s.cur_region, s.prev_region, s.flow, 17)).values, t);
  EXPECT_NEAR(log.records[0].adversarial, nb, 1e-9);
  EXPECT_NEAR(log.records[0].natural, 0.0, 1e-12);
}

TEST(Training, LossDecreasesOverTwoHundredSteps) {
  const auto data = small_training_set();
  TrainConfig cfg;
  cfg.steps = 200;
  PredictorNet net = make_predictor({}, 1);
  const TrainLog log = train(net, data, cfg);
  double early = 0, late = 0;
  for (int i = 0; i < 50; ++i) early += log.records[i].total / 50;
  for (int i = 150; i < 200; ++i) late += log.records[i].total / 50;
  EXPECT_LT(late, early);
}

TEST(Training, NonFiniteLossFailsWithoutUpdating) {
  const auto data = small_training_set();
  TrainConfig cfg;
  cfg.steps = 3;
  PredictorNet net = make_predictor({}, 1);
  net.params[0].data[0] = std::nan("");
  const PredictorNet before = net;
  EXPECT_THROW(train(net, data, cfg), TrainingFailure);
  for (std::size_t k = 1; k < net.params.size(); ++k) EXPECT_EQ(net.params[k].data, before.params[k].data);
}
