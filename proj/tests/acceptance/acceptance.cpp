// Acceptance checks: one PASS/FAIL line per criterion, exit 1 if any fails.
// The benchmark suite is run once and shared by the criteria that read it.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "aba/attack_op.hpp"
#include "aba/attack_os.hpp"
#include "aba/bench.hpp"
#include "aba/blur.hpp"
#include "aba/config.hpp"
#include "aba/flow.hpp"
#include "aba/log.hpp"
#include "aba/oracle.hpp"
#include "aba/scene.hpp"

using namespace aba;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void verdict(int id, bool ok, const std::string& detail) {
  std::printf("criterion %2d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0, double e = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d, e);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

Tensor random_tensor(int c, int h, int w, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(c, h, w);
  for (double& v : t.data) v = u(rng);
  return t;
}

Tensor random_simplex(int k, int h, int w, std::mt19937_64& rng) {
  return project_simplex_l1(random_tensor(k, h, w, rng, 0.05, 1.0));
}

// 1. Full-pipeline gradient against central differences.
void gradient_oracle() {
  const auto t0 = Clock::now();
  const auto r = pipeline_grad_check(8, 3, 1, 1e-3);
  const double s = seconds_since(t0);
  verdict(1, r.max_relative_error < 1e-3 && s < 10.0,
          fmt("max rel err %.3g over %.0f elements in %.2f s", r.max_relative_error, double(r.checked), s));
}

// 2. Vectorised accumulation against a per-pixel triple loop.
void accumulation_oracle() {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  const int ns[] = {2, 3, 5};
  for (int k = 0; k < 100; ++k) {
    const int n = ns[k % 3], ch = k % 2 ? 3 : 1;
    std::vector<Frame> inst;
    for (int i = 0; i < n; ++i) inst.push_back(random_tensor(ch, 8, 8, rng, 0, 1));
    const AccumWeights a{random_simplex(n, 8, 8, rng)};
    const Frame out = accumulate(inst, a);
    for (int c = 0; c < ch; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          double s = 0.0;
          for (int i = 0; i < n; ++i) s += a.planes.at(i, y, x) * inst[i].at(c, y, x);
          worst = std::max(worst, std::abs(s - out.at(c, y, x)));
        }
  }
  verdict(2, worst < 1e-6, fmt("max abs diff %.3g over 100 instances", worst));
}

// 3. Uniform params average the instants; identical frames with zero flow are fixed points.
void uniform_identity() {
  std::mt19937_64 rng(3);
  double mean_err = 0.0, fixed_err = 0.0;
  for (int k = 0; k < 20; ++k) {
    const int n = 2 + k % 16, ch = k % 2 ? 3 : 1;
    const Frame prev = random_tensor(ch, 12, 12, rng, 0, 1), cur = random_tensor(ch, 12, 12, rng, 0, 1);
    FlowField flow(12, 12);
    flow.planes = random_tensor(2, 12, 12, rng, -3, 3);
    const BlurParams uni = uniform_params(n, 12, 12);
    const auto inst = instant_images(prev, cur, flow, uni.ratios);
    Frame mean(ch, 12, 12);
    for (const Frame& f : inst)
      for (std::size_t i = 0; i < mean.size(); ++i) mean.data[i] += f.data[i] / n;
    mean_err = std::max(mean_err, max_abs_diff(blur(cur, prev, flow, uni), mean));

    BlurParams bp;
    bp.n_instants = n;
    bp.ratios.planes = random_simplex(n - 1, 12, 12, rng);
    bp.accum.planes = random_simplex(n, 12, 12, rng);
    fixed_err = std::max(fixed_err, max_abs_diff(blur(cur, cur, FlowField(12, 12), bp), cur));
  }
  verdict(3, mean_err < 1e-6 && fixed_err < 1e-6,
          fmt("uniform vs mean %.3g, identical frames %.3g", mean_err, fixed_err));
}

// 10. Horn–Schunck on global translations up to 3 px.
void flow_sanity() {
  const double moves[][2] = {{1, 0}, {0, 2}, {3, 0}, {0, -3}, {2, -2}, {-1.5, 1}, {-2.5, -1.5}, {0.5, 0.5}};
  double worst = 0.0;
  std::uint64_t seed = 100;
  for (const auto& m : moves) {
    SceneConfig c;
    c.n_frames = 10;
    c.motion.kind = MotionKind::Linear;
    c.motion.vx = c.camera_vx = m[0];
    c.motion.vy = c.camera_vy = m[1];
    const Sequence s = generate_scene(c, seed++);
    for (int k : {1, 4, 8})
      worst = std::max(worst, mean_endpoint_error(estimate_flow(s.frames[k - 1], s.frames[k]), ground_truth_flow(s, k)));
  }
  verdict(10, worst < 0.5, fmt("worst mean EPE %.3f px over 8 translations", worst));
}

struct SuiteRun {
  std::vector<Sequence> seqs;
  std::vector<SuiteResult> results;
  BenchConfig cfg;
};

const SuiteResult& find(const std::vector<SuiteResult>& rs, AttackKind k) {
  for (const auto& r : rs)
    if (r.attack == k) return r;
  throw InternalConsistency("missing attack " + to_string(k));
}

std::string csv_bytes(const std::vector<SuiteResult>& rs, const fs::path& path) {
  write_metrics_csv(path, rs, false);
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Sequence> training_scenes(const RunConfig& rc) {
  std::vector<Sequence> out;
  for (int i = 0; i < rc.train_scenes; ++i) out.push_back(suite_scene(i, rc.train_scene_seed + i));
  return out;
}

}  // namespace

int main() {
  gradient_oracle();
  accumulation_oracle();
  uniform_identity();
  flow_sanity();

  // Shared suite run with the command-line defaults.
  const RunConfig rc;
  SuiteRun run;
  const auto seeds = read_manifest(ABA_MANIFEST);
  for (int i = 0; i < rc.scenes; ++i) run.seqs.push_back(suite_scene(i, seeds.at(i)));
  run.cfg.op = rc.op;
  run.cfg.context = rc.context;

  auto t0 = Clock::now();
  const auto data = make_training_set(training_scenes(rc), rc.train.pairs_per_sequence, rc.seed, rc.op.flow, rc.context);
  PredictorNet net = make_predictor(rc.net, rc.seed);
  TrainConfig tc = rc.train;
  tc.seed = rc.seed;
  train(net, data, tc);
  std::printf("trained predictor: %d steps on %zu samples in %.1f s\n", tc.steps, data.size(), seconds_since(t0));
  run.cfg.net = std::make_shared<PredictorNet>(std::move(net));

  t0 = Clock::now();
  const std::vector<AttackKind> attacks{AttackKind::NormBlur, AttackKind::OpAba, AttackKind::OpAbaWoW,
                                        AttackKind::OpAbaWoA, AttackKind::OsAba};
  run.results = run_suite(run.seqs, rc.tracker_feature, attacks, run.cfg, rc.jobs);
  std::printf("suite: %zu scenes x %zu runs in %.1f s\n", run.seqs.size(), run.results.size(), seconds_since(t0));
  for (const auto& r : run.results)
    std::printf("  %-12s success %.4f  succ_drop %+.4f  prec20 %.4f  prec_drop %+.4f\n", to_string(r.attack).c_str(),
                r.mean.success_auc, r.mean.succ_drop, r.mean.precision20, r.mean.prec_drop);

  // 4. Constraints after every OP iteration and every OS forward pass.
  {
    double worst = 0.0;
    std::size_t checked = 0;
    for (const auto& r : run.results) {
      if (r.attack == AttackKind::None || r.attack == AttackKind::NormBlur) continue;
      for (const auto& tr : r.trajectories)
        for (const auto& f : tr.frames)
          if (f.attacked) {
            worst = std::max(worst, f.max_violation);
            ++checked;
          }
    }
    verdict(4, checked > 0 && worst <= kSimplexTolerance,
            fmt("max violation %.3g over %.0f attacked frames", worst, double(checked)));
  }

  // 5. OP-ABA loss descent.
  {
    std::size_t n = 0, down = 0;
    for (const auto& tr : find(run.results, AttackKind::OpAba).trajectories)
      for (const auto& f : tr.frames)
        if (f.attacked && !f.loss_trace.empty()) {
          ++n;
          down += f.final_loss < f.initial_loss;
        }
    const double frac = n ? double(down) / n : 0.0;
    verdict(5, n > 0 && frac >= 0.9, fmt("loss decreased on %.0f of %.0f attacked frames (%.3f)", double(down), double(n), frac));
  }

  const double d_op = find(run.results, AttackKind::OpAba).mean.succ_drop;
  const double d_wow = find(run.results, AttackKind::OpAbaWoW).mean.succ_drop;
  const double d_woa = find(run.results, AttackKind::OpAbaWoA).mean.succ_drop;
  const double d_norm = find(run.results, AttackKind::NormBlur).mean.succ_drop;
  const double d_os = find(run.results, AttackKind::OsAba).mean.succ_drop;

  // 6. Efficacy ordering.
  verdict(6, d_op >= d_wow && d_wow >= d_woa && d_woa >= d_norm && d_op >= 0.15 && d_norm <= 0.05,
          fmt("drops op %.3f, wo-W %.3f, wo-A %.3f, norm %.3f", d_op, d_wow, d_woa, d_norm));

  // 7. One-step efficacy.
  verdict(7, d_os > 3 * d_norm && d_op >= d_os,
          fmt("os %.3f vs 3 x norm %.3f, op %.3f", d_os, 3 * d_norm, d_op));

  // 8. Latency on identical regions: clean previous frame, ground-truth previous box.
  {
    double op_ms = 0.0, os_ms = 0.0;
    int n = 0;
    for (int s = 0; s < 5; ++s) {
      const Sequence& seq = run.seqs[s];
      const TrackerModel model = init(seq.frames[0], seq.gt_boxes[0], rc.tracker_feature);
      for (int t = 1; t < seq.size(); ++t) {
        if (!is_attack_frame(t + 1, rc.op.attack_every)) continue;
        const auto a = attack_frame(model, seq.frames[t], seq.frames[t - 1], seq.gt_boxes[t - 1], rc.op, rc.context);
        const auto b = os_attack_frame(*run.cfg.net, seq.frames[t], seq.frames[t - 1], seq.gt_boxes[t - 1], rc.op.flow,
                                       rc.context);
        op_ms += a.first.stats.latency_ms;
        os_ms += b.first.latency_ms;
        ++n;
      }
    }
    op_ms /= n;
    os_ms /= n;
    verdict(8, os_ms <= op_ms / 5, fmt("os %.2f ms vs op %.2f ms per frame (ratio %.3f)", os_ms, op_ms, os_ms / op_ms));
  }

  // 9. Transfer: craft on intensity NCC, replay on gradient NCC.
  {
    BenchConfig tc2 = run.cfg;
    tc2.craft_feature = FeatureKind::Intensity;
    const auto tres = run_suite(run.seqs, FeatureKind::GradientMagnitude, {AttackKind::NormBlur, AttackKind::OpAba},
                                tc2, rc.jobs);
    const double t_op = find(tres, AttackKind::OpAba).mean.succ_drop;
    const double t_norm = find(tres, AttackKind::NormBlur).mean.succ_drop;
    verdict(9, t_op > t_norm, fmt("transferred op %.3f vs norm-blur %.3f on the gradient tracker", t_op, t_norm));
  }

  // 11. Determinism on a reduced suite: two independent runs, byte-compared.
  {
    std::vector<Sequence> small(run.seqs.begin(), run.seqs.begin() + 3);
    BenchConfig c = run.cfg;
    const std::vector<AttackKind> kinds{AttackKind::NormBlur, AttackKind::OpAba, AttackKind::OsAba};
    const fs::path dir = fs::temp_directory_path() / "aba_acceptance";
    fs::create_directories(dir);
    const std::string a = csv_bytes(run_suite(small, rc.tracker_feature, kinds, c, 1), dir / "a.csv");
    const std::string b = csv_bytes(run_suite(small, rc.tracker_feature, kinds, c, 1), dir / "b.csv");
    verdict(11, !a.empty() && a == b, fmt("metrics CSV %.0f bytes, runs ", double(a.size())) + (a == b ? "identical" : "differ"));
  }

  std::printf("%d criteria failed\n", failures);
  return failures ? 1 : 0;
}
