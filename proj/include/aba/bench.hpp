#pragma once

// End-to-end tracking runs with optional attacks and the OPE-style metrics.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "aba/attack_op.hpp"
#include "aba/attack_os.hpp"
#include "aba/scene.hpp"
#include "aba/tracker.hpp"

namespace aba {

enum class AttackKind { None, NormBlur, OpAba, OpAbaWoW, OpAbaWoA, OsAba };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::None: return "none";
    case AttackKind::NormBlur: return "norm-blur";
    case AttackKind::OpAba: return "op-aba";
    case AttackKind::OpAbaWoW: return "op-aba-wo-W";
    case AttackKind::OpAbaWoA: return "op-aba-wo-A";
    default: return "os-aba";
  }
}

inline AttackKind parse_attack_kind(const std::string& s) {
  for (auto k : {AttackKind::None, AttackKind::NormBlur, AttackKind::OpAba, AttackKind::OpAbaWoW,
                 AttackKind::OpAbaWoA, AttackKind::OsAba})
    if (s == to_string(k)) return k;
  throw InvalidArgument("unknown attack '" + s + "' (expected none|norm-blur|op-aba|op-aba-wo-W|op-aba-wo-A|os-aba)");
}

struct BenchConfig {
  OpAttackConfig op;
  double context = 2.5;
  /// Trained predictor for os-aba.
  std::shared_ptr<const PredictorNet> net;
  /// Transfer mode: craft against a tracker with this feature, replay on the victim.
  std::optional<FeatureKind> craft_feature;
  /// Keep blurred regions for dumping.
  bool keep_regions = false;

  void validate() const {
    op.validate();
    require(context >= 1.5, "BenchConfig: context must be >= 1.5");
  }
};

struct FrameRecord {
  bool attacked = false;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double latency_ms = 0.0;
  double max_violation = 0.0;
  std::vector<double> loss_trace;
  std::vector<std::pair<int, int>> argmax_trace;
};

struct Trajectory {
  std::string sequence;
  AttackKind attack = AttackKind::None;
  std::vector<BBox> boxes;
  std::vector<FrameRecord> frames;
  std::vector<SearchRegion> regions;  // fed to the tracker, when kept
  std::string error;                  // non-empty when the run aborted early
};

namespace detail {

inline bool attacks_frame(AttackKind k, int frame_index_1based, int every) {
  switch (k) {
    case AttackKind::None: return false;
    case AttackKind::NormBlur:
    case AttackKind::OsAba: return frame_index_1based >= 2;
    default: return is_attack_frame(frame_index_1based, every);
  }
}

inline OpAttackConfig op_variant(AttackKind k, const OpAttackConfig& c) {
  if (k == AttackKind::OpAbaWoW) return ablation_variant(c, Freeze::Ratios);
  if (k == AttackKind::OpAbaWoA) return ablation_variant(c, Freeze::Accum);
  return c;
}

inline void paste(Frame& dst, const Frame& src, const RegionTransform& tr) {
  for (int c = 0; c < dst.channels; ++c)
    for (int y = 0; y < src.height; ++y) {
      const int fy = tr.y0 + y;
      if (fy < 0 || fy >= dst.height) continue;
      for (int x = 0; x < src.width; ++x) {
        const int fx = tr.x0 + x;
        if (fx >= 0 && fx < dst.width) dst.at(c, fy, fx) = src.at(c, y, x);
      }
    }
}

}  // namespace detail

/// Tracks `seq` with a tracker of `victim` features, attacking per `attack`.
inline Trajectory run_tracking(FeatureKind victim, const Sequence& seq, AttackKind attack, const BenchConfig& cfg) {
  cfg.validate();
  require(seq.size() >= 2, "run_tracking: sequence too short");
  if (attack == AttackKind::OsAba) require(cfg.net != nullptr, "run_tracking: os-aba needs a trained predictor");
  Trajectory tr;
  tr.sequence = seq.name;
  tr.attack = attack;
  const TrackerModel model = init(seq.frames[0], seq.gt_boxes[0], victim);
  const TrackerModel craft = cfg.craft_feature ? init(seq.frames[0], seq.gt_boxes[0], *cfg.craft_feature) : model;
  const OpAttackConfig op = detail::op_variant(attack, cfg.op);

  tr.boxes.push_back(seq.gt_boxes[0]);
  tr.frames.emplace_back();
  if (cfg.keep_regions) tr.regions.push_back(crop_search_region(seq.frames[0], seq.gt_boxes[0], cfg.context));
  // What the tracker saw at t-1, used as prev when chaining blurred frames.
  Frame shown_prev = seq.frames[0];
  for (int t = 1; t < seq.size(); ++t) {
    const BBox prev_box = tr.boxes.back();
    const Frame& cur = seq.frames[t];
    const Frame& prev = op.chain_prev_blurred ? shown_prev : seq.frames[t - 1];
    FrameRecord rec;
    SearchRegion region;
    try {
      if (detail::attacks_frame(attack, t + 1, op.attack_every)) {
        rec.attacked = true;
        const auto t0 = std::chrono::steady_clock::now();
        if (attack == AttackKind::NormBlur) {
          region = crop_search_region(cur, prev_box, cfg.context);
          const SearchRegion pr = crop_search_region(prev, prev_box, cfg.context);
          const FlowField flow = estimate_flow(pr.pixels, region.pixels, op.flow);
          region.pixels = norm_blur(region.pixels, pr.pixels, flow, op.n_instants);
        } else if (attack == AttackKind::OsAba) {
          auto [res, r] = os_attack_frame(*cfg.net, cur, prev, prev_box, op.flow, cfg.context);
          rec.max_violation = std::max(simplex_violation(res.params.ratios.planes),
                                       simplex_violation(res.params.accum.planes));
          region = std::move(r);
          region.pixels = std::move(res.blurred_region);
        } else {
          auto [res, r] = attack_frame(craft, cur, prev, prev_box, op, cfg.context);
          rec.initial_loss = res.stats.initial_loss;
          rec.final_loss = res.stats.final_loss;
          rec.max_violation = res.stats.max_constraint_violation;
          rec.loss_trace = std::move(res.stats.loss_trace);
          rec.argmax_trace = std::move(res.stats.argmax_trace);
          region = std::move(r);
          region.pixels = std::move(res.blurred_region);
        }
        rec.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      } else {
        region = crop_search_region(cur, prev_box, cfg.context);
      }
      tr.boxes.push_back(locate(respond(model, region), model, cur.height, cur.width));
    } catch (const std::exception& e) {
      tr.error = "frame " + std::to_string(t + 1) + ": " + e.what();
      break;
    }
    if (op.chain_prev_blurred) {
      shown_prev = cur;
      detail::paste(shown_prev, region.pixels, region.transform);
    }
    tr.frames.push_back(std::move(rec));
    if (cfg.keep_regions) tr.regions.push_back(std::move(region));
  }
  return tr;
}

// Metrics ---------------------------------------------------------------------

inline void check_lengths(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  require(pred.size() == gt.size() && !gt.empty(), "metrics: prediction and ground truth lengths differ");
}

inline double precision(const std::vector<BBox>& pred, const std::vector<BBox>& gt, double threshold_px = 20.0) {
  check_lengths(pred, gt);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) hits += center_error(pred[i], gt[i]) <= threshold_px;
  return static_cast<double>(hits) / gt.size();
}

inline constexpr int kSuccessThresholds = 101;

/// IoU > tau, except that exact overlap also passes the last threshold (tau = 1),
/// so a perfect track scores 1.
inline bool overlap_passes(double iou_value, int k) {
  const double tau = k / 100.0;
  return iou_value > tau || (k == kSuccessThresholds - 1 && iou_value >= 1.0 - 1e-12);
}

inline std::vector<double> success_curve(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  check_lengths(pred, gt);
  std::vector<double> ious(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) ious[i] = iou(pred[i], gt[i]);
  std::vector<double> curve(kSuccessThresholds);
  for (int k = 0; k < kSuccessThresholds; ++k) {
    std::size_t n = 0;
    for (double v : ious) n += overlap_passes(v, k);
    curve[k] = static_cast<double>(n) / gt.size();
  }
  return curve;
}

inline double success_auc(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  const auto c = success_curve(pred, gt);
  double s = 0.0;
  for (double v : c) s += v;
  return s / c.size();
}

/// Precision at thresholds 0..50 px.
inline std::vector<double> precision_curve(const std::vector<BBox>& pred, const std::vector<BBox>& gt) {
  std::vector<double> c;
  for (int th = 0; th <= 50; ++th) c.push_back(precision(pred, gt, th));
  return c;
}

struct MetricsReport {
  std::vector<std::string> sequences;
  double precision20 = 0.0;
  double success_auc = 0.0;
  double prec_drop = 0.0;
  double succ_drop = 0.0;
  double ms_per_frame = 0.0;
};

inline MetricsReport evaluate(const Trajectory& tr, const std::vector<BBox>& gt) {
  MetricsReport r;
  r.sequences = {tr.sequence};
  // An aborted run counts its missing frames as failures.
  std::vector<BBox> pred = tr.boxes;
  while (pred.size() < gt.size()) pred.push_back(BBox{-1e6, -1e6, gt.front().w, gt.front().h});
  r.precision20 = precision(pred, gt);
  r.success_auc = success_auc(pred, gt);
  double ms = 0.0;
  int n = 0;
  for (const auto& f : tr.frames)
    if (f.attacked) {
      ms += f.latency_ms;
      ++n;
    }
  r.ms_per_frame = n ? ms / n : 0.0;
  return r;
}

inline MetricsReport report_drops(const MetricsReport& baseline, const MetricsReport& attacked) {
  require(baseline.sequences == attacked.sequences, "report_drops: reports cover different sequence sets");
  MetricsReport r = attacked;
  r.prec_drop = baseline.precision20 - attacked.precision20;
  r.succ_drop = baseline.success_auc - attacked.success_auc;
  return r;
}

/// Mean over per-sequence reports.
inline MetricsReport mean_report(const std::vector<MetricsReport>& rs) {
  require(!rs.empty(), "mean_report: no reports");
  MetricsReport m;
  for (const auto& r : rs) {
    m.sequences.insert(m.sequences.end(), r.sequences.begin(), r.sequences.end());
    m.precision20 += r.precision20;
    m.success_auc += r.success_auc;
    m.prec_drop += r.prec_drop;
    m.succ_drop += r.succ_drop;
    m.ms_per_frame += r.ms_per_frame;
  }
  const double n = static_cast<double>(rs.size());
  m.precision20 /= n;
  m.success_auc /= n;
  m.prec_drop /= n;
  m.succ_drop /= n;
  m.ms_per_frame /= n;
  return m;
}

// Suite runs ------------------------------------------------------------------

/// Seeds from a manifest: one integer per line, '#' starts a comment.
inline std::vector<std::uint64_t> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string() + ": missing");
  std::vector<std::uint64_t> seeds;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::istringstream is(line);
    std::uint64_t v;
    if (!(is >> v)) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw LoadError(path.string() + ":" + std::to_string(lineno) + ": expected a seed");
      continue;
    }
    seeds.push_back(v);
  }
  return seeds;
}

inline Sequence suite_scene(int index, std::uint64_t seed) {
  Sequence s = generate_scene(suite_scene_config(index, seed), seed);
  s.name = "suite-" + std::to_string(index + 1);
  return s;
}

/// Runs `fn(i)` for i in [0, n) on up to `jobs` threads. Results land by index.
template <class Fn>
void parallel_for(int n, int jobs, Fn&& fn) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j)
    pool.emplace_back([&] {
      for (int i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lk(mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

struct SuiteResult {
  AttackKind attack;
  std::vector<Trajectory> trajectories;
  std::vector<MetricsReport> per_sequence;  // with drops vs the clean run
  MetricsReport mean;
};

/// Runs `attacks` (and the clean baseline) over every sequence.
inline std::vector<SuiteResult> run_suite(const std::vector<Sequence>& seqs, FeatureKind victim,
                                          const std::vector<AttackKind>& attacks, const BenchConfig& cfg, int jobs = 1) {
  std::vector<AttackKind> kinds{AttackKind::None};
  for (auto k : attacks)
    if (k != AttackKind::None) kinds.push_back(k);
  std::vector<SuiteResult> out(kinds.size());
  for (std::size_t a = 0; a < kinds.size(); ++a) {
    out[a].attack = kinds[a];
    out[a].trajectories.resize(seqs.size());
  }
  const int n = static_cast<int>(seqs.size() * kinds.size());
  parallel_for(n, jobs, [&](int i) {
    const std::size_t a = i / seqs.size(), s = i % seqs.size();
    BenchConfig c = cfg;
    if (kinds[a] == AttackKind::None) c.craft_feature.reset();
    out[a].trajectories[s] = run_tracking(victim, seqs[s], kinds[a], c);
  });
  for (auto& r : out) {
    for (std::size_t s = 0; s < seqs.size(); ++s) {
      const auto base = evaluate(out[0].trajectories[s], seqs[s].gt_boxes);
      r.per_sequence.push_back(report_drops(base, evaluate(r.trajectories[s], seqs[s].gt_boxes)));
    }
    r.mean = mean_report(r.per_sequence);
  }
  return out;
}

/// Columns: sequence, attack, precision20, success_auc, prec_drop, succ_drop, ms_per_frame.
/// Latency is wall-clock, so it is written only when `with_timing` is set ("NA" otherwise)
/// to keep the file reproducible byte for byte.
inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<SuiteResult>& results,
                              bool with_timing) {
  std::ofstream out(path);
  if (!out) throw LoadError(path.string() + ": cannot write");
  out << "sequence,attack,precision20,success_auc,prec_drop,succ_drop,ms_per_frame\n";
  char buf[256];
  auto row = [&](const std::string& name, AttackKind k, const MetricsReport& m) {
    std::string ms = "NA";
    if (with_timing) {
      char t[32];
      std::snprintf(t, sizeof t, "%.3f", m.ms_per_frame);
      ms = t;
    }
    std::snprintf(buf, sizeof buf, "%s,%s,%.6f,%.6f,%.6f,%.6f,%s\n", name.c_str(), to_string(k).c_str(),
                  m.precision20, m.success_auc, m.prec_drop, m.succ_drop, ms.c_str());
    out << buf;
  };
  for (const auto& r : results) {
    for (const auto& m : r.per_sequence) row(m.sequences.front(), r.attack, m);
    row("mean", r.attack, r.mean);
  }
}

/// Per-frame CLE and IoU for every run.
inline void write_frames_csv(const std::filesystem::path& path, const std::vector<SuiteResult>& results,
                             const std::vector<Sequence>& seqs) {
  std::ofstream out(path);
  if (!out) throw LoadError(path.string() + ": cannot write");
  out << "sequence,attack,frame,cle,iou,attacked,initial_loss,final_loss\n";
  char buf[256];
  for (const auto& r : results)
    for (std::size_t s = 0; s < seqs.size(); ++s) {
      const auto& tr = r.trajectories[s];
      for (std::size_t f = 0; f < tr.boxes.size(); ++f) {
        const FrameRecord& fr = tr.frames[f];
        std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.4f,%.4f,%d,%.6f,%.6f\n", seqs[s].name.c_str(),
                      to_string(r.attack).c_str(), f + 1, center_error(tr.boxes[f], seqs[s].gt_boxes[f]),
                      iou(tr.boxes[f], seqs[s].gt_boxes[f]), fr.attacked ? 1 : 0, fr.initial_loss, fr.final_loss);
        out << buf;
      }
    }
}

/// Training triples from synthetic sequences: `pairs` adjacent pairs per
/// sequence, regions cropped around the ground-truth box of the earlier frame.
inline std::vector<TrainingSample> make_training_set(const std::vector<Sequence>& seqs, int pairs, std::uint64_t seed,
                                                     const FlowConfig& flow_cfg, double context = 2.5) {
  std::mt19937_64 rng(seed);
  std::vector<TrainingSample> out;
  for (const auto& s : seqs) {
    const TrackerModel tracker = init(s.frames[0], s.gt_boxes[0], FeatureKind::Intensity);
    std::uniform_int_distribution<int> pick(1, s.size() - 1);
    for (int k = 0; k < pairs; ++k) {
      const int t = pick(rng);
      const BBox& box = s.gt_boxes[t - 1];
      TrainingSample ts{tracker, crop_search_region(s.frames[t - 1], box, context).pixels,
                        crop_search_region(s.frames[t], box, context).pixels, FlowField(1, 1)};
      ts.flow = estimate_flow(ts.prev_region, ts.cur_region, flow_cfg);
      out.push_back(std::move(ts));
    }
  }
  return out;
}

}  // namespace aba
