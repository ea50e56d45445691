// aba: command-line front end for flow, blur synthesis, both attacks,
// predictor training, gradient checks, benchmarking and reports.
//
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "aba/attack_op.hpp"
#include "aba/attack_os.hpp"
#include "aba/bench.hpp"
#include "aba/blur.hpp"
#include "aba/config.hpp"
#include "aba/flow.hpp"
#include "aba/image_io.hpp"
#include "aba/log.hpp"
#include "aba/oracle.hpp"
#include "aba/report.hpp"
#include "aba/scene.hpp"

namespace fs = std::filesystem;
using namespace aba;

namespace {

struct Globals {
  std::string config_path;
  std::vector<std::string> sets;
  bool dump = false;
  // Flag overrides, applied as key=value after the config file.
  std::vector<std::pair<std::string, std::string>> overrides;
};

/// Binds a CLI option that writes through to config key `key`.
void bind_key(CLI::App* app, Globals& g, const std::string& flag, const std::string& key, const std::string& help) {
  app->add_option_function<std::string>(
      flag, [&g, key](const std::string& v) { g.overrides.emplace_back(key, v); }, help + " [" + key + "]");
}

RunConfig effective_config(const Globals& g) {
  RunConfig c;
  if (!g.config_path.empty()) c = load_config(g.config_path);
  for (const auto& s : g.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got '" + s + "'");
    set_key(c, s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [k, v] : g.overrides) set_key(c, k, v);
  c.validate();
  return c;
}

std::vector<Sequence> suite(const RunConfig& c) {
  std::vector<std::uint64_t> seeds;
  if (!c.manifest.empty()) {
    seeds = read_manifest(c.manifest);
  } else {
    for (int i = 0; i < c.scenes; ++i) seeds.push_back(1000 + static_cast<std::uint64_t>(i));
  }
  require(static_cast<int>(seeds.size()) >= c.scenes,
          "manifest lists " + std::to_string(seeds.size()) + " seeds, fewer than bench.scenes");
  std::vector<Sequence> out;
  for (int i = 0; i < c.scenes; ++i) out.push_back(suite_scene(i, seeds[i]));
  return out;
}

std::vector<Sequence> training_scenes(const RunConfig& c) {
  std::vector<Sequence> out;
  for (int i = 0; i < c.train_scenes; ++i) out.push_back(suite_scene(i, c.train_scene_seed + i));
  return out;
}

PredictorNet train_predictor(const RunConfig& c, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  auto data = make_training_set(training_scenes(c), c.train.pairs_per_sequence, c.seed, c.op.flow, c.context);
  PredictorNet net = make_predictor(c.net, c.seed);
  std::ofstream logf(out_dir / "train_log.csv");
  logf << "step,L_adv,L_natural,total\n";
  char buf[160];
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  try {
    train(net, data, tc, [&](const TrainRecord& r) {
      std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", r.step, r.adversarial, r.natural, r.total);
      logf << buf;
      if (r.step % 100 == 0) log::info("train step " + std::to_string(r.step) + " loss " + std::to_string(r.total));
    });
  } catch (const TrainingFailure&) {
    write_checkpoint(out_dir / "net.jama", net);
    throw;
  }
  write_checkpoint(out_dir / "net.jama", net);
  return net;
}

Sequence source_sequence(const std::string& seq_dir, const RunConfig& c) {
  if (!seq_dir.empty()) return load_sequence(seq_dir);
  return suite_scene(0, c.seed);
}

void write_attack_stats(std::ostream& out, const std::string& prefix, int frame, const FrameRecord& r) {
  char buf[200];
  for (std::size_t k = 0; k < r.loss_trace.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%s%d,%zu,%.9g,%d,%d\n", prefix.c_str(), frame, k, r.loss_trace[k],
                  r.argmax_trace[k].first, r.argmax_trace[k].second);
    out << buf;
  }
}

int cmd_flow(const RunConfig& c, const std::string& prev, const std::string& cur, const std::string& out) {
  const FlowField f = estimate_flow(io::read_image(prev), io::read_image(cur), c.op.flow);
  write_flow(out, f);
  double mx = 0, my = 0;
  for (int y = 0; y < f.height(); ++y)
    for (int x = 0; x < f.width(); ++x) {
      mx += f.dx(y, x);
      my += f.dy(y, x);
    }
  const double n = static_cast<double>(f.height()) * f.width();
  std::printf("flow %dx%d mean (%.4f, %.4f) -> %s\n", f.height(), f.width(), mx / n, my / n, out.c_str());
  return 0;
}

int cmd_blur(const RunConfig& c, const std::string& prev_p, const std::string& cur_p, const std::string& mode,
             const std::string& params_p, const std::string& flow_p, const std::string& out) {
  const Frame prev = io::read_image(prev_p), cur = io::read_image(cur_p);
  const FlowField flow = flow_p.empty() ? estimate_flow(prev, cur, c.op.flow) : read_flow(flow_p);
  Frame result;
  if (mode == "norm") {
    result = norm_blur(cur, prev, flow, c.op.n_instants);
  } else if (mode == "params") {
    require(!params_p.empty(), "blur --mode params needs --params");
    const BlurParams bp = read_params(params_p);
    require(satisfies_constraints(bp, 1e-3), "blur: parameter file violates the simplex constraints");
    result = blur(cur, prev, flow, bp, c.op.blur);
  } else {
    throw InvalidArgument("blur: unknown mode '" + mode + "' (expected norm|params)");
  }
  io::write_image(out, result);
  std::printf("blurred frame -> %s\n", out.c_str());
  return 0;
}

int cmd_attack_op(const RunConfig& c, const std::string& seq_dir, int frame, const std::string& freeze) {
  const Sequence s = source_sequence(seq_dir, c);
  require(frame >= 2 && frame <= s.size(), "attack-op: --frame must be in [2, " + std::to_string(s.size()) + "]");
  OpAttackConfig op = c.op;
  if (freeze == "ratios") op = ablation_variant(op, Freeze::Ratios);
  else if (freeze == "accum") op = ablation_variant(op, Freeze::Accum);
  else require(freeze == "none", "attack-op: --freeze must be none|ratios|accum");
  const TrackerModel m = init(s.frames[0], s.gt_boxes[0], c.tracker_feature);
  auto [res, region] = attack_frame(m, s.frames[frame - 1], s.frames[frame - 2], s.gt_boxes[frame - 2], op, c.context);
  const fs::path out(c.out);
  fs::create_directories(out);
  io::write_png(out / "attack_op_region.png", res.blurred_region);
  write_params(out / "attack_op_params.bprm", res.params);
  std::ofstream st(out / "attack_op_stats.csv");
  st << "frame_index,iter,loss,argmax_row,argmax_col\n";
  FrameRecord rec;
  rec.loss_trace = res.stats.loss_trace;
  rec.argmax_trace = res.stats.argmax_trace;
  write_attack_stats(st, "", frame, rec);
  std::printf("op-aba frame %d: loss %.6f -> %.6f, max constraint violation %.3g, %.1f ms\n", frame,
              res.stats.initial_loss, res.stats.final_loss, res.stats.max_constraint_violation, res.stats.latency_ms);
  return 0;
}

int cmd_attack_os(const RunConfig& c, const std::string& seq_dir, int frame) {
  require(!c.net_path.empty(), "attack-os: --net is required");
  const PredictorNet net = read_checkpoint(c.net_path);
  const Sequence s = source_sequence(seq_dir, c);
  require(frame >= 2 && frame <= s.size(), "attack-os: --frame must be in [2, " + std::to_string(s.size()) + "]");
  auto [res, region] = os_attack_frame(net, s.frames[frame - 1], s.frames[frame - 2], s.gt_boxes[frame - 2],
                                       c.op.flow, c.context);
  const fs::path out(c.out);
  fs::create_directories(out);
  io::write_png(out / "attack_os_region.png", res.blurred_region);
  write_params(out / "attack_os_params.bprm", res.params);
  std::printf("os-aba frame %d: %.1f ms\n", frame, res.latency_ms);
  return 0;
}

int cmd_train(const RunConfig& c) {
  const PredictorNet net = train_predictor(c, c.out);
  std::printf("trained %zu parameters for %d steps -> %s\n", net.parameter_count(), c.train.steps,
              (fs::path(c.out) / "net.jama").string().c_str());
  return 0;
}

int cmd_bench(const RunConfig& c) {
  const fs::path out(c.out);
  fs::create_directories(out);
  const auto seqs = suite(c);
  BenchConfig bc;
  bc.op = c.op;
  bc.context = c.context;
  bc.keep_regions = c.dump_frames;
  const bool need_net = std::find(c.attacks.begin(), c.attacks.end(), AttackKind::OsAba) != c.attacks.end();
  if (need_net) {
    if (!c.net_path.empty()) {
      bc.net = std::make_shared<PredictorNet>(read_checkpoint(c.net_path));
    } else {
      log::info("no predictor given; training one (" + std::to_string(c.train.steps) + " steps)");
      bc.net = std::make_shared<PredictorNet>(train_predictor(c, out));
    }
  }
  log::info("bench: " + std::to_string(seqs.size()) + " sequences");
  const auto results = run_suite(seqs, c.tracker_feature, c.attacks, bc, c.jobs);
  write_metrics_csv(out / "metrics.csv", results, c.timing);
  write_frames_csv(out / "frames.csv", results, seqs);
  std::ofstream st(out / "attack_stats.csv");
  st << "sequence,attack,frame_index,iter,loss,argmax_row,argmax_col\n";
  for (const auto& r : results)
    for (const auto& tr : r.trajectories) {
      if (!tr.error.empty()) log::error(tr.sequence + " (" + to_string(r.attack) + "): " + tr.error);
      for (std::size_t f = 0; f < tr.frames.size(); ++f)
        write_attack_stats(st, tr.sequence + "," + to_string(r.attack) + ",", static_cast<int>(f + 1), tr.frames[f]);
      if (c.dump_frames)
        for (std::size_t f = 0; f < tr.regions.size(); ++f) {
          const fs::path d = out / "regions" / to_string(r.attack) / tr.sequence;
          fs::create_directories(d);
          io::write_png(d / frame_file_name(static_cast<int>(f + 1)), tr.regions[f].pixels);
        }
    }
  if (c.transfer) {
    // Craft on the intensity tracker, replay on the gradient-feature tracker.
    BenchConfig tc = bc;
    tc.craft_feature = FeatureKind::Intensity;
    std::vector<AttackKind> kinds;
    for (auto k : c.attacks)
      if (k != AttackKind::OsAba) kinds.push_back(k);
    const auto tres = run_suite(seqs, FeatureKind::GradientMagnitude, kinds, tc, c.jobs);
    write_metrics_csv(out / "transfer_metrics.csv", tres, c.timing);
  }
  std::printf("%s", emit_report(out).c_str());
  return 0;
}

int cmd_gradcheck(int size, int n, std::uint64_t seed) {
  const auto r = pipeline_grad_check(size, n, seed);
  std::printf("max relative error %.6g over %zu elements (worst: %s[%zu], analytic %.6g, numeric %.6g)\n",
              r.max_relative_error, r.checked, r.worst.first == 0 ? "W" : "A", r.worst.second, r.worst_analytic,
              r.worst_numeric);
  return r.max_relative_error < 1e-3 ? 0 : 2;
}

int cmd_gen_scenes(const RunConfig& c) {
  const fs::path out(c.out);
  for (const auto& s : suite(c)) {
    save_sequence(out / s.name, s);
    for (std::size_t k = 0; k < s.gt_flow.size(); ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "flow_%06zu.flo", k + 2);
      write_flow(out / s.name / name, s.gt_flow[k]);
    }
  }
  std::printf("%d scenes -> %s\n", c.scenes, out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial motion-blur attacks on a template tracker"};
  app.set_help_all_flag("--help-all");
  Globals g;
  app.add_option("--config", g.config_path, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.sets, "override a config key (key=value), repeatable");
  bind_key(&app, g, "--seed", "seed", "random seed");
  bind_key(&app, g, "--jobs", "jobs", "parallel sequences for bench");
  app.add_flag("--dump-config", g.dump, "print the effective config and exit");
  app.require_subcommand(0, 1);

  auto* flow = app.add_subcommand("flow", "estimate Horn–Schunck flow between two images");
  std::string prev, cur, out_file;
  flow->add_option("--prev", prev, "previous frame")->required()->check(CLI::ExistingFile);
  flow->add_option("--cur", cur, "current frame")->required()->check(CLI::ExistingFile);
  flow->add_option("--out", out_file, "output .flo file")->required();
  bind_key(flow, g, "--levels", "flow.levels", "pyramid levels");
  bind_key(flow, g, "--alpha", "flow.alpha", "smoothness weight");

  auto* blur = app.add_subcommand("blur", "synthesise a blurred frame");
  std::string mode = "norm", params_file, flow_file;
  blur->add_option("--prev", prev, "previous frame")->required()->check(CLI::ExistingFile);
  blur->add_option("--cur", cur, "current frame")->required()->check(CLI::ExistingFile);
  blur->add_option("--mode", mode, "norm | params");
  blur->add_option("--params", params_file, "BPRMv1 parameter file for --mode params");
  blur->add_option("--flow", flow_file, "FLOWv1 flow file (estimated when absent)");
  blur->add_option("--out", out_file, "output image")->required();
  bind_key(blur, g, "--n", "attack.n", "number of instants");

  std::string seq_dir, freeze = "none";
  int frame = 2;
  auto* aop = app.add_subcommand("attack-op", "iterative attack on one frame");
  aop->add_option("--seq", seq_dir, "sequence directory (synthetic scene when absent)");
  aop->add_option("--frame", frame, "1-based frame index (>= 2)");
  aop->add_option("--freeze", freeze, "none | ratios | accum");
  bind_key(aop, g, "--iters", "attack.iters", "iterations");
  bind_key(aop, g, "--n", "attack.n", "number of instants");
  bind_key(aop, g, "--loss", "attack.loss", "l2 | cross-entropy");
  bind_key(aop, g, "--out", "out", "output directory");

  auto* aos = app.add_subcommand("attack-os", "one-step attack on one frame");
  aos->add_option("--seq", seq_dir, "sequence directory (synthetic scene when absent)");
  aos->add_option("--frame", frame, "1-based frame index (>= 2)");
  bind_key(aos, g, "--net", "net.path", "predictor checkpoint");
  bind_key(aos, g, "--out", "out", "output directory");

  auto* tr = app.add_subcommand("train", "train the one-step predictor on synthetic scenes");
  bind_key(tr, g, "--steps", "train.steps", "optimizer steps");
  bind_key(tr, g, "--out", "out", "output directory");

  auto* bench = app.add_subcommand("bench", "run the benchmark suite");
  bind_key(bench, g, "--scenes", "bench.scenes", "number of suite scenes");
  bind_key(bench, g, "--attack", "bench.attacks", "comma list of attacks");
  bind_key(bench, g, "--iters", "attack.iters", "attack iterations");
  bind_key(bench, g, "--n", "attack.n", "number of instants");
  bind_key(bench, g, "--out", "out", "output directory");
  bind_key(bench, g, "--net", "net.path", "predictor checkpoint for os-aba");
  bind_key(bench, g, "--manifest", "bench.manifest", "seed manifest");
  bind_key(bench, g, "--transfer", "bench.transfer", "also run the transfer protocol (true|false)");
  bind_key(bench, g, "--timing", "bench.timing", "write latency to metrics.csv (true|false)");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the attack gradients");
  int gc_size = 8, gc_n = 3;
  gc->add_option("--size", gc_size, "region side");
  gc->add_option("--n", gc_n, "number of instants");

  auto* gen = app.add_subcommand("gen-scenes", "write the synthetic suite to disk");
  bind_key(gen, g, "--scenes", "bench.scenes", "number of scenes");
  bind_key(gen, g, "--manifest", "bench.manifest", "seed manifest");
  bind_key(gen, g, "--out", "out", "output directory");

  auto* rep = app.add_subcommand("report", "summary table and plots from bench results");
  std::string results_dir;
  rep->add_option("--results", results_dir, "bench output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  RunConfig cfg;
  try {
    cfg = effective_config(g);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }
  if (g.dump) {
    std::cout << dump_config(cfg);
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return 1;
  }

  try {
    if (*flow) return cmd_flow(cfg, prev, cur, out_file);
    if (*blur) return cmd_blur(cfg, prev, cur, mode, params_file, flow_file, out_file);
    if (*aop) return cmd_attack_op(cfg, seq_dir, frame, freeze);
    if (*aos) return cmd_attack_os(cfg, seq_dir, frame);
    if (*tr) return cmd_train(cfg);
    if (*bench) return cmd_bench(cfg);
    if (*gc) return cmd_gradcheck(gc_size, gc_n, cfg.seed);
    if (*gen) return cmd_gen_scenes(cfg);
    if (*rep) {
      std::printf("%s", emit_report(results_dir).c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    log::error(e.what());
    return 2;
  }
  return 1;
}
