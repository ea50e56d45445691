#pragma once

// Flat `key = value` run configuration. Lines starting with '#' (or the part
// of a line after '#') are comments. Unknown keys are rejected and every
// bound is re-validated after parsing.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "aba/attack_op.hpp"
#include "aba/attack_os.hpp"
#include "aba/bench.hpp"
#include "aba/error.hpp"

namespace aba {

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out = "results";
  int jobs = 1;

  OpAttackConfig op;  // op.flow is the flow configuration for every command
  FeatureKind tracker_feature = FeatureKind::Intensity;
  double context = 2.5;

  PredictorConfig net;
  TrainConfig train;
  int train_scenes = 20;
  std::uint64_t train_scene_seed = 50000;
  std::string net_path;

  int scenes = 20;
  std::string manifest;
  std::vector<AttackKind> attacks{AttackKind::NormBlur, AttackKind::OpAba, AttackKind::OpAbaWoW,
                                  AttackKind::OpAbaWoA};
  bool transfer = false;
  bool timing = false;
  bool dump_frames = false;

  void validate() const {
    require(jobs >= 1, "jobs must be >= 1");
    require(scenes >= 1, "scenes must be >= 1");
    require(train_scenes >= 1, "train.scenes must be >= 1");
    require(context >= 1.5, "tracker.context must be >= 1.5");
    op.validate();
    net.validate();
    train.validate();
    require(net.n_instants == op.n_instants, "net.n and attack.n must agree");
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double d;
  try {
    d = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw InvalidArgument(key + ": expected a number, got '" + v + "'");
  }
  if (pos != v.size()) throw InvalidArgument(key + ": expected a number, got '" + v + "'");
  return d;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long d;
  try {
    d = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw InvalidArgument(key + ": expected an integer, got '" + v + "'");
  }
  if (pos != v.size()) throw InvalidArgument(key + ": expected an integer, got '" + v + "'");
  return d;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InvalidArgument(key + ": expected true|false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ',')) {
    const auto b = item.find_first_not_of(" \t"), e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r"), e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

inline const std::vector<Field>& fields() {
  using C = RunConfig;
  static const std::vector<Field> f = {
      {"seed", [](const C& c) { return std::to_string(c.seed); },
       [](C& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(parse_int("seed", v)); }},
      {"out", [](const C& c) { return c.out; }, [](C& c, const std::string& v) { c.out = v; }},
      {"jobs", [](const C& c) { return std::to_string(c.jobs); },
       [](C& c, const std::string& v) { c.jobs = static_cast<int>(parse_int("jobs", v)); }},
      {"flow.alpha", [](const C& c) { return fmt_double(c.op.flow.smoothness_alpha); },
       [](C& c, const std::string& v) { c.op.flow.smoothness_alpha = parse_double("flow.alpha", v); }},
      {"flow.iterations", [](const C& c) { return std::to_string(c.op.flow.iterations); },
       [](C& c, const std::string& v) { c.op.flow.iterations = static_cast<int>(parse_int("flow.iterations", v)); }},
      {"flow.levels", [](const C& c) { return std::to_string(c.op.flow.pyramid_levels); },
       [](C& c, const std::string& v) { c.op.flow.pyramid_levels = static_cast<int>(parse_int("flow.levels", v)); }},
      {"attack.n", [](const C& c) { return std::to_string(c.op.n_instants); },
       [](C& c, const std::string& v) { c.net.n_instants = c.op.n_instants = static_cast<int>(parse_int("attack.n", v)); }},
      {"attack.iters", [](const C& c) { return std::to_string(c.op.iterations); },
       [](C& c, const std::string& v) { c.op.iterations = static_cast<int>(parse_int("attack.iters", v)); }},
      {"attack.step_w", [](const C& c) { return fmt_double(c.op.step_ratios); },
       [](C& c, const std::string& v) { c.op.step_ratios = parse_double("attack.step_w", v); }},
      {"attack.step_a", [](const C& c) { return fmt_double(c.op.step_accum); },
       [](C& c, const std::string& v) { c.op.step_accum = parse_double("attack.step_a", v); }},
      {"attack.every", [](const C& c) { return std::to_string(c.op.attack_every); },
       [](C& c, const std::string& v) { c.op.attack_every = static_cast<int>(parse_int("attack.every", v)); }},
      {"attack.loss", [](const C& c) { return to_string(c.op.loss_kind); },
       [](C& c, const std::string& v) { c.op.loss_kind = c.train.loss_kind = parse_loss_kind(v); }},
      {"attack.chain_prev", [](const C& c) { return std::string(c.op.chain_prev_blurred ? "true" : "false"); },
       [](C& c, const std::string& v) { c.op.chain_prev_blurred = parse_bool("attack.chain_prev", v); }},
      {"attack.squared_ratios",
       [](const C& c) { return std::string(c.op.blur.literal_squared_ratios ? "true" : "false"); },
       [](C& c, const std::string& v) { c.op.blur.literal_squared_ratios = parse_bool("attack.squared_ratios", v); }},
      {"tracker.feature", [](const C& c) { return to_string(c.tracker_feature); },
       [](C& c, const std::string& v) { c.tracker_feature = parse_feature_kind(v); }},
      {"tracker.context", [](const C& c) { return fmt_double(c.context); },
       [](C& c, const std::string& v) { c.context = parse_double("tracker.context", v); }},
      {"net.size", [](const C& c) { return std::to_string(c.net.input_size); },
       [](C& c, const std::string& v) { c.net.input_size = static_cast<int>(parse_int("net.size", v)); }},
      {"net.widths",
       [](const C& c) {
         std::string s;
         for (std::size_t i = 0; i < c.net.widths.size(); ++i) s += (i ? "," : "") + std::to_string(c.net.widths[i]);
         return s;
       },
       [](C& c, const std::string& v) {
         c.net.widths.clear();
         for (const auto& w : split_list(v)) c.net.widths.push_back(static_cast<int>(parse_int("net.widths", w)));
         c.net.depth = static_cast<int>(c.net.widths.size());
       }},
      {"net.path", [](const C& c) { return c.net_path; }, [](C& c, const std::string& v) { c.net_path = v; }},
      {"train.lr", [](const C& c) { return fmt_double(c.train.learning_rate); },
       [](C& c, const std::string& v) { c.train.learning_rate = parse_double("train.lr", v); }},
      {"train.lambda", [](const C& c) { return fmt_double(c.train.lambda_natural); },
       [](C& c, const std::string& v) { c.train.lambda_natural = parse_double("train.lambda", v); }},
      {"train.steps", [](const C& c) { return std::to_string(c.train.steps); },
       [](C& c, const std::string& v) { c.train.steps = static_cast<int>(parse_int("train.steps", v)); }},
      {"train.pairs", [](const C& c) { return std::to_string(c.train.pairs_per_sequence); },
       [](C& c, const std::string& v) { c.train.pairs_per_sequence = static_cast<int>(parse_int("train.pairs", v)); }},
      {"train.scenes", [](const C& c) { return std::to_string(c.train_scenes); },
       [](C& c, const std::string& v) { c.train_scenes = static_cast<int>(parse_int("train.scenes", v)); }},
      {"train.scene_seed", [](const C& c) { return std::to_string(c.train_scene_seed); },
       [](C& c, const std::string& v) {
         c.train_scene_seed = static_cast<std::uint64_t>(parse_int("train.scene_seed", v));
       }},
      {"bench.scenes", [](const C& c) { return std::to_string(c.scenes); },
       [](C& c, const std::string& v) { c.scenes = static_cast<int>(parse_int("bench.scenes", v)); }},
      {"bench.manifest", [](const C& c) { return c.manifest; }, [](C& c, const std::string& v) { c.manifest = v; }},
      {"bench.attacks",
       [](const C& c) {
         std::string s;
         for (std::size_t i = 0; i < c.attacks.size(); ++i) s += (i ? "," : "") + to_string(c.attacks[i]);
         return s;
       },
       [](C& c, const std::string& v) {
         c.attacks.clear();
         for (const auto& a : split_list(v)) c.attacks.push_back(parse_attack_kind(a));
       }},
      {"bench.transfer", [](const C& c) { return std::string(c.transfer ? "true" : "false"); },
       [](C& c, const std::string& v) { c.transfer = parse_bool("bench.transfer", v); }},
      {"bench.timing", [](const C& c) { return std::string(c.timing ? "true" : "false"); },
       [](C& c, const std::string& v) { c.timing = parse_bool("bench.timing", v); }},
      {"bench.dump_frames", [](const C& c) { return std::string(c.dump_frames ? "true" : "false"); },
       [](C& c, const std::string& v) { c.dump_frames = parse_bool("bench.dump_frames", v); }},
  };
  return f;
}

}  // namespace detail

inline void set_key(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : detail::fields())
    if (f.key == key) {
      f.set(c, value);
      return;
    }
  throw InvalidArgument("unknown config key '" + key + "'");
}

inline std::string get_key(const RunConfig& c, const std::string& key) {
  for (const auto& f : detail::fields())
    if (f.key == key) return f.get(c);
  throw InvalidArgument("unknown config key '" + key + "'");
}

/// Applies `key = value` lines from `text` on top of `base`. `origin` names the source in errors.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}, const std::string& origin = "config") {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw InvalidArgument(where + "expected 'key = value'");
    try {
      set_key(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(where + e.what());
    }
  }
  base.validate();
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw LoadError(path.string() + ": cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base), path.string());
}

inline std::string dump_config(const RunConfig& c) {
  std::string s;
  for (const auto& f : detail::fields()) s += f.key + " = " + f.get(c) + "\n";
  return s;
}

}  // namespace aba
