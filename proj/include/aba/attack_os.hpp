#pragma once

// One-step adversarial blur: an encoder with two transposed-convolution
// decoders maps the uniformly-blurred instant stack to offsets of the
// accumulation weights (Tanh head) and motion ratios (Softmax head).
//
//   A = A_norm + tanh(head_a) / N, then per pixel the plane with the smallest
//       offset is set to 1 - (sum of the others)
//   W = softmax_channels(W_norm + head_w)
//
// Both final decoder layers start at zero, so an untrained network predicts
// exactly the uniform parameters.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "aba/attack_op.hpp"
#include "aba/blur.hpp"
#include "aba/flow.hpp"
#include "aba/tape.hpp"
#include "aba/tracker.hpp"

namespace aba {

struct PredictorConfig {
  int n_instants = 17;
  int frame_channels = 1;
  int input_size = 64;
  int depth = 4;
  std::vector<int> widths{8, 16, 16, 16};

  int input_channels() const { return n_instants * frame_channels; }

  void validate() const {
    require(n_instants >= 2, "PredictorConfig: n_instants must be >= 2");
    require(frame_channels == 1 || frame_channels == 3, "PredictorConfig: frame_channels must be 1 or 3");
    require(depth >= 1 && depth <= 6, "PredictorConfig: depth must be in [1, 6]");
    require(static_cast<int>(widths.size()) == depth, "PredictorConfig: need one width per encoder stage");
    require(input_size % (1 << depth) == 0, "PredictorConfig: input_size must be divisible by 2^depth");
    for (int w : widths) require(w >= 1, "PredictorConfig: widths must be positive");
  }
};

/// Network weights. Tensors are ordered: encoder (w, b) per stage, then the
/// accumulation decoder, then the ratio decoder, each (w, b) per stage.
struct PredictorNet {
  PredictorConfig config;
  std::vector<Tensor> params;

  static constexpr double kLeakySlope = 0.2;
  static constexpr int kKernel = 4;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : params) n += t.size();
    return n;
  }

  // Layer geometry ------------------------------------------------------------
  kernels::ConvShape encoder_shape(int k) const {
    const int in = k == 0 ? config.input_channels() : config.widths[k - 1];
    return {in, config.widths[k], kKernel, 2, 1};
  }
  /// Decoder stage d maps resolution S/2^(E-d) to S/2^(E-d-1).
  kernels::ConvShape decoder_shape(int d, int head_channels) const {
    const int E = config.depth;
    const int in = d == 0 ? config.widths[E - 1] : decoder_out(d - 1, head_channels) + config.widths[E - 1 - d];
    return {in, decoder_out(d, head_channels), kKernel, 2, 1};
  }
  int decoder_out(int d, int head_channels) const {
    return d == config.depth - 1 ? head_channels : config.widths[config.depth - 2 - d];
  }
  int accum_head() const { return config.n_instants; }
  int ratio_head() const { return config.n_instants - 1; }

  std::size_t encoder_index(int k) const { return 2 * static_cast<std::size_t>(k); }
  std::size_t accum_index(int d) const { return 2 * static_cast<std::size_t>(config.depth + d); }
  std::size_t ratio_index(int d) const { return 2 * static_cast<std::size_t>(2 * config.depth + d); }
};

/// He-style init for hidden layers, zeros for both output layers.
inline PredictorNet make_predictor(const PredictorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  PredictorNet net;
  net.config = cfg;
  std::mt19937_64 rng(seed);
  auto add_layer = [&](const kernels::ConvShape& s, bool zero) {
    Tensor w(s.in_channels * s.out_channels, s.kernel, s.kernel);
    if (!zero) {
      std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / (s.in_channels * s.kernel * s.kernel)));
      for (double& v : w.data) v = nd(rng);
    }
    net.params.push_back(std::move(w));
    net.params.emplace_back(s.out_channels, 1, 1);
  };
  for (int k = 0; k < cfg.depth; ++k) add_layer(net.encoder_shape(k), false);
  for (int head : {net.accum_head(), net.ratio_head()})
    for (int d = 0; d < cfg.depth; ++d) add_layer(net.decoder_shape(d, head), d == cfg.depth - 1);
  return net;
}

inline void write_checkpoint(const std::filesystem::path& path, const PredictorNet& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  using namespace io::bin;
  put_magic(out, "JAMAv1");
  const auto& c = net.config;
  put_u32(out, static_cast<std::uint32_t>(c.n_instants));
  put_u32(out, static_cast<std::uint32_t>(c.frame_channels));
  put_u32(out, static_cast<std::uint32_t>(c.input_size));
  put_u32(out, static_cast<std::uint32_t>(c.depth));
  for (int w : c.widths) put_u32(out, static_cast<std::uint32_t>(w));
  put_u32(out, static_cast<std::uint32_t>(net.params.size()));
  for (const auto& t : net.params) {
    put_u32(out, static_cast<std::uint32_t>(t.channels));
    put_u32(out, static_cast<std::uint32_t>(t.height));
    put_u32(out, static_cast<std::uint32_t>(t.width));
  }
  for (const auto& t : net.params)
    for (double v : t.data) put_f32(out, v);
}

inline PredictorNet read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  const std::string what = path.string();
  using namespace io::bin;
  expect_magic(in, "JAMAv1", what);
  PredictorConfig c;
  c.n_instants = static_cast<int>(get_u32(in, what));
  c.frame_channels = static_cast<int>(get_u32(in, what));
  c.input_size = static_cast<int>(get_u32(in, what));
  c.depth = static_cast<int>(get_u32(in, what));
  if (c.depth < 1 || c.depth > 6) throw LoadError(what + ": bad depth");
  c.widths.assign(c.depth, 0);
  for (int& w : c.widths) w = static_cast<int>(get_u32(in, what));
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw LoadError(what + ": " + e.what());
  }
  PredictorNet net = make_predictor(c, 0);
  const std::uint32_t count = get_u32(in, what);
  if (count != net.params.size()) throw LoadError(what + ": layer count does not match the architecture");
  for (auto& t : net.params) {
    const int ch = static_cast<int>(get_u32(in, what));
    const int h = static_cast<int>(get_u32(in, what));
    const int w = static_cast<int>(get_u32(in, what));
    if (ch != t.channels || h != t.height || w != t.width) throw LoadError(what + ": layer shape mismatch");
  }
  for (auto& t : net.params)
    for (double& v : t.data) v = get_f32(in, what);
  return net;
}

namespace detail {

/// Footnote fix: at each pixel the plane whose offset is smallest becomes
/// 1 - sum(others). If that leaves [0,1], the pixel falls back to clip + L1
/// renormalisation so the simplex constraint always holds.
inline Var complete_simplex(Var a, const Tensor& offsets) {
  const Tensor& in = a.value();
  const std::size_t P = in.plane_size();
  const int K = in.channels;
  std::vector<int> chosen(P);
  std::vector<char> fallback(P, 0);
  Tensor fixed = in;
  Tensor out = in;
  for (std::size_t p = 0; p < P; ++p) {
    int j = 0;
    for (int i = 1; i < K; ++i)
      if (offsets.data[i * P + p] < offsets.data[j * P + p]) j = i;
    chosen[p] = j;
    double others = 0.0;
    for (int i = 0; i < K; ++i)
      if (i != j) others += in.data[i * P + p];
    fixed.data[j * P + p] = 1.0 - others;
    bool ok = true;
    for (int i = 0; i < K; ++i) ok = ok && fixed.data[i * P + p] >= 0.0 && fixed.data[i * P + p] <= 1.0;
    double s = 0.0;
    for (int i = 0; i < K; ++i) {
      double v = fixed.data[i * P + p];
      if (!ok) v = std::clamp(v, 0.0, 1.0);
      out.data[i * P + p] = v;
      s += v;
    }
    if (!ok) {
      fallback[p] = 1;
      for (int i = 0; i < K; ++i) out.data[i * P + p] = s < 1e-8 ? 1.0 / K : out.data[i * P + p] / s;
    }
  }
  return a.tape->record(std::move(out), {a.id},
                        [a = a.id, chosen = std::move(chosen), fallback = std::move(fallback),
                         fixed = std::move(fixed)](Tape& tp, int self) {
                          const Tensor& up = tp.upstream(self);
                          const Tensor& y = tp.value(self);
                          const std::size_t P = up.plane_size();
                          const int K = up.channels;
                          Tensor g = zeros_like(up);
                          std::vector<double> gf(K);
                          for (std::size_t p = 0; p < P; ++p) {
                            // gradient w.r.t. the fixed (pre-fallback) values
                            if (fallback[p]) {
                              double s = 0.0;
                              for (int i = 0; i < K; ++i) s += std::clamp(fixed.data[i * P + p], 0.0, 1.0);
                              if (s < 1e-8) {
                                std::fill(gf.begin(), gf.end(), 0.0);
                              } else {
                                double dot = 0.0;
                                for (int i = 0; i < K; ++i) dot += up.data[i * P + p] * y.data[i * P + p];
                                for (int i = 0; i < K; ++i) {
                                  const double f = fixed.data[i * P + p];
                                  gf[i] = (f > 0.0 && f < 1.0) ? (up.data[i * P + p] - dot) / s : 0.0;
                                }
                              }
                            } else {
                              for (int i = 0; i < K; ++i) gf[i] = up.data[i * P + p];
                            }
                            const int j = chosen[p];
                            for (int i = 0; i < K; ++i)
                              if (i != j) g.data[i * P + p] = gf[i] - gf[j];
                          }
                          tp.accumulate(a, std::move(g));
                        },
                        "complete_simplex");
}

struct NetVars {
  std::vector<Var> params;
};

inline NetVars bind(Tape& tape, const PredictorNet& net, bool trainable) {
  NetVars v;
  for (const auto& t : net.params) v.params.push_back(trainable ? tape.leaf(t) : tape.constant(t));
  return v;
}

}  // namespace detail

/// Predicted stacks at the region resolution plus the raw head outputs.
struct PredictedVars {
  Var ratios;  // N-1 planes
  Var accum;   // N planes
  Tensor accum_offsets;  // tanh head output at S x S, before the simplex completion
};

/// Normalised network input: instants resized to S x S and mapped to [-1, 1].
inline Tensor predictor_input(const PredictorNet& net, const Tensor& instants) {
  require(instants.channels == net.config.input_channels(),
          "predictor_input: expected " + std::to_string(net.config.input_channels()) + " planes, got " +
              std::to_string(instants.channels));
  Tensor x = resize_bilinear(instants, net.config.input_size, net.config.input_size);
  for (double& v : x.data) v = 2.0 * v - 1.0;
  return x;
}

inline PredictedVars predict_taped(Tape& tape, const PredictorNet& net, const detail::NetVars& nv,
                                   const Tensor& instants, int out_h, int out_w) {
  const auto& c = net.config;
  const int N = c.n_instants, E = c.depth;
  Var x = tape.constant(predictor_input(net, instants));
  std::vector<Var> skips;
  for (int k = 0; k < E; ++k) {
    const auto i = net.encoder_index(k);
    x = ad::leaky_relu(ad::conv2d(x, nv.params[i], nv.params[i + 1], net.encoder_shape(k)), PredictorNet::kLeakySlope);
    skips.push_back(x);
  }
  auto decode = [&](int head, auto index_of) {
    Var h = skips.back();
    for (int d = 0; d < E; ++d) {
      if (d > 0) h = ad::concat_channels({h, skips[E - 1 - d]});
      const auto i = index_of(d);
      h = ad::conv_transpose2d(h, nv.params[i], nv.params[i + 1], net.decoder_shape(d, head));
      if (d < E - 1) h = ad::leaky_relu(h, PredictorNet::kLeakySlope);
    }
    return h;
  };
  Var a_off = ad::tanh(decode(net.accum_head(), [&](int d) { return net.accum_index(d); }));
  Var w_logits = decode(net.ratio_head(), [&](int d) { return net.ratio_index(d); });

  Var a = ad::affine(a_off, 1.0 / N, 1.0 / N);
  a = detail::complete_simplex(a, a_off.value());
  Var w = ad::channel_softmax(ad::affine(w_logits, 1.0, 1.0 / (N - 1)));
  return {ad::resize(w, out_h, out_w), ad::resize(a, out_h, out_w), a_off.value()};
}

/// Blur parameters for a region from its uniformly-blurred instant stack.
inline BlurParams predict_params(const PredictorNet& net, const Tensor& instants) {
  Tape tape;
  auto nv = detail::bind(tape, net, false);
  auto pv = predict_taped(tape, net, nv, instants, instants.height, instants.width);
  BlurParams bp;
  bp.n_instants = net.config.n_instants;
  bp.ratios.planes = pv.ratios.value();
  bp.accum.planes = pv.accum.value();
  const double viol = std::max(simplex_violation(bp.ratios.planes), simplex_violation(bp.accum.planes));
  if (!(viol <= 1e-3)) throw InternalConsistency("predict_params: constraint violation " + std::to_string(viol));
  return bp;
}

/// sum_i || A^i - A_norm^i ||_2
inline Var natural_loss(Var accum) {
  const int N = accum.value().channels;
  Var total;
  for (int i = 0; i < N; ++i) {
    Var dev = ad::affine(ad::slice_channels(accum, i, 1), 1.0, -1.0 / N);
    Var n = ad::norm2(dev);
    total = i == 0 ? n : ad::add(total, n);
  }
  return total;
}

struct LossParts {
  Var adversarial;
  Var natural;
  Var total;
};

/// L = L_adv + lambda * L_natural on one (prev, cur) region pair.
inline LossParts total_loss(Tape& tape, const PredictorNet& net, const detail::NetVars& nv,
                            const TrackerModel& tracker, const Frame& cur, const Frame& prev, const FlowField& flow,
                            const AttackTarget& target, double lambda) {
  const auto uni = uniform_params(net.config.n_instants, cur.height, cur.width);
  const Tensor instants = instant_stack(prev, cur, flow, uni.ratios);
  auto pv = predict_taped(tape, net, nv, instants, cur.height, cur.width);
  Var blurred = blur_taped(tape, cur, prev, flow, pv.ratios, pv.accum);
  Var adv = adversarial_loss(respond_taped(tracker, blurred), target);
  Var nat = natural_loss(pv.accum);
  return {adv, nat, ad::add(adv, ad::affine(nat, lambda))};
}

struct TrainConfig {
  double learning_rate = 0.0002;
  double lambda_natural = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int steps = 2000;
  int pairs_per_sequence = 8;
  std::uint64_t seed = 1;
  LossKind loss_kind = LossKind::L2;

  void validate() const {
    require(learning_rate > 0.0, "TrainConfig: learning_rate must be > 0");
    require(lambda_natural >= 0.0, "TrainConfig: lambda_natural must be >= 0");
    require(steps >= 0, "TrainConfig: steps must be >= 0");
    require(pairs_per_sequence >= 1, "TrainConfig: pairs_per_sequence must be >= 1");
  }
};

/// One training triple: the template source and a co-located region pair.
struct TrainingSample {
  TrackerModel tracker;
  Frame prev_region;
  Frame cur_region;
  FlowField flow;
};

struct TrainRecord {
  int step;
  double adversarial;
  double natural;
  double total;
};

struct TrainLog {
  std::vector<TrainRecord> records;
};

class Adam {
 public:
  Adam(const std::vector<Tensor>& params, const TrainConfig& cfg) : cfg_(cfg) {
    for (const auto& p : params) {
      m_.push_back(zeros_like(p));
      v_.push_back(zeros_like(p));
    }
  }

  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::size_t i = 0; i < params[k].size(); ++i) {
        const double g = grads[k].data[i];
        double& m = m_[k].data[i];
        double& v = v_[k].data[i];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
        params[k].data[i] -= cfg_.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg_.adam_eps);
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Tensor> m_, v_;
  int t_ = 0;
};

/// Adam on all network weights, one sample per step drawn by a seeded
/// generator. On divergence `net` keeps the weights from before the bad step.
inline TrainLog train(PredictorNet& net, const std::vector<TrainingSample>& data, const TrainConfig& cfg,
                      const std::function<void(const TrainRecord&)>& on_step = {}) {
  cfg.validate();
  require(!data.empty(), "train: empty dataset");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  Adam opt(net.params, cfg);
  TrainLog log;
  for (int step = 0; step < cfg.steps; ++step) {
    const TrainingSample& s = data[pick(rng)];
    const Tensor clean = respond(s.tracker, s.cur_region).values;
    const AttackTarget target = make_target(clean, s.tracker.bbox_w, s.tracker.bbox_h, cfg.loss_kind);
    Tape tape;
    auto nv = detail::bind(tape, net, true);
    auto parts = total_loss(tape, net, nv, s.tracker, s.cur_region, s.prev_region, s.flow, target, cfg.lambda_natural);
    const double total = parts.total.value().data[0];
    if (!std::isfinite(total) || total > 1e6)
      throw TrainingFailure("train: loss diverged at step " + std::to_string(step));
    tape.backward(parts.total);
    std::vector<Tensor> grads;
    for (Var v : nv.params) grads.push_back(tape.grad(v));
    for (const auto& g : grads)
      if (!all_finite(g)) throw TrainingFailure("train: non-finite gradient at step " + std::to_string(step));
    TrainRecord rec{step, parts.adversarial.value().data[0], parts.natural.value().data[0], total};
    log.records.push_back(rec);
    if (on_step) on_step(rec);
    opt.step(net.params, grads);
  }
  return log;
}

struct OsAttackResult {
  Frame blurred_region;
  BlurParams params;
  double latency_ms = 0.0;
};

/// Single forward pass on co-located regions: flow -> uniform instants -> predicted params -> blur.
inline OsAttackResult os_attack_region(const PredictorNet& net, const Frame& cur_region, const Frame& prev_region,
                                       const FlowConfig& flow_cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const FlowField flow = estimate_flow(prev_region, cur_region, flow_cfg);
  const auto uni = uniform_params(net.config.n_instants, cur_region.height, cur_region.width);
  const Tensor instants = instant_stack(prev_region, cur_region, flow, uni.ratios);
  OsAttackResult r;
  r.params = predict_params(net, instants);
  r.blurred_region = blur(cur_region, prev_region, flow, r.params);
  r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline std::pair<OsAttackResult, SearchRegion> os_attack_frame(const PredictorNet& net, const Frame& cur,
                                                               const Frame& prev, const BBox& prev_bbox,
                                                               const FlowConfig& flow_cfg, double context = 2.5) {
  const auto t0 = std::chrono::steady_clock::now();
  SearchRegion cr = crop_search_region(cur, prev_bbox, context);
  SearchRegion pr = crop_search_region(prev, prev_bbox, context);
  OsAttackResult r = os_attack_region(net, cr.pixels, pr.pixels, flow_cfg);
  r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(r), std::move(cr)};
}

}  // namespace aba
