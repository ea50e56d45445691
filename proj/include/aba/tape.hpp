#pragma once

// Minimal reverse-mode differentiation over Tensors.
//
// A Tape records primitive operations in execution order; parents always have
// smaller ids than their children, so the recording is acyclic and a reverse
// sweep is a valid reverse topological order. One tape per attack / training
// step; tapes are not thread-safe.

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "aba/conv.hpp"
#include "aba/kernels.hpp"
#include "aba/ncc.hpp"
#include "aba/tensor.hpp"
#include "aba/warp.hpp"

namespace aba {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Var leaf(Tensor v) {
    const int id = push(std::move(v), {}, nullptr, "leaf", true);
    leaves_.push_back(id);
    return {this, id};
  }

  Var constant(Tensor v) { return {this, push(std::move(v), {}, nullptr, "const", false)}; }

  /// Records an op. The node requires a gradient iff any parent does.
  Var record(Tensor value, std::vector<int> parents, BackwardFn fn, std::string op) {
    bool rg = false;
    for (int p : parents) {
      require(p >= 0 && p < static_cast<int>(nodes_.size()), "Tape::record: dangling parent");
      rg = rg || nodes_[p].requires_grad;
    }
    return {this, push(std::move(value), std::move(parents), rg ? std::move(fn) : nullptr, std::move(op), rg)};
  }

  const Tensor& value(int id) const { return nodes_.at(id).value; }
  const Tensor& value(Var v) const { return value(v.id); }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }
  const std::vector<int>& parents(int id) const { return nodes_.at(id).parents; }
  const std::string& op_name(int id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Upstream gradient of node `id` during a backward sweep.
  const Tensor& upstream(int id) const { return nodes_.at(id).grad; }

  /// Adds g into the gradient of `id` (no-op for constants).
  void accumulate(int id, const Tensor& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      require(g.same_shape(n.value), "Tape::accumulate: gradient shape " + g.shape_str() + " vs value " +
                                         n.value.shape_str() + " at op " + n.op);
      n.grad = g;
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad.data[i] += g.data[i];
  }
  void accumulate(int id, Tensor&& g) {
    Node& n = nodes_.at(id);
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      require(g.same_shape(n.value), "Tape::accumulate: gradient shape " + g.shape_str() + " vs value " +
                                         n.value.shape_str() + " at op " + n.op);
      n.grad = std::move(g);
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) n.grad.data[i] += g.data[i];
  }

  /// Reverse sweep from a scalar loss. Leaves the loss never reached get a zero gradient.
  void backward(Var loss) {
    require(loss.tape == this, "Tape::backward: loss recorded on another tape");
    const Tensor& lv = value(loss.id);
    require(lv.size() == 1, "Tape::backward: loss must be scalar, got " + lv.shape_str());
    for (auto& n : nodes_) n.grad = Tensor();
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = scalar_tensor(1.0);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  /// Gradient of a leaf (or any node) after backward(); zeros if untouched.
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? zeros_like(n.value) : n.grad;
  }

  std::vector<Var> leaves() {
    std::vector<Var> out;
    for (int id : leaves_) out.push_back({this, id});
    return out;
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    BackwardFn backward;
    std::string op;
    bool requires_grad = false;
  };

  int push(Tensor v, std::vector<int> parents, BackwardFn fn, std::string op, bool rg) {
    nodes_.push_back(Node{std::move(v), Tensor(), std::move(parents), std::move(fn), std::move(op), rg});
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::vector<int> leaves_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace ad {

namespace detail {
inline Tape& same_tape(Var a, Var b) {
  require(a.tape != nullptr && a.tape == b.tape, "ad: operands live on different tapes");
  return *a.tape;
}
inline void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.same_shape(b), std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}
}  // namespace detail

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, int self) {
    tp.accumulate(a, tp.upstream(self));
    tp.accumulate(b, tp.upstream(self));
  }, "add");
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.value().data[i];
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, int self) {
    tp.accumulate(a, tp.upstream(self));
    Tensor g = tp.upstream(self);
    for (double& v : g.data) v = -v;
    tp.accumulate(b, std::move(g));
  }, "sub");
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  return t.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape& tp, int self) {
    const Tensor& g = tp.upstream(self);
    Tensor ga = g, gb = g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.data[i] *= tp.value(b).data[i];
      gb.data[i] *= tp.value(a).data[i];
    }
    tp.accumulate(a, std::move(ga));
    tp.accumulate(b, std::move(gb));
  }, "mul");
}

/// a * s + offset, elementwise.
inline Var affine(Var a, double s, double offset = 0.0) {
  Tensor out = a.value();
  for (double& v : out.data) v = v * s + offset;
  return a.tape->record(std::move(out), {a.id}, [a = a.id, s](Tape& tp, int self) {
    Tensor g = tp.upstream(self);
    for (double& v : g.data) v *= s;
    tp.accumulate(a, std::move(g));
  }, "affine");
}

/// a + c for a constant tensor c of the same shape.
inline Var add_const(Var a, const Tensor& c) {
  detail::same_shape(a.value(), c, "add_const");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += c.data[i];
  return a.tape->record(std::move(out), {a.id}, [a = a.id](Tape& tp, int self) {
    tp.accumulate(a, tp.upstream(self));
  }, "add_const");
}

inline Var reduce_sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data) s += v;
  return a.tape->record(scalar_tensor(s), {a.id}, [a = a.id](Tape& tp, int self) {
    tp.accumulate(a, Tensor(tp.value(a).channels, tp.value(a).height, tp.value(a).width, tp.upstream(self).data[0]));
  }, "reduce_sum");
}

/// sum (a - target)^2
inline Var squared_error(Var a, const Tensor& target) {
  detail::same_shape(a.value(), target, "squared_error");
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = a.value().data[i] - target.data[i];
    s += d * d;
  }
  return a.tape->record(scalar_tensor(s), {a.id}, [a = a.id, target](Tape& tp, int self) {
    const double up = tp.upstream(self).data[0];
    Tensor g = zeros_like(target);
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = 2.0 * up * (tp.value(a).data[i] - target.data[i]);
    tp.accumulate(a, std::move(g));
  }, "squared_error");
}

/// Binary cross-entropy of sigmoid(a) against labels in {0, 1}, summed.
inline Var bce_with_logits(Var a, const Tensor& labels) {
  detail::same_shape(a.value(), labels, "bce_with_logits");
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double z = a.value().data[i];
    // softplus(z) - y z, stable form
    s += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - labels.data[i] * z;
  }
  return a.tape->record(scalar_tensor(s), {a.id}, [a = a.id, labels](Tape& tp, int self) {
    const double up = tp.upstream(self).data[0];
    Tensor g = zeros_like(labels);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-tp.value(a).data[i]));
      g.data[i] = up * (sig - labels.data[i]);
    }
    tp.accumulate(a, std::move(g));
  }, "bce_with_logits");
}

/// Euclidean norm of the whole tensor; subgradient 0 at the origin.
inline Var norm2(Var a) {
  double ss = 0.0;
  for (double v : a.value().data) ss += v * v;
  return a.tape->record(scalar_tensor(std::sqrt(ss)), {a.id}, [a = a.id](Tape& tp, int self) {
    const double n = tp.value(self).data[0];
    Tensor g = zeros_like(tp.value(a));
    if (n > 0.0) {
      const double k = tp.upstream(self).data[0] / n;
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = k * tp.value(a).data[i];
    }
    tp.accumulate(a, std::move(g));
  }, "norm2");
}

inline Var slice_channels(Var a, int begin, int count) {
  Tensor out = channel_slice(a.value(), begin, count);
  return a.tape->record(std::move(out), {a.id}, [a = a.id, begin](Tape& tp, int self) {
    const Tensor& up = tp.upstream(self);
    Tensor g = zeros_like(tp.value(a));
    std::copy(up.data.begin(), up.data.end(), g.data.begin() + static_cast<std::ptrdiff_t>(begin * g.plane_size()));
    tp.accumulate(a, std::move(g));
  }, "slice_channels");
}

inline Var concat_channels(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_channels: nothing to concatenate");
  Tape& t = *parts.front().tape;
  const Tensor& first = parts.front().value();
  int total = 0;
  std::vector<int> ids;
  for (const Var& v : parts) {
    require(v.tape == &t && v.value().same_spatial(first), "concat_channels: incompatible parts");
    total += v.value().channels;
    ids.push_back(v.id);
  }
  Tensor out(total, first.height, first.width);
  auto it = out.data.begin();
  for (const Var& v : parts) it = std::copy(v.value().data.begin(), v.value().data.end(), it);
  return t.record(std::move(out), ids, [ids](Tape& tp, int self) {
    const Tensor& up = tp.upstream(self);
    std::size_t off = 0;
    for (int id : ids) {
      Tensor g = zeros_like(tp.value(id));
      std::copy_n(up.data.begin() + static_cast<std::ptrdiff_t>(off), g.size(), g.data.begin());
      off += g.size();
      tp.accumulate(id, std::move(g));
    }
  }, "concat_channels");
}

inline Var prefix_sums(Var a) {
  return a.tape->record(kernels::prefix_sums(a.value()), {a.id}, [a = a.id](Tape& tp, int self) {
    tp.accumulate(a, kernels::prefix_sums_backward(tp.upstream(self)));
  }, "prefix_sums");
}

inline Var suffix_sums(Var a) {
  return a.tape->record(kernels::suffix_sums(a.value()), {a.id}, [a = a.id](Tape& tp, int self) {
    tp.accumulate(a, kernels::suffix_sums_backward(tp.upstream(self)));
  }, "suffix_sums");
}

inline Var outer_planes(Var r, Var v, double scale = 1.0) {
  Tape& t = detail::same_tape(r, v);
  return t.record(kernels::outer_planes(r.value(), v.value(), scale), {r.id, v.id},
                  [r = r.id, v = v.id, scale](Tape& tp, int self) {
                    auto [gr, gv] = kernels::outer_planes_backward(tp.value(r), tp.value(v), tp.upstream(self), scale);
                    tp.accumulate(r, std::move(gr));
                    tp.accumulate(v, std::move(gv));
                  }, "outer_planes");
}

inline Var weighted_stack_sum(Var weights, Var stack) {
  Tape& t = detail::same_tape(weights, stack);
  return t.record(kernels::weighted_stack_sum(weights.value(), stack.value()), {weights.id, stack.id},
                  [w = weights.id, s = stack.id](Tape& tp, int self) {
                    auto [gw, gs] = kernels::weighted_stack_sum_backward(tp.value(w), tp.value(s), tp.upstream(self));
                    tp.accumulate(w, std::move(gw));
                    tp.accumulate(s, std::move(gs));
                  }, "weighted_stack_sum");
}

/// Pull warp; both the image and the (stacked) flow are differentiable.
inline Var warp(Var image, Var flows) {
  Tape& t = detail::same_tape(image, flows);
  return t.record(aba::warp(image.value(), flows.value()), {image.id, flows.id},
                  [im = image.id, fl = flows.id](Tape& tp, int self) {
                    auto g = warp_backward(tp.value(im), tp.value(fl), tp.upstream(self));
                    tp.accumulate(im, std::move(g.image));
                    tp.accumulate(fl, std::move(g.flow));
                  }, "warp");
}

inline Var resize(Var a, int h, int w) {
  if (a.value().height == h && a.value().width == w) return a;
  return a.tape->record(resize_bilinear(a.value(), h, w), {a.id}, [a = a.id](Tape& tp, int self) {
    tp.accumulate(a, resize_bilinear_backward(tp.upstream(self), tp.value(a).height, tp.value(a).width));
  }, "resize");
}

inline Var conv2d(Var x, Var weight, Var bias, const kernels::ConvShape& s) {
  Tape& t = detail::same_tape(x, weight);
  return t.record(kernels::conv2d(x.value(), weight.value(), bias.value(), s), {x.id, weight.id, bias.id},
                  [x = x.id, w = weight.id, b = bias.id, s](Tape& tp, int self) {
                    auto g = kernels::conv2d_backward(tp.value(x), tp.value(w), tp.upstream(self), s,
                                                      tp.requires_grad(x));
                    if (tp.requires_grad(x)) tp.accumulate(x, std::move(g.input));
                    tp.accumulate(w, std::move(g.weight));
                    tp.accumulate(b, std::move(g.bias));
                  }, "conv2d");
}

inline Var conv_transpose2d(Var x, Var weight, Var bias, const kernels::ConvShape& s) {
  Tape& t = detail::same_tape(x, weight);
  return t.record(kernels::conv_transpose2d(x.value(), weight.value(), bias.value(), s),
                  {x.id, weight.id, bias.id}, [x = x.id, w = weight.id, b = bias.id, s](Tape& tp, int self) {
                    auto g = kernels::conv_transpose2d_backward(tp.value(x), tp.value(w), tp.upstream(self), s,
                                                                tp.requires_grad(x));
                    if (tp.requires_grad(x)) tp.accumulate(x, std::move(g.input));
                    tp.accumulate(w, std::move(g.weight));
                    tp.accumulate(b, std::move(g.bias));
                  }, "conv_transpose2d");
}

inline Var leaky_relu(Var a, double slope) {
  Tensor out = a.value();
  for (double& v : out.data) v = v > 0.0 ? v : slope * v;
  return a.tape->record(std::move(out), {a.id}, [a = a.id, slope](Tape& tp, int self) {
    Tensor g = tp.upstream(self);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (tp.value(a).data[i] <= 0.0) g.data[i] *= slope;
    tp.accumulate(a, std::move(g));
  }, "leaky_relu");
}

inline Var tanh(Var a) {
  Tensor out = a.value();
  for (double& v : out.data) v = std::tanh(v);
  return a.tape->record(std::move(out), {a.id}, [a = a.id](Tape& tp, int self) {
    Tensor g = tp.upstream(self);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = tp.value(self).data[i];
      g.data[i] *= 1.0 - y * y;
    }
    tp.accumulate(a, std::move(g));
  }, "tanh");
}

inline Var channel_softmax(Var a) {
  return a.tape->record(kernels::channel_softmax(a.value()), {a.id}, [a = a.id](Tape& tp, int self) {
    tp.accumulate(a, kernels::channel_softmax_backward(tp.value(self), tp.upstream(self)));
  }, "channel_softmax");
}

inline Var luma(Var a) {
  if (a.value().channels == 1) return a;
  return a.tape->record(kernels::luma(a.value()), {a.id}, [a = a.id](Tape& tp, int self) {
    tp.accumulate(a, kernels::luma_backward(tp.value(a).channels, tp.upstream(self)));
  }, "luma");
}

inline Var gradient_magnitude(Var a) {
  return a.tape->record(kernels::gradient_magnitude(a.value()), {a.id}, [a = a.id](Tape& tp, int self) {
    tp.accumulate(a, kernels::gradient_magnitude_backward(tp.value(a), tp.value(self), tp.upstream(self)));
  }, "gradient_magnitude");
}

/// NCC response of a fixed template over a single-plane search image.
inline Var ncc(Var image, std::shared_ptr<const NccTemplate> tmpl) {
  Tensor out = ncc_response(*tmpl, image.value());
  return image.tape->record(std::move(out), {image.id}, [im = image.id, tmpl](Tape& tp, int self) {
    tp.accumulate(im, ncc_response_backward(*tmpl, tp.value(im), tp.upstream(self)));
  }, "ncc");
}

}  // namespace ad
}  // namespace aba
