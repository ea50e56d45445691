#pragma once

// Central finite-difference check of taped gradients.

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "aba/tape.hpp"

namespace aba {

/// Builds a scalar loss on `tape` from leaves holding the parameters.
using TapedScalarFn = std::function<Var(Tape& tape, const std::vector<Var>& params)>;

/// (parameter tensor index, element index)
using ParamElement = std::pair<int, std::size_t>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  ParamElement worst{0, 0};
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

namespace detail {
inline double eval_loss(const TapedScalarFn& f, const std::vector<Tensor>& params) {
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& p : params) leaves.push_back(tape.leaf(p));
  const double v = f(tape, leaves).value().data.at(0);
  if (!std::isfinite(v)) throw NumericFailure("grad_check: non-finite loss while probing");
  return v;
}
}  // namespace detail

/// Compares backward() against central differences. With no `subset`, every
/// element of every parameter is probed.
inline GradCheckResult grad_check_detailed(const TapedScalarFn& f, const std::vector<Tensor>& params, double eps,
                                           const std::optional<std::vector<ParamElement>>& subset = std::nullopt) {
  require(eps > 0.0, "grad_check: eps must be positive");
  Tape tape;
  std::vector<Var> leaves;
  for (const auto& p : params) leaves.push_back(tape.leaf(p));
  Var loss = f(tape, leaves);
  if (!std::isfinite(loss.value().data.at(0))) throw NumericFailure("grad_check: non-finite loss");
  tape.backward(loss);
  std::vector<Tensor> analytic;
  for (Var v : leaves) analytic.push_back(tape.grad(v));

  std::vector<ParamElement> elems;
  if (subset) {
    elems = *subset;
  } else {
    for (int k = 0; k < static_cast<int>(params.size()); ++k)
      for (std::size_t i = 0; i < params[k].size(); ++i) elems.emplace_back(k, i);
  }

  GradCheckResult r;
  std::vector<Tensor> probe = params;
  for (auto [k, i] : elems) {
    const double orig = probe[k].data[i];
    probe[k].data[i] = orig + eps;
    const double up = detail::eval_loss(f, probe);
    probe[k].data[i] = orig - eps;
    const double down = detail::eval_loss(f, probe);
    probe[k].data[i] = orig;
    const double numeric = (up - down) / (2.0 * eps);
    const double a = analytic[k].data[i];
    const double e = relative_error(a, numeric);
    if (r.checked++ == 0 || e > r.max_relative_error) {
      r.max_relative_error = e;
      r.worst = {k, i};
      r.worst_analytic = a;
      r.worst_numeric = numeric;
    }
  }
  return r;
}

/// max over probed parameters of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline double grad_check(const TapedScalarFn& f, const std::vector<Tensor>& params, double eps,
                         const std::optional<std::vector<ParamElement>>& subset = std::nullopt) {
  return grad_check_detailed(f, params, eps, subset).max_relative_error;
}

}  // namespace aba
