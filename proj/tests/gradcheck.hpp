#pragma once

// Central finite-difference check of parameter gradients (double precision).

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "sr2seg/tape.hpp"

namespace sr2seg::testing {

struct GradCheckResult {
  double max_rel_error = 0;
  std::string worst;      // "<param>[<index>]" of the worst element
  std::size_t checked = 0;
  bool any_nonzero = false;
};

/// `loss` records a forward pass on the given tape and returns the scalar loss
/// node. Each tensor of `params` is probed at up to `per_tensor` evenly spaced
/// elements. Relative error is |a - n| / max(|a|, |n|, floor); the floor
/// keeps round-off in the difference quotient of near-zero gradients from
/// reading as relative error.
inline GradCheckResult check_gradients(ParameterStore<double>& params,
                                       const std::function<VarId(Tape<double>&)>& loss,
                                       double eps = 1e-6, std::size_t per_tensor = 64, double floor = 1e-5) {
  params.zero_grad();
  {
    Tape<double> tape(true);
    tape.backward(loss(tape));
  }
  auto eval = [&] {
    Tape<double> tape(false);
    return tape.value(loss(tape)).item();
  };
  GradCheckResult r;
  for (auto& p : params) {
    const std::size_t n = p.value.numel();
    const std::size_t stride = std::max<std::size_t>(1, n / per_tensor);
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = p.value[i];
      p.value[i] = orig + eps;
      const double up = eval();
      p.value[i] = orig - eps;
      const double down = eval();
      p.value[i] = orig;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = p.grad[i];
      if (analytic != 0.0) r.any_nonzero = true;
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++r.checked;
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst = p.name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic) +
                  " numeric=" + std::to_string(numeric);
      }
    }
  }
  return r;
}

}  // namespace sr2seg::testing
