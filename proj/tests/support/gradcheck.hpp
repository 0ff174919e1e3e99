#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cuberec/model.hpp"

namespace cuberec::testing {

struct GradCheck {
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  bool skipped = false;  // too close to a kink for finite differences
};

// Central differences over every coordinate of every parameter tensor,
// compared with the analytic gradient as |a - n| / max(|a|, |n|, 1e-8).
// `loss` must be deterministic. A probe is skipped when the loss reports a
// kink within `kink_tol` at the base point or at any perturbed point.
inline GradCheck check_gradient(
    ModelParams& params, const ModelParams& analytic,
    const std::function<LossValue(const ModelParams&)>& loss,
    double step = 1e-5, double kink_tol = 1e-6) {
  GradCheck out;
  if (loss(params).nearest_kink < kink_tol) {
    out.skipped = true;
    return out;
  }
  const auto p = parameter_tensors(params);
  const auto a = parameter_tensors(analytic);
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t t = 0; t < p.size(); ++t) {
    for (std::size_t i = 0; i < p[t].size(); ++i) {
      const double keep = p[t][i];
      p[t][i] = keep + step;
      const LossValue plus = loss(params);
      p[t][i] = keep - step;
      const LossValue minus = loss(params);
      p[t][i] = keep;
      if (std::min(plus.nearest_kink, minus.nearest_kink) < kink_tol) {
        out.skipped = true;
        return out;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * step);
      diff2 += (a[t][i] - numeric) * (a[t][i] - numeric);
      a2 += a[t][i] * a[t][i];
      n2 += numeric * numeric;
    }
  }
  out.analytic_norm = std::sqrt(a2);
  out.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
  return out;
}

}  // namespace cuberec::testing
