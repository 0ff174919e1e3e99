#include "cuberec/adam.hpp"

#include <cmath>

#include <fmt/format.h>

#include "cuberec/types.hpp"

namespace cuberec {

AdamState::AdamState(std::span<const std::span<double>> params) {
  first.reserve(params.size());
  second.reserve(params.size());
  for (const auto& p : params) {
    first.emplace_back(p.size(), 0.0);
    second.emplace_back(p.size(), 0.0);
  }
}

void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<double>> grads, AdamState& state,
               const AdamConfig& config) {
  if (params.size() != grads.size() || params.size() != state.first.size() ||
      params.size() != state.second.size()) {
    throw ValidationError(fmt::format(
        "adam: {} parameter tensors, {} gradients, {} state tensors",
        params.size(), grads.size(), state.first.size()));
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (params[t].size() != grads[t].size() ||
        params[t].size() != state.first[t].size() ||
        params[t].size() != state.second[t].size()) {
      throw ValidationError(
          fmt::format("adam: shape mismatch in tensor {}", t));
    }
  }

  ++state.step;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& m = state.first[t];
    auto& v = state.second[t];
    const auto param = params[t];
    const auto grad = grads[t];
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double g = grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      param[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

}  // namespace cuberec
