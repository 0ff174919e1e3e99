#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace cuberec {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment buffers, one per parameter tensor.
struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;

  AdamState() = default;
  explicit AdamState(std::span<const std::span<double>> params);
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One bias-corrected Adam update on every tensor. Throws ValidationError
// when the tensor count or any tensor size differs from the state.
void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<double>> grads, AdamState& state,
               const AdamConfig& config);

}  // namespace cuberec
