#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace cuberec {

// Dense 0-based index of a user, item or group after re-indexing.
using Index = std::int32_t;

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
// One entity per row; rows are contiguous so a single embedding is a
// contiguous d-vector.
using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files, invariant violations and bad configuration.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses or gradients during optimization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Scalar loss summary shared by all hinge objectives.
struct LossValue {
  double value = 0.0;
  // Terms with a positive hinge.
  std::size_t active = 0;
  // Smallest distance of any non-smooth point (hinge, clamp, min/max tie,
  // rectifier) to its kink; finite differences are unreliable near zero.
  double nearest_kink = std::numeric_limits<double>::infinity();

  void note_kink(double gap) {
    nearest_kink = std::min(nearest_kink, std::abs(gap));
  }
  LossValue& operator+=(const LossValue& other) {
    value += other.value;
    active += other.active;
    nearest_kink = std::min(nearest_kink, other.nearest_kink);
    return *this;
  }
};

// Independent 64-bit seed for (stream, index) derived from a base seed with
// the splitmix64 finalizer. Used so that each epoch and each sub-process has
// its own reproducible generator.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                 std::uint64_t index = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ stream) ^ index);
}

}  // namespace cuberec
