#pragma once

#include <array>
#include <limits>
#include <random>
#include <variant>
#include <vector>

#include "cuberec/types.hpp"

namespace cuberec {

// Axis-aligned box {g : center - offset <= g <= center + offset}.
struct Hypercube {
  Vector center;
  Vector offset;  // element-wise >= 0

  Index dim() const { return static_cast<Index>(center.size()); }
  bool contains(const Eigen::Ref<const Vector>& point) const;
  static Hypercube zeros(Index dim) {
    return {Vector::Zero(dim), Vector::Zero(dim)};
  }
};

struct Corners {
  Vector lower;
  Vector upper;
};

Corners corners(const Hypercube& cube);

// Smallest box covering every column of `members` (d x s).
Hypercube bound_members(const Matrix& members);

// Distance from a point to a box: the squared outer distance to the nearest
// surface point plus gamma times the squared distance from the center to
// that surface point. Inside the box the outer part vanishes.
struct CubeDistance {
  double outer = 0.0;
  double inner = 0.0;
  // Smallest |point - face| over all coordinates.
  double kink_gap = std::numeric_limits<double>::infinity();

  double total(double gamma) const { return outer + gamma * inner; }
};

CubeDistance cube_distance(const Hypercube& cube,
                           const Eigen::Ref<const Vector>& point);
double distance_point_to_cube(const Hypercube& cube,
                              const Eigen::Ref<const Vector>& point,
                              double gamma);

// |center - point|^2; the scorer of the point-distance ablation.
double center_distance(const Hypercube& cube,
                       const Eigen::Ref<const Vector>& point);

// Adds `upstream` times the gradient of the box distance into the three
// outputs. On a face the point is treated as lying on the face's outside.
void cube_distance_backward(const Hypercube& cube,
                            const Eigen::Ref<const Vector>& point, double gamma,
                            double upstream, Hypercube& d_cube,
                            Eigen::Ref<Vector> d_point);
void center_distance_backward(const Hypercube& cube,
                              const Eigen::Ref<const Vector>& point,
                              double upstream, Hypercube& d_cube,
                              Eigen::Ref<Vector> d_point);

// Inverted dropout (kept units scaled by 1/(1-rate)). Inactive without a
// generator or with rate 0, which is the evaluation mode.
struct Dropout {
  double rate = 0.0;
  std::mt19937_64* rng = nullptr;

  bool active() const { return rng != nullptr && rate > 0.0; }
  Vector mask(Index size) const;
};

// ---------------------------------------------------------------------------
// Group composers

enum class Variant { kGeometric, kAttentive };

// Bounding box followed by learned projections of center and offset. The
// offset projection is softplus(offset_proj_raw), hence non-negative.
struct GeometricComposer {
  Matrix center_proj;
  Matrix offset_proj_raw;

  Matrix offset_proj() const;
  static GeometricComposer identity(Index dim);
};

// Single-query attention over member embeddings, then a linear center and a
// rectified offset.
struct AttentiveComposer {
  Vector query;
  Matrix key_proj;
  Matrix value_proj;
  Matrix center_proj;
  Matrix offset_proj;
  Vector offset_bias;

  static AttentiveComposer identity(Index dim);
};

using Composer = std::variant<GeometricComposer, AttentiveComposer>;

Variant variant_of(const Composer& composer);
Composer zeros_like(const Composer& composer);

// Intermediate values kept for the backward pass.
struct CompositionTrace {
  Matrix members;
  // geometric
  std::vector<Index> arg_max;
  std::vector<Index> arg_min;
  Hypercube bound;
  // attentive
  Vector weights;
  Vector pooled;
  Vector fused;  // after dropout
  Vector mask;
  Vector offset_pre;

  double kink_gap = std::numeric_limits<double>::infinity();
};

Hypercube geometric_compose(const Matrix& members,
                            const GeometricComposer& params,
                            CompositionTrace* trace = nullptr);
Hypercube attentive_compose(const Matrix& members,
                            const AttentiveComposer& params,
                            CompositionTrace* trace = nullptr,
                            const Dropout& dropout = {});
Hypercube compose(const Matrix& members, const Composer& composer,
                  CompositionTrace* trace = nullptr,
                  const Dropout& dropout = {});

// Accumulates parameter gradients into `grad` (same alternative as
// `composer`) and member gradients into `d_members` (d x s).
void compose_backward(const Composer& composer, const CompositionTrace& trace,
                      const Hypercube& d_cube, Composer& grad,
                      Matrix& d_members);

// ---------------------------------------------------------------------------
// Intersection

// Three d->d layers, rectifier after the first two, linear output.
struct Mlp {
  std::array<Matrix, 3> weight;
  std::array<Vector, 3> bias;

  static Mlp zeros(Index dim);
  // Uniform Glorot weights, zero biases.
  static Mlp glorot(Index dim, std::mt19937_64& rng);
};

struct MlpTrace {
  Vector input;
  std::array<Vector, 2> pre;
  std::array<Vector, 2> mask;
  std::array<Vector, 2> hidden;
  double kink_gap = std::numeric_limits<double>::infinity();
};

Vector mlp_forward(const Mlp& mlp, const Vector& input,
                   MlpTrace* trace = nullptr, const Dropout& dropout = {});
// Returns d_input; parameter gradients are accumulated into `grad`.
Vector mlp_backward(const Mlp& mlp, const MlpTrace& trace, const Vector& d_out,
                    Mlp& grad);

struct IntersectionParams {
  Mlp center_mlp;  // attention logits over the two centers
  Mlp offset_mlp;  // shrink gate over the summed offsets

  static IntersectionParams zeros(Index dim);
  static IntersectionParams glorot(Index dim, std::mt19937_64& rng);
};

struct IntersectionTrace {
  Hypercube a;
  Hypercube b;
  MlpTrace center_a;
  MlpTrace center_b;
  MlpTrace offset;
  Vector weight_a;
  Vector weight_b;
  Vector min_offset;
  std::vector<bool> min_from_a;
  Vector gate;
  double kink_gap = std::numeric_limits<double>::infinity();
};

// Soft intersection: element-wise two-way softmax over the centers and the
// smaller offset shrunk by a sigmoid gate.
Hypercube intersect(const Hypercube& a, const Hypercube& b,
                    const IntersectionParams& params,
                    IntersectionTrace* trace = nullptr,
                    const Dropout& dropout = {});

void intersect_backward(const IntersectionParams& params,
                        const IntersectionTrace& trace, const Hypercube& d_out,
                        IntersectionParams& grad, Hypercube& d_a,
                        Hypercube& d_b);

double softplus(double x);
double sigmoid(double x);

}  // namespace cuberec
