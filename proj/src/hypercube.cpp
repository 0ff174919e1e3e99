#include "cuberec/hypercube.hpp"

#include <cmath>

#include <fmt/format.h>

namespace cuberec {

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

bool Hypercube::contains(const Eigen::Ref<const Vector>& point) const {
  return ((center - offset).array() <= point.array()).all() &&
         (point.array() <= (center + offset).array()).all();
}

Corners corners(const Hypercube& cube) {
  return {cube.center - cube.offset, cube.center + cube.offset};
}

Hypercube bound_members(const Matrix& members) {
  if (members.cols() == 0) {
    throw ValidationError("cannot bound an empty member set");
  }
  const Vector upper = members.rowwise().maxCoeff();
  const Vector lower = members.rowwise().minCoeff();
  return {(upper + lower) / 2.0, (upper - lower).cwiseAbs() / 2.0};
}

// ---------------------------------------------------------------------------
// Distance

CubeDistance cube_distance(const Hypercube& cube,
                           const Eigen::Ref<const Vector>& point) {
  CubeDistance d;
  for (Index z = 0; z < cube.dim(); ++z) {
    const double lower = cube.center[z] - cube.offset[z];
    const double upper = cube.center[z] + cube.offset[z];
    const double v = point[z];
    const double out = std::max(v - upper, 0.0) + std::max(lower - v, 0.0);
    const double anchor = std::min(upper, std::max(lower, v));
    d.outer += out * out;
    d.inner += (cube.center[z] - anchor) * (cube.center[z] - anchor);
    d.kink_gap = std::min({d.kink_gap, std::abs(v - upper), std::abs(v - lower)});
  }
  return d;
}

double distance_point_to_cube(const Hypercube& cube,
                              const Eigen::Ref<const Vector>& point,
                              double gamma) {
  return cube_distance(cube, point).total(gamma);
}

double center_distance(const Hypercube& cube,
                       const Eigen::Ref<const Vector>& point) {
  return (cube.center - point).squaredNorm();
}

void cube_distance_backward(const Hypercube& cube,
                            const Eigen::Ref<const Vector>& point, double gamma,
                            double upstream, Hypercube& d_cube,
                            Eigen::Ref<Vector> d_point) {
  for (Index z = 0; z < cube.dim(); ++z) {
    const double c = cube.center[z];
    const double o = cube.offset[z];
    const double v = point[z];
    if (v >= c + o) {
      // anchor = c + o: outer (v - c - o)^2, inner o^2
      const double gap = v - c - o;
      d_point[z] += upstream * 2.0 * gap;
      d_cube.center[z] -= upstream * 2.0 * gap;
      d_cube.offset[z] += upstream * (-2.0 * gap + 2.0 * gamma * o);
    } else if (v <= c - o) {
      // anchor = c - o: outer (c - o - v)^2, inner o^2
      const double gap = c - o - v;
      d_point[z] -= upstream * 2.0 * gap;
      d_cube.center[z] += upstream * 2.0 * gap;
      d_cube.offset[z] += upstream * (-2.0 * gap + 2.0 * gamma * o);
    } else {
      // anchor = v: inner (c - v)^2
      const double diff = c - v;
      d_point[z] -= upstream * 2.0 * gamma * diff;
      d_cube.center[z] += upstream * 2.0 * gamma * diff;
    }
  }
}

void center_distance_backward(const Hypercube& cube,
                              const Eigen::Ref<const Vector>& point,
                              double upstream, Hypercube& d_cube,
                              Eigen::Ref<Vector> d_point) {
  const Vector diff = cube.center - point;
  d_cube.center += upstream * 2.0 * diff;
  d_point -= upstream * 2.0 * diff;
}

Vector Dropout::mask(Index size) const {
  Vector m = Vector::Ones(size);
  if (!active()) return m;
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (Index i = 0; i < size; ++i) m[i] = keep(*rng) ? scale : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Composers

Matrix GeometricComposer::offset_proj() const {
  return offset_proj_raw.unaryExpr([](double x) { return softplus(x); });
}

GeometricComposer GeometricComposer::identity(Index dim) {
  // softplus(x) = 1 at x = log(e - 1); far-negative raw values give ~0.
  Matrix raw = Matrix::Constant(dim, dim, -40.0);
  raw.diagonal().setConstant(std::log(std::exp(1.0) - 1.0));
  return {Matrix::Identity(dim, dim), raw};
}

AttentiveComposer AttentiveComposer::identity(Index dim) {
  return {Vector::Zero(dim),          Matrix::Identity(dim, dim),
          Matrix::Identity(dim, dim), Matrix::Identity(dim, dim),
          Matrix::Zero(dim, dim),     Vector::Zero(dim)};
}

Variant variant_of(const Composer& composer) {
  return std::holds_alternative<GeometricComposer>(composer)
             ? Variant::kGeometric
             : Variant::kAttentive;
}

Composer zeros_like(const Composer& composer) {
  return std::visit(
      [](const auto& c) -> Composer {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, GeometricComposer>) {
          return GeometricComposer{Matrix::Zero(c.center_proj.rows(), c.center_proj.cols()),
                                   Matrix::Zero(c.offset_proj_raw.rows(), c.offset_proj_raw.cols())};
        } else {
          const Index d = static_cast<Index>(c.query.size());
          return AttentiveComposer{Vector::Zero(d),       Matrix::Zero(d, d),
                                   Matrix::Zero(d, d),    Matrix::Zero(d, d),
                                   Matrix::Zero(d, d),    Vector::Zero(d)};
        }
      },
      composer);
}

Hypercube geometric_compose(const Matrix& members,
                            const GeometricComposer& params,
                            CompositionTrace* trace) {
  if (members.cols() == 0) {
    throw ValidationError("cannot compose a group without members");
  }
  const Index d = static_cast<Index>(members.rows());
  const Index s = static_cast<Index>(members.cols());
  std::vector<Index> arg_max(d, 0);
  std::vector<Index> arg_min(d, 0);
  Vector upper(d);
  Vector lower(d);
  double gap = std::numeric_limits<double>::infinity();
  for (Index z = 0; z < d; ++z) {
    // Ties go to the first member.
    for (Index j = 1; j < s; ++j) {
      if (members(z, j) > members(z, arg_max[z])) arg_max[z] = j;
      if (members(z, j) < members(z, arg_min[z])) arg_min[z] = j;
    }
    upper[z] = members(z, arg_max[z]);
    lower[z] = members(z, arg_min[z]);
    for (Index j = 0; j < s; ++j) {
      if (j != arg_max[z]) gap = std::min(gap, upper[z] - members(z, j));
      if (j != arg_min[z]) gap = std::min(gap, members(z, j) - lower[z]);
    }
  }
  Hypercube bound{(upper + lower) / 2.0, (upper - lower).cwiseAbs() / 2.0};
  Hypercube cube{params.center_proj * bound.center,
                 params.offset_proj() * bound.offset};
  if (trace != nullptr) {
    trace->members = members;
    trace->arg_max = std::move(arg_max);
    trace->arg_min = std::move(arg_min);
    trace->bound = std::move(bound);
    trace->kink_gap = gap;
  }
  return cube;
}

namespace {

Vector stable_softmax(const Vector& logits) {
  const double peak = logits.maxCoeff();
  Vector e = (logits.array() - peak).exp();
  return e / e.sum();
}

void geometric_backward(const GeometricComposer& params,
                        const CompositionTrace& trace, const Hypercube& d_cube,
                        GeometricComposer& grad, Matrix& d_members) {
  const Matrix offset_proj = params.offset_proj();
  grad.center_proj += d_cube.center * trace.bound.center.transpose();
  const Matrix d_offset_proj = d_cube.offset * trace.bound.offset.transpose();
  grad.offset_proj_raw += d_offset_proj.cwiseProduct(
      params.offset_proj_raw.unaryExpr([](double x) { return sigmoid(x); }));
  const Vector d_center = params.center_proj.transpose() * d_cube.center;
  const Vector d_offset = offset_proj.transpose() * d_cube.offset;
  for (Index z = 0; z < static_cast<Index>(d_center.size()); ++z) {
    d_members(z, trace.arg_max[z]) += 0.5 * (d_center[z] + d_offset[z]);
    d_members(z, trace.arg_min[z]) += 0.5 * (d_center[z] - d_offset[z]);
  }
}

void attentive_backward(const AttentiveComposer& params,
                        const CompositionTrace& trace, const Hypercube& d_cube,
                        AttentiveComposer& grad, Matrix& d_members) {
  const Matrix& members = trace.members;
  const double scale = 1.0 / std::sqrt(static_cast<double>(members.rows()));

  Vector d_pre = d_cube.offset;
  for (Index z = 0; z < d_pre.size(); ++z) {
    if (!(trace.offset_pre[z] > 0.0)) d_pre[z] = 0.0;
  }
  grad.center_proj += d_cube.center * trace.fused.transpose();
  grad.offset_proj += d_pre * trace.fused.transpose();
  grad.offset_bias += d_pre;
  Vector d_fused = params.center_proj.transpose() * d_cube.center +
                   params.offset_proj.transpose() * d_pre;
  d_fused.array() *= trace.mask.array();

  grad.value_proj += d_fused * trace.pooled.transpose();
  const Vector d_pooled = params.value_proj.transpose() * d_fused;
  d_members += d_pooled * trace.weights.transpose();

  const Vector d_weights = members.transpose() * d_pooled;
  const double mean = trace.weights.dot(d_weights);
  const Vector d_logits =
      trace.weights.array() * (d_weights.array() - mean);

  const Matrix keys = params.key_proj * members;
  grad.query += scale * keys * d_logits;
  const Matrix d_keys = scale * params.query * d_logits.transpose();
  grad.key_proj += d_keys * members.transpose();
  d_members += params.key_proj.transpose() * d_keys;
}

}  // namespace

Hypercube attentive_compose(const Matrix& members,
                            const AttentiveComposer& params,
                            CompositionTrace* trace, const Dropout& dropout) {
  if (members.cols() == 0) {
    throw ValidationError("cannot compose a group without members");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(members.rows()));
  const Vector logits = scale * (params.key_proj * members).transpose() * params.query;
  const Vector weights = stable_softmax(logits);
  const Vector pooled = members * weights;
  const Vector mask = dropout.mask(static_cast<Index>(members.rows()));
  const Vector fused = (params.value_proj * pooled).cwiseProduct(mask);
  const Vector pre = params.offset_proj * fused + params.offset_bias;
  Hypercube cube{params.center_proj * fused, pre.cwiseMax(0.0)};
  if (trace != nullptr) {
    trace->members = members;
    trace->weights = weights;
    trace->pooled = pooled;
    trace->fused = fused;
    trace->mask = mask;
    trace->offset_pre = pre;
    trace->kink_gap = pre.cwiseAbs().minCoeff();
  }
  return cube;
}

Hypercube compose(const Matrix& members, const Composer& composer,
                  CompositionTrace* trace, const Dropout& dropout) {
  if (const auto* g = std::get_if<GeometricComposer>(&composer)) {
    return geometric_compose(members, *g, trace);
  }
  return attentive_compose(members, std::get<AttentiveComposer>(composer),
                           trace, dropout);
}

void compose_backward(const Composer& composer, const CompositionTrace& trace,
                      const Hypercube& d_cube, Composer& grad,
                      Matrix& d_members) {
  if (const auto* g = std::get_if<GeometricComposer>(&composer)) {
    geometric_backward(*g, trace, d_cube, std::get<GeometricComposer>(grad),
                       d_members);
  } else {
    attentive_backward(std::get<AttentiveComposer>(composer), trace, d_cube,
                       std::get<AttentiveComposer>(grad), d_members);
  }
}

// ---------------------------------------------------------------------------
// MLP and intersection

Mlp Mlp::zeros(Index dim) {
  Mlp mlp;
  for (int l = 0; l < 3; ++l) {
    mlp.weight[l] = Matrix::Zero(dim, dim);
    mlp.bias[l] = Vector::Zero(dim);
  }
  return mlp;
}

Mlp Mlp::glorot(Index dim, std::mt19937_64& rng) {
  Mlp mlp = zeros(dim);
  const double bound = std::sqrt(6.0 / (2.0 * static_cast<double>(dim)));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (auto& w : mlp.weight) {
    for (Index i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng);
  }
  return mlp;
}

Vector mlp_forward(const Mlp& mlp, const Vector& input, MlpTrace* trace,
                   const Dropout& dropout) {
  Vector h = input;
  double gap = std::numeric_limits<double>::infinity();
  for (int l = 0; l < 2; ++l) {
    const Vector pre = mlp.weight[l] * h + mlp.bias[l];
    const Vector mask = dropout.mask(static_cast<Index>(pre.size()));
    gap = std::min(gap, pre.cwiseAbs().minCoeff());
    Vector next = pre.cwiseMax(0.0).cwiseProduct(mask);
    if (trace != nullptr) {
      trace->pre[l] = pre;
      trace->mask[l] = mask;
      trace->hidden[l] = next;
    }
    h = std::move(next);
  }
  if (trace != nullptr) {
    trace->input = input;
    trace->kink_gap = gap;
  }
  return mlp.weight[2] * h + mlp.bias[2];
}

Vector mlp_backward(const Mlp& mlp, const MlpTrace& trace, const Vector& d_out,
                    Mlp& grad) {
  grad.weight[2] += d_out * trace.hidden[1].transpose();
  grad.bias[2] += d_out;
  Vector d_h = mlp.weight[2].transpose() * d_out;
  for (int l = 1; l >= 0; --l) {
    Vector d_pre = d_h.cwiseProduct(trace.mask[l]);
    for (Index i = 0; i < d_pre.size(); ++i) {
      if (!(trace.pre[l][i] > 0.0)) d_pre[i] = 0.0;
    }
    const Vector& below = l == 0 ? trace.input : trace.hidden[0];
    grad.weight[l] += d_pre * below.transpose();
    grad.bias[l] += d_pre;
    d_h = mlp.weight[l].transpose() * d_pre;
  }
  return d_h;
}

IntersectionParams IntersectionParams::zeros(Index dim) {
  return {Mlp::zeros(dim), Mlp::zeros(dim)};
}

IntersectionParams IntersectionParams::glorot(Index dim, std::mt19937_64& rng) {
  Mlp center = Mlp::glorot(dim, rng);
  Mlp offset = Mlp::glorot(dim, rng);
  return {std::move(center), std::move(offset)};
}

Hypercube intersect(const Hypercube& a, const Hypercube& b,
                    const IntersectionParams& params, IntersectionTrace* trace,
                    const Dropout& dropout) {
  if (a.dim() != b.dim()) {
    throw ValidationError(
        fmt::format("cannot intersect boxes of dimension {} and {}", a.dim(), b.dim()));
  }
  const Index d = a.dim();
  MlpTrace trace_a;
  MlpTrace trace_b;
  MlpTrace trace_offset;
  const bool keep = trace != nullptr;
  const Vector logit_a = mlp_forward(params.center_mlp, a.center, keep ? &trace_a : nullptr, dropout);
  const Vector logit_b = mlp_forward(params.center_mlp, b.center, keep ? &trace_b : nullptr, dropout);

  Vector weight_a(d);
  Vector weight_b(d);
  for (Index z = 0; z < d; ++z) {
    const double peak = std::max(logit_a[z], logit_b[z]);
    const double ea = std::exp(logit_a[z] - peak);
    const double eb = std::exp(logit_b[z] - peak);
    weight_a[z] = ea / (ea + eb);
    weight_b[z] = eb / (ea + eb);
  }

  const Vector gate_logit = mlp_forward(params.offset_mlp, a.offset + b.offset,
                                        keep ? &trace_offset : nullptr, dropout);
  const Vector gate = gate_logit.unaryExpr([](double x) { return sigmoid(x); });
  Vector min_offset(d);
  std::vector<bool> from_a(d);
  double gap = std::numeric_limits<double>::infinity();
  for (Index z = 0; z < d; ++z) {
    from_a[z] = a.offset[z] <= b.offset[z];
    min_offset[z] = from_a[z] ? a.offset[z] : b.offset[z];
    // Two clamped-to-zero offsets tie without a kink: neither can move.
    if (a.offset[z] > 0.0 || b.offset[z] > 0.0) {
      gap = std::min(gap, std::abs(a.offset[z] - b.offset[z]));
    }
  }

  Hypercube out{weight_a.cwiseProduct(a.center) + weight_b.cwiseProduct(b.center),
                min_offset.cwiseProduct(gate)};
  if (keep) {
    trace->a = a;
    trace->b = b;
    trace->center_a = std::move(trace_a);
    trace->center_b = std::move(trace_b);
    trace->offset = std::move(trace_offset);
    trace->weight_a = std::move(weight_a);
    trace->weight_b = std::move(weight_b);
    trace->min_offset = std::move(min_offset);
    trace->min_from_a = std::move(from_a);
    trace->gate = gate;
    trace->kink_gap = std::min({gap, trace->center_a.kink_gap,
                                trace->center_b.kink_gap, trace->offset.kink_gap});
  }
  return out;
}

void intersect_backward(const IntersectionParams& params,
                        const IntersectionTrace& trace, const Hypercube& d_out,
                        IntersectionParams& grad, Hypercube& d_a,
                        Hypercube& d_b) {
  const Index d = trace.a.dim();
  d_a.center += trace.weight_a.cwiseProduct(d_out.center);
  d_b.center += trace.weight_b.cwiseProduct(d_out.center);
  const Vector d_weight_a = d_out.center.cwiseProduct(trace.a.center);
  const Vector d_weight_b = d_out.center.cwiseProduct(trace.b.center);
  // weight_a = sigmoid(logit_a - logit_b), weight_b = 1 - weight_a
  const Vector d_logit_a = (d_weight_a - d_weight_b)
                               .cwiseProduct(trace.weight_a)
                               .cwiseProduct(trace.weight_b);
  d_a.center += mlp_backward(params.center_mlp, trace.center_a, d_logit_a, grad.center_mlp);
  d_b.center += mlp_backward(params.center_mlp, trace.center_b, -d_logit_a, grad.center_mlp);

  const Vector d_min = d_out.offset.cwiseProduct(trace.gate);
  const Vector d_gate = d_out.offset.cwiseProduct(trace.min_offset);
  const Vector d_gate_logit =
      d_gate.array() * trace.gate.array() * (1.0 - trace.gate.array());
  const Vector d_sum =
      mlp_backward(params.offset_mlp, trace.offset, d_gate_logit, grad.offset_mlp);
  d_a.offset += d_sum;
  d_b.offset += d_sum;
  for (Index z = 0; z < d; ++z) {
    if (trace.min_from_a[z]) {
      d_a.offset[z] += d_min[z];
    } else {
      d_b.offset[z] += d_min[z];
    }
  }
}

}  // namespace cuberec
