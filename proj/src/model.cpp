#include "cuberec/model.hpp"

#include <cmath>

#include <fmt/format.h>

namespace cuberec {

void HyperParams::validate() const {
  auto require = [](bool ok, std::string_view what) {
    if (!ok) throw ValidationError(fmt::format("invalid hyperparameter: {}", what));
  };
  require(dim >= 1, "d must be >= 1");
  require(layers >= 0, "layers must be >= 0");
  require(gamma >= 0.0, "gamma must be >= 0");
  require(mu >= 0.0, "mu must be >= 0");
  require(margin_user >= 0.0 && margin_group >= 0.0 && margin_ssl >= 0.0,
          "margins must be >= 0");
  require(lr >= 0.0 && std::isfinite(lr), "lr must be finite and >= 0");
  require(batch_size >= 1, "batch size must be >= 1");
  require(negatives >= 1, "negatives must be >= 1");
  require(rho > 0.0 && rho <= 1.0, "rho must be in (0, 1]");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
  require(pretrain_epochs >= 0 && train_epochs >= 0, "epochs must be >= 0");
  require(tolerance >= 0.0, "tolerance must be >= 0");
}

std::string_view variant_name(Variant variant) {
  return variant == Variant::kGeometric ? "cuberec-g" : "cuberec-a";
}

Variant parse_variant(std::string_view name) {
  if (name == "cuberec-g" || name == "g" || name == "geometric") {
    return Variant::kGeometric;
  }
  if (name == "cuberec-a" || name == "a" || name == "attentive") {
    return Variant::kAttentive;
  }
  throw ValidationError(fmt::format(
      "unknown variant '{}' (expected cuberec-g or cuberec-a)", name));
}

namespace {

template <class Params, class Fn>
void visit_tensors(Params& params, Fn&& fn) {
  fn(params.embeddings.users);
  fn(params.embeddings.items);
  std::visit(
      [&](auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, GeometricComposer>) {
          fn(c.center_proj);
          fn(c.offset_proj_raw);
        } else {
          fn(c.query);
          fn(c.key_proj);
          fn(c.value_proj);
          fn(c.center_proj);
          fn(c.offset_proj);
          fn(c.offset_bias);
        }
      },
      params.composer);
  for (auto* mlp : {&params.intersection.center_mlp, &params.intersection.offset_mlp}) {
    for (int l = 0; l < 3; ++l) {
      fn(mlp->weight[l]);
      fn(mlp->bias[l]);
    }
  }
}

}  // namespace

std::vector<std::span<double>> parameter_tensors(ModelParams& params) {
  std::vector<std::span<double>> out;
  visit_tensors(params, [&](auto& t) {
    out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  return out;
}

std::vector<std::span<const double>> parameter_tensors(const ModelParams& params) {
  std::vector<std::span<const double>> out;
  visit_tensors(params, [&](const auto& t) {
    out.emplace_back(t.data(), static_cast<std::size_t>(t.size()));
  });
  return out;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams out = params;
  set_zero(out);
  return out;
}

void set_zero(ModelParams& params) {
  visit_tensors(params, [](auto& t) { t.setZero(); });
}

bool all_finite(const ModelParams& params) {
  for (const auto& t : parameter_tensors(params)) {
    for (double x : t) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

namespace {

enum SeedStream : std::uint64_t { kComposer = 21, kIntersection = 22 };

}  // namespace

ModelParams init_model(EmbeddingTable embeddings, const HyperParams& hyper) {
  const Index d = embeddings.dim();
  ModelParams params;
  params.hyper = hyper;
  std::mt19937_64 rng(derive_seed(hyper.seed, kComposer));
  const double noise = 0.01;
  std::uniform_real_distribution<double> jitter(-noise, noise);
  auto perturb = [&](auto& t) {
    for (Index i = 0; i < t.size(); ++i) t.data()[i] += jitter(rng);
  };
  if (hyper.variant == Variant::kGeometric) {
    GeometricComposer c = GeometricComposer::identity(d);
    perturb(c.center_proj);
    params.composer = std::move(c);
  } else {
    AttentiveComposer c = AttentiveComposer::identity(d);
    perturb(c.query);
    perturb(c.key_proj);
    perturb(c.value_proj);
    perturb(c.center_proj);
    perturb(c.offset_proj);
    // Start with a small positive offset so the rectifier is open.
    c.offset_bias.setConstant(0.05);
    params.composer = std::move(c);
  }
  std::mt19937_64 mlp_rng(derive_seed(hyper.seed, kIntersection));
  params.intersection = IntersectionParams::glorot(d, mlp_rng);
  params.embeddings = std::move(embeddings);
  return params;
}

Matrix gather_members(const RowMatrix& users, std::span<const Index> ids) {
  Matrix out(users.cols(), static_cast<Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) {
    out.col(static_cast<Index>(j)) = users.row(ids[j]).transpose();
  }
  return out;
}

}  // namespace cuberec
