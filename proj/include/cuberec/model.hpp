#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cuberec/graph_embed.hpp"
#include "cuberec/hypercube.hpp"

namespace cuberec {

// Every tunable of the two training stages. Defaults are the published
// settings; margins default to 0.5 for all three hinge losses.
struct HyperParams {
  Variant variant = Variant::kGeometric;
  int dim = 64;
  int layers = 3;
  double gamma = 0.3;
  double mu = 0.7;
  double margin_user = 0.5;
  double margin_group = 0.5;
  double margin_ssl = 0.5;
  double lr = 1e-3;
  int batch_size = 256;
  int negatives = 5;
  double rho = 0.5;
  double dropout = 0.2;
  int pretrain_epochs = 200;
  int train_epochs = 100;
  double tolerance = 1e-4;
  bool use_social = true;
  bool point_distance = false;
  std::uint64_t seed = 2022;

  // Throws ValidationError for out-of-range values.
  void validate() const;
  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

std::string_view variant_name(Variant variant);
Variant parse_variant(std::string_view name);

struct ModelParams {
  EmbeddingTable embeddings;
  Composer composer;
  IntersectionParams intersection;
  HyperParams hyper;

  Index dim() const { return embeddings.dim(); }
  Variant variant() const { return variant_of(composer); }
};

// Mutable views over every trainable tensor in a fixed order: user and item
// embeddings, composer tensors, then the two intersection MLPs.
std::vector<std::span<double>> parameter_tensors(ModelParams& params);
std::vector<std::span<const double>> parameter_tensors(const ModelParams& params);

// Same shapes and hyper parameters, all tensors zero. Used as a gradient
// buffer.
ModelParams zeros_like(const ModelParams& params);
void set_zero(ModelParams& params);
bool all_finite(const ModelParams& params);

// Stage-2 initialization around pretrained embeddings. Center projections
// start at identity so centers live in the item space; the intersection
// MLPs get Glorot weights.
ModelParams init_model(EmbeddingTable embeddings, const HyperParams& hyper);

// Members of a group as a d x s matrix.
Matrix gather_members(const RowMatrix& users, std::span<const Index> ids);

}  // namespace cuberec
