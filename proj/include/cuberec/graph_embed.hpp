#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/SparseCore>

#include "cuberec/dataset.hpp"
#include "cuberec/types.hpp"

namespace cuberec {

// Point embeddings for every user and item, one row per entity.
struct EmbeddingTable {
  RowMatrix users;
  RowMatrix items;

  Index dim() const { return static_cast<Index>(users.cols()); }
  static EmbeddingTable zeros(Index n_users, Index n_items, Index dim);
  bool all_finite() const;
};

// D^-1/2 A D^-1/2 over the stacked (users, items) node set, where
// A = [[S, R], [R^T, 0]]. Nodes without edges have empty rows.
struct NormalizedAdjacency {
  Eigen::SparseMatrix<double, Eigen::RowMajor> matrix;
  std::vector<Index> degree;
  Index num_users = 0;
  Index num_items = 0;
};

NormalizedAdjacency build_adjacency(const Dataset& dataset, bool use_social);

// Layer-mean of E^(l) = A_hat E^(l-1), l = 0..layers.
EmbeddingTable propagate(const EmbeddingTable& table,
                         const NormalizedAdjacency& adjacency, int layers);

// Sum of max(0, margin + |u - v+|^2 - |u - v-|^2). When `grad` is set,
// gradients are accumulated into it (same shape as `table`).
LossValue user_loss(const EmbeddingTable& table, std::span<const Triplet> triples,
                    double margin, EmbeddingTable* grad = nullptr);

struct PretrainConfig {
  int dim = 64;
  int layers = 3;
  double margin = 0.5;
  double lr = 1e-3;
  int batch_size = 256;
  int negatives = 5;
  int epochs = 200;
  double tolerance = 1e-4;
  bool use_social = true;
  std::uint64_t seed = 1;
};

struct PretrainEpoch {
  int epoch = 0;
  double loss = 0.0;
  double seconds = 0.0;
};

struct PretrainResult {
  EmbeddingTable base;        // trained E^(0)
  EmbeddingTable propagated;  // layer-mean embeddings handed to stage 2
  std::vector<PretrainEpoch> epochs;
};

// Seeded uniform(-0.1/sqrt(d), 0.1/sqrt(d)) initialization.
EmbeddingTable init_embeddings(Index n_users, Index n_items, int dim,
                               std::uint64_t seed);

// Mini-batch Adam on the user-level hinge loss over propagated embeddings.
// Propagation is recomputed on the current E^(0) at every step.
PretrainResult pretrain(
    const Dataset& dataset, const PretrainConfig& config,
    const std::function<void(const PretrainEpoch&)>& on_epoch = {});

}  // namespace cuberec
