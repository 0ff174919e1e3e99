#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "cuberec/adam.hpp"
#include "cuberec/checkpoint.hpp"
#include "cuberec/dataset.hpp"
#include "cuberec/model.hpp"
#include "cuberec/ssl.hpp"

namespace cuberec {

// Distance used for group-item pairs: the box distance, or the squared
// center distance when hyper.point_distance is set.
double group_item_distance(const Hypercube& cube,
                           const Eigen::Ref<const Vector>& item,
                           const HyperParams& hyper);

// Group-level hinge loss over (group, positive item, negative item) triples.
// Each distinct group is composed once from the current member embeddings.
LossValue group_loss(const ModelParams& params, std::span<const Triplet> triples,
                     const Dataset& dataset, ModelParams* grad = nullptr,
                     const Dropout& dropout = {});

struct StepLosses {
  LossValue group;
  LossValue self;
  double combined = 0.0;
};

// Loss of one stage-2 batch with its self-supervision pairs, plus the
// gradient of group + mu * self when `grad` is set. Pairs and negatives are
// drawn from `rng`; dropout is active when `training`.
StepLosses stage2_objective(const ModelParams& params,
                            std::span<const Triplet> batch,
                            const Dataset& dataset,
                            const OverlapIndex& overlaps, std::mt19937_64& rng,
                            ModelParams* grad, bool training);

// One Adam step on group + mu * self over every parameter, embeddings
// included. Losses are those before the update.
StepLosses stage2_step(ModelParams& params, AdamState& adam,
                       std::span<const Triplet> batch, const Dataset& dataset,
                       const OverlapIndex& overlaps, std::mt19937_64& rng);

struct EpochRecord {
  int stage = 2;  // 1 = pretraining, 2 = group stage
  int epoch = 0;
  double user_loss = 0.0;
  double group_loss = 0.0;
  double self_loss = 0.0;
  double combined = 0.0;
  double val_recall = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::optional<std::filesystem::path> checkpoint;
  std::int64_t best_epoch = -1;
};

struct TrainOptions {
  // Receives pretrain.ckpt, last.ckpt (every epoch) and model.ckpt.
  std::optional<std::filesystem::path> checkpoint_dir;
  // Continue stage 2 from a last.ckpt written by an earlier run.
  std::optional<std::filesystem::path> resume;
  // Keep the parameters with the best validation Recall@10.
  bool select_on_validation = true;
  int threads = 1;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  ModelParams model;
  TrainReport report;
};

// Pretraining, then stage-2 epochs until the budget is spent or the
// combined loss stops changing by more than the relative tolerance.
TrainResult train(const Dataset& dataset, const HyperParams& hyper,
                  const TrainOptions& options = {});

}  // namespace cuberec
