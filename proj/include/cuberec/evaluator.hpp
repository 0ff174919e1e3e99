#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cuberec/dataset.hpp"
#include "cuberec/model.hpp"
#include "cuberec/trainer.hpp"

namespace cuberec {

// Candidate items of a group best first. Scores are negated distances.
struct RankedList {
  Index group = 0;
  std::vector<Index> items;
  std::vector<double> scores;
};

// Items of the group excluding those tagged with any of `excluded`.
std::vector<Index> candidate_items(const Dataset& dataset, Index group,
                                   std::span<const Split> excluded);

// Candidates sorted by ascending distance, ties by ascending item index.
std::vector<Index> order_by_distance(std::span<const Index> candidates,
                                     std::span<const double> distances);

inline constexpr std::array<Split, 2> kTrainAndValidation = {
    Split::kTrain, Split::kValidation};

// Scores every candidate of `group` against its composed box. The
// point-distance scorer is used when either the model or the override
// asks for it.
RankedList rank_items(const ModelParams& model, Index group,
                      const Dataset& dataset,
                      std::span<const Split> excluded = kTrainAndValidation,
                      bool point_distance = false);

double recall_at_k(std::span<const Index> ranked, std::span<const Index> truth,
                   int k);
// Binary relevance, log2(rank + 1) discount, normalized by the ideal DCG of
// min(|truth|, k) hits.
double ndcg_at_k(std::span<const Index> ranked, std::span<const Index> truth,
                 int k);

inline constexpr std::array<std::string_view, 7> kBucketNames = {
    "all", "1", "2-3", "4-5", "6-7", "8-9", "10+"};
// Size bucket of a group ("1", "2-3", ..., "10+").
std::string_view size_bucket(std::size_t group_size);

struct MetricCell {
  double recall = 0.0;
  double ndcg = 0.0;
  std::size_t groups = 0;
};

struct BucketMetrics {
  std::string name;
  std::vector<MetricCell> cells;  // aligned with MetricReport::ks
};

struct MetricReport {
  std::vector<int> ks;
  // "all" first, then the size buckets in ascending order.
  std::vector<BucketMetrics> buckets;

  const MetricCell& cell(int k, std::string_view bucket = "all") const;
  double recall(int k, std::string_view bucket = "all") const {
    return cell(k, bucket).recall;
  }
  double ndcg(int k, std::string_view bucket = "all") const {
    return cell(k, bucket).ndcg;
  }
  std::size_t groups() const { return buckets.front().cells.front().groups; }
};

struct EvalOptions {
  std::vector<int> ks = {10, 20};
  // Ground truth split; for validation only training items are excluded.
  Split split = Split::kTest;
  bool point_distance = false;
  bool buckets = true;
  int threads = 1;
};

// Mean Recall@K / NDCG@K over groups with at least one ground-truth item
// in the split, overall and per size bucket.
MetricReport evaluate(const ModelParams& model, const Dataset& dataset,
                      const EvalOptions& options = {});

using NamedReports = std::vector<std::pair<std::string, MetricReport>>;

std::string format_report(const MetricReport& report, std::string_view variant);
// Columns: variant,K,metric,bucket,value,n_groups.
void write_report_csv(std::ostream& out, const NamedReports& reports);

enum class Ablation { kRemoveSocial, kPointDistance, kRemoveSsl };
std::string_view ablation_name(Ablation toggle);
Ablation parse_ablation(std::string_view name);
HyperParams apply_ablation(HyperParams hyper, Ablation toggle);

// Trains and evaluates the default model and one model per toggle with the
// same seed. The first report is "default".
NamedReports run_ablation(const Dataset& dataset, const HyperParams& hyper,
                          std::span<const Ablation> toggles,
                          const TrainOptions& train_options,
                          const EvalOptions& eval_options);

}  // namespace cuberec
