#include "cuberec/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>

#include "cuberec/parallel.hpp"

namespace cuberec {

std::vector<Index> candidate_items(const Dataset& dataset, Index group,
                                   std::span<const Split> excluded) {
  std::vector<char> seen(dataset.num_items(), 0);
  for (const Split s : excluded) {
    for (const Index item : dataset.group_items(group, s)) seen[item] = 1;
  }
  std::vector<Index> out;
  out.reserve(dataset.num_items());
  for (Index item = 0; item < dataset.num_items(); ++item) {
    if (!seen[item]) out.push_back(item);
  }
  return out;
}

namespace {

struct ByDistance {
  std::span<const double> distance;  // indexed by position in candidates
  std::span<const Index> candidates;
  bool operator()(std::size_t a, std::size_t b) const {
    if (distance[a] != distance[b]) return distance[a] < distance[b];
    return candidates[a] < candidates[b];
  }
};

// Positions of the best `limit` candidates, best first.
std::vector<std::size_t> top_positions(std::span<const Index> candidates,
                                       std::span<const double> distances,
                                       std::size_t limit) {
  if (candidates.size() != distances.size()) {
    throw ValidationError("candidate and distance counts differ");
  }
  for (const double d : distances) {
    if (std::isnan(d)) throw NumericalError("NaN item distance while ranking");
  }
  std::vector<std::size_t> pos(candidates.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  limit = std::min(limit, pos.size());
  const ByDistance less{distances, candidates};
  std::partial_sort(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(limit),
                    pos.end(), less);
  pos.resize(limit);
  return pos;
}

std::vector<double> item_distances(const Hypercube& cube,
                                   const RowMatrix& items,
                                   std::span<const Index> candidates,
                                   double gamma, bool point_distance) {
  std::vector<double> out(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const Vector v = items.row(candidates[i]).transpose();
    out[i] = point_distance ? center_distance(cube, v)
                            : distance_point_to_cube(cube, v, gamma);
  }
  return out;
}

Hypercube group_cube(const ModelParams& model, Index group,
                     const Dataset& dataset) {
  if (group < 0 || group >= dataset.num_groups()) {
    throw ValidationError(fmt::format("group index {} out of range", group));
  }
  const auto ids = dataset.members(group);
  for (const Index u : ids) {
    if (u < 0 || u >= model.embeddings.users.rows()) {
      throw ValidationError(fmt::format(
          "group {} references user {} without an embedding",
          dataset.groups().name(group), u));
    }
  }
  return compose(gather_members(model.embeddings.users, ids), model.composer);
}

}  // namespace

std::vector<Index> order_by_distance(std::span<const Index> candidates,
                                     std::span<const double> distances) {
  std::vector<Index> out;
  out.reserve(candidates.size());
  for (const std::size_t p :
       top_positions(candidates, distances, candidates.size())) {
    out.push_back(candidates[p]);
  }
  return out;
}

RankedList rank_items(const ModelParams& model, Index group,
                      const Dataset& dataset, std::span<const Split> excluded,
                      bool point_distance) {
  const Hypercube cube = group_cube(model, group, dataset);
  const std::vector<Index> candidates = candidate_items(dataset, group, excluded);
  const std::vector<double> distances =
      item_distances(cube, model.embeddings.items, candidates,
                     model.hyper.gamma, point_distance || model.hyper.point_distance);
  RankedList out;
  out.group = group;
  for (const std::size_t p :
       top_positions(candidates, distances, candidates.size())) {
    out.items.push_back(candidates[p]);
    out.scores.push_back(-distances[p]);
  }
  return out;
}

double recall_at_k(std::span<const Index> ranked, std::span<const Index> truth,
                   int k) {
  if (k < 1) throw ValidationError("K must be >= 1");
  if (truth.empty()) throw ValidationError("ground truth is empty");
  const std::size_t limit = std::min<std::size_t>(k, ranked.size());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < limit; ++r) {
    if (std::find(truth.begin(), truth.end(), ranked[r]) != truth.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double ndcg_at_k(std::span<const Index> ranked, std::span<const Index> truth,
                 int k) {
  if (k < 1) throw ValidationError("K must be >= 1");
  if (truth.empty()) throw ValidationError("ground truth is empty");
  const std::size_t limit = std::min<std::size_t>(k, ranked.size());
  double dcg = 0.0;
  for (std::size_t r = 0; r < limit; ++r) {
    if (std::find(truth.begin(), truth.end(), ranked[r]) != truth.end()) {
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  }
  const std::size_t ideal_hits = std::min<std::size_t>(truth.size(), k);
  double ideal = 0.0;
  for (std::size_t r = 0; r < ideal_hits; ++r) {
    ideal += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  return dcg / ideal;
}

std::string_view size_bucket(std::size_t group_size) {
  if (group_size <= 1) return "1";
  if (group_size <= 3) return "2-3";
  if (group_size <= 5) return "4-5";
  if (group_size <= 7) return "6-7";
  if (group_size <= 9) return "8-9";
  return "10+";
}

const MetricCell& MetricReport::cell(int k, std::string_view bucket) const {
  const auto kit = std::find(ks.begin(), ks.end(), k);
  if (kit == ks.end()) {
    throw ValidationError(fmt::format("report has no K={}", k));
  }
  for (const auto& b : buckets) {
    if (b.name == bucket) return b.cells[kit - ks.begin()];
  }
  throw ValidationError(fmt::format("report has no bucket '{}'", bucket));
}

MetricReport evaluate(const ModelParams& model, const Dataset& dataset,
                      const EvalOptions& options) {
  if (options.ks.empty()) throw ValidationError("no K values to evaluate");
  for (const int k : options.ks) {
    if (k < 1) throw ValidationError("K must be >= 1");
  }
  std::vector<Split> excluded = {Split::kTrain};
  if (options.split == Split::kTest) excluded.push_back(Split::kValidation);
  if (options.split == Split::kTrain) {
    throw ValidationError("evaluation split must be val or test");
  }
  const bool point = options.point_distance || model.hyper.point_distance;
  const std::size_t max_k =
      static_cast<std::size_t>(*std::max_element(options.ks.begin(), options.ks.end()));

  std::vector<Index> groups;
  for (Index g = 0; g < dataset.num_groups(); ++g) {
    if (!dataset.group_items(g, options.split).empty()) groups.push_back(g);
  }

  // Per evaluated group, recall and NDCG for each K.
  const std::size_t nk = options.ks.size();
  std::vector<double> recall(groups.size() * nk), ndcg(groups.size() * nk);
  parallel_for(groups.size(), resolve_threads(options.threads), [&](std::size_t i) {
    const Index g = groups[i];
    const Hypercube cube = group_cube(model, g, dataset);
    const std::vector<Index> candidates = candidate_items(dataset, g, excluded);
    const std::vector<double> distances = item_distances(
        cube, model.embeddings.items, candidates, model.hyper.gamma, point);
    std::vector<Index> top;
    for (const std::size_t p : top_positions(candidates, distances, max_k)) {
      top.push_back(candidates[p]);
    }
    const auto truth = dataset.group_items(g, options.split);
    for (std::size_t j = 0; j < nk; ++j) {
      recall[i * nk + j] = recall_at_k(top, truth, options.ks[j]);
      ndcg[i * nk + j] = ndcg_at_k(top, truth, options.ks[j]);
    }
  });

  MetricReport report;
  report.ks = options.ks;
  const std::size_t n_buckets = options.buckets ? kBucketNames.size() : 1;
  for (std::size_t b = 0; b < n_buckets; ++b) {
    report.buckets.push_back({std::string(kBucketNames[b]),
                              std::vector<MetricCell>(nk)});
  }
  auto add = [&](BucketMetrics& bucket, std::size_t i) {
    for (std::size_t j = 0; j < nk; ++j) {
      bucket.cells[j].recall += recall[i * nk + j];
      bucket.cells[j].ndcg += ndcg[i * nk + j];
      ++bucket.cells[j].groups;
    }
  };
  for (std::size_t i = 0; i < groups.size(); ++i) {
    add(report.buckets.front(), i);
    if (!options.buckets) continue;
    const auto name = size_bucket(dataset.members(groups[i]).size());
    for (auto& bucket : report.buckets) {
      if (bucket.name == name) add(bucket, i);
    }
  }
  for (auto& bucket : report.buckets) {
    for (auto& c : bucket.cells) {
      if (c.groups == 0) continue;
      c.recall /= static_cast<double>(c.groups);
      c.ndcg /= static_cast<double>(c.groups);
    }
  }
  return report;
}

std::string format_report(const MetricReport& report,
                          std::string_view variant) {
  std::string out = fmt::format("{} ({} groups)\n", variant, report.groups());
  out += fmt::format("{:<8}{:>10}", "bucket", "n_groups");
  for (const int k : report.ks) {
    out += fmt::format("{:>12}{:>12}", fmt::format("Recall@{}", k),
                       fmt::format("NDCG@{}", k));
  }
  out += '\n';
  for (const auto& bucket : report.buckets) {
    out += fmt::format("{:<8}{:>10}", bucket.name, bucket.cells.front().groups);
    for (const auto& c : bucket.cells) {
      out += fmt::format("{:>12.4f}{:>12.4f}", c.recall, c.ndcg);
    }
    out += '\n';
  }
  return out;
}

void write_report_csv(std::ostream& out, const NamedReports& reports) {
  out << "variant,K,metric,bucket,value,n_groups\n";
  for (const auto& [name, report] : reports) {
    for (std::size_t j = 0; j < report.ks.size(); ++j) {
      for (const std::string_view metric : {"recall", "ndcg"}) {
        for (const auto& bucket : report.buckets) {
          const MetricCell& c = bucket.cells[j];
          out << fmt::format("{},{},{},{},{:.6f},{}\n", name, report.ks[j],
                             metric, bucket.name,
                             metric == "recall" ? c.recall : c.ndcg, c.groups);
        }
      }
    }
  }
}

std::string_view ablation_name(Ablation toggle) {
  switch (toggle) {
    case Ablation::kRemoveSocial: return "remove_sr";
    case Ablation::kPointDistance: return "point_distance";
    case Ablation::kRemoveSsl: return "remove_ssl";
  }
  return "unknown";
}

Ablation parse_ablation(std::string_view name) {
  std::string key(name);
  std::replace(key.begin(), key.end(), '-', '_');
  if (key == "remove_sr") return Ablation::kRemoveSocial;
  if (key == "point_distance") return Ablation::kPointDistance;
  if (key == "remove_ssl") return Ablation::kRemoveSsl;
  throw ValidationError(fmt::format(
      "unknown ablation '{}' (expected remove_sr, point_distance or remove_ssl)",
      name));
}

HyperParams apply_ablation(HyperParams hyper, Ablation toggle) {
  switch (toggle) {
    case Ablation::kRemoveSocial: hyper.use_social = false; break;
    case Ablation::kPointDistance: hyper.point_distance = true; break;
    case Ablation::kRemoveSsl: hyper.mu = 0.0; break;
  }
  return hyper;
}

NamedReports run_ablation(const Dataset& dataset, const HyperParams& hyper,
                          std::span<const Ablation> toggles,
                          const TrainOptions& train_options,
                          const EvalOptions& eval_options) {
  std::vector<std::pair<std::string, HyperParams>> runs = {{"default", hyper}};
  for (const Ablation t : toggles) {
    runs.emplace_back(std::string(ablation_name(t)), apply_ablation(hyper, t));
  }
  NamedReports out;
  for (const auto& [name, h] : runs) {
    TrainOptions opts = train_options;
    if (opts.checkpoint_dir) opts.checkpoint_dir = *opts.checkpoint_dir / name;
    opts.resume.reset();
    const TrainResult trained = train(dataset, h, opts);
    out.emplace_back(name, evaluate(trained.model, dataset, eval_options));
  }
  return out;
}

}  // namespace cuberec
