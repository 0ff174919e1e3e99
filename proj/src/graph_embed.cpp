#include "cuberec/graph_embed.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "cuberec/adam.hpp"

namespace cuberec {

EmbeddingTable EmbeddingTable::zeros(Index n_users, Index n_items, Index dim) {
  return {RowMatrix::Zero(n_users, dim), RowMatrix::Zero(n_items, dim)};
}

bool EmbeddingTable::all_finite() const {
  return users.allFinite() && items.allFinite();
}

NormalizedAdjacency build_adjacency(const Dataset& dataset, bool use_social) {
  NormalizedAdjacency adj;
  adj.num_users = dataset.num_users();
  adj.num_items = dataset.num_items();
  const Index n = adj.num_users + adj.num_items;

  std::vector<std::pair<Index, Index>> edges;
  edges.reserve(2 * (dataset.user_item().size() + dataset.social().size()));
  for (const auto& ui : dataset.user_item()) {
    const Index item_node = adj.num_users + ui.item;
    edges.emplace_back(ui.user, item_node);
    edges.emplace_back(item_node, ui.user);
  }
  if (use_social) {
    for (const auto& e : dataset.social()) {
      edges.emplace_back(e.a, e.b);
      edges.emplace_back(e.b, e.a);
    }
  }

  adj.degree.assign(n, 0);
  for (const auto& [row, col] : edges) ++adj.degree[row];

  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(edges.size());
  for (const auto& [row, col] : edges) {
    const double eta = 1.0 / std::sqrt(static_cast<double>(adj.degree[row]) *
                                       static_cast<double>(adj.degree[col]));
    entries.emplace_back(row, col, eta);
  }
  adj.matrix.resize(n, n);
  adj.matrix.setFromTriplets(entries.begin(), entries.end());
  return adj;
}

EmbeddingTable propagate(const EmbeddingTable& table,
                         const NormalizedAdjacency& adjacency, int layers) {
  if (layers < 0) throw ValidationError("propagation layers must be >= 0");
  const Index n_users = static_cast<Index>(table.users.rows());
  const Index n_items = static_cast<Index>(table.items.rows());
  if (n_users != adjacency.num_users || n_items != adjacency.num_items ||
      table.users.cols() != table.items.cols()) {
    throw ValidationError(fmt::format(
        "embedding table ({} users, {} items) does not match adjacency "
        "({} users, {} items)",
        n_users, n_items, adjacency.num_users, adjacency.num_items));
  }
  if (layers == 0) return table;

  const Index dim = table.dim();
  RowMatrix layer(n_users + n_items, dim);
  layer.topRows(n_users) = table.users;
  layer.bottomRows(n_items) = table.items;
  RowMatrix sum = layer;
  for (int l = 0; l < layers; ++l) {
    RowMatrix next = adjacency.matrix * layer;
    sum += next;
    layer.swap(next);
  }
  sum /= static_cast<double>(layers + 1);
  return {sum.topRows(n_users), sum.bottomRows(n_items)};
}

LossValue user_loss(const EmbeddingTable& table,
                    std::span<const Triplet> triples, double margin,
                    EmbeddingTable* grad) {
  LossValue loss;
  for (const auto& t : triples) {
    const auto u = table.users.row(t.anchor);
    const auto pos = table.items.row(t.positive);
    const auto neg = table.items.row(t.negative);
    const double d_pos = (u - pos).squaredNorm();
    const double d_neg = (u - neg).squaredNorm();
    const double hinge = margin + d_pos - d_neg;
    loss.note_kink(hinge);
    if (hinge <= 0.0) continue;
    loss.value += hinge;
    ++loss.active;
    if (grad != nullptr) {
      // d/du = 2(u - v+) - 2(u - v-) = 2(v- - v+)
      grad->users.row(t.anchor) += 2.0 * (neg - pos);
      grad->items.row(t.positive) += 2.0 * (pos - u);
      grad->items.row(t.negative) += 2.0 * (u - neg);
    }
  }
  return loss;
}

EmbeddingTable init_embeddings(Index n_users, Index n_items, int dim,
                               std::uint64_t seed) {
  const double bound = 0.1 / std::sqrt(static_cast<double>(dim));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-bound, bound);
  EmbeddingTable table = EmbeddingTable::zeros(n_users, n_items, dim);
  for (Index i = 0; i < table.users.size(); ++i) table.users.data()[i] = uniform(rng);
  for (Index i = 0; i < table.items.size(); ++i) table.items.data()[i] = uniform(rng);
  return table;
}

namespace {

std::vector<std::span<double>> tensors(EmbeddingTable& table) {
  return {std::span<double>(table.users.data(), table.users.size()),
          std::span<double>(table.items.data(), table.items.size())};
}

enum SeedStream : std::uint64_t { kInit = 11, kEpoch = 12 };

}  // namespace

PretrainResult pretrain(const Dataset& dataset, const PretrainConfig& config,
                        const std::function<void(const PretrainEpoch&)>& on_epoch) {
  if (config.dim < 1 || config.batch_size < 1 || config.epochs < 0) {
    throw ValidationError("invalid pretraining configuration");
  }
  PretrainResult result;
  result.base = init_embeddings(dataset.num_users(), dataset.num_items(),
                                config.dim, derive_seed(config.seed, kInit));
  const NormalizedAdjacency adj = build_adjacency(dataset, config.use_social);

  auto params = tensors(result.base);
  AdamState state(params);
  const AdamConfig adam{.lr = config.lr};
  EmbeddingTable grad_out =
      EmbeddingTable::zeros(dataset.num_users(), dataset.num_items(), config.dim);

  double previous = std::numeric_limits<double>::quiet_NaN();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(derive_seed(config.seed, kEpoch, epoch));
    TripletBatch batch =
        sample_triplets(dataset, Level::kUser, config.negatives, rng);
    std::shuffle(batch.triples.begin(), batch.triples.end(), rng);

    double total = 0.0;
    const std::span<const Triplet> all(batch.triples);
    for (std::size_t begin = 0; begin < all.size(); begin += config.batch_size) {
      const auto chunk = all.subspan(
          begin, std::min<std::size_t>(config.batch_size, all.size() - begin));
      const EmbeddingTable current = propagate(result.base, adj, config.layers);
      grad_out.users.setZero();
      grad_out.items.setZero();
      const LossValue loss = user_loss(current, chunk, config.margin, &grad_out);
      if (!std::isfinite(loss.value) || !grad_out.all_finite()) {
        throw NumericalError(fmt::format(
            "non-finite user loss at pretraining epoch {}", epoch));
      }
      total += loss.value;
      // The propagation operator is symmetric, so its adjoint is itself.
      EmbeddingTable grad_base = propagate(grad_out, adj, config.layers);
      adam_step(params, tensors(grad_base), state, adam);
    }

    const PretrainEpoch row{
        epoch, total,
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count()};
    result.epochs.push_back(row);
    if (on_epoch) on_epoch(row);
    if (total == 0.0) break;
    if (std::isfinite(previous) &&
        std::abs(previous - total) / std::max(std::abs(previous), 1e-12) <
            config.tolerance) {
      break;
    }
    previous = total;
  }

  result.propagated = propagate(result.base, adj, config.layers);
  return result;
}

}  // namespace cuberec
