#include "cuberec/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <unordered_map>

#include <fmt/format.h>

#include "cuberec/evaluator.hpp"

namespace cuberec {

namespace {

enum SeedStream : std::uint64_t { kStage2Epoch = 31 };

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

// Distinct anchors in order of first appearance.
std::vector<Index> distinct_anchors(std::span<const Triplet> triples) {
  std::vector<Index> order;
  std::unordered_map<Index, std::size_t> seen;
  for (const auto& t : triples) {
    if (seen.emplace(t.anchor, order.size()).second) order.push_back(t.anchor);
  }
  return order;
}

void scatter_members(std::span<const Index> ids, const Matrix& d_members,
                     RowMatrix& d_users) {
  for (std::size_t k = 0; k < ids.size(); ++k) {
    d_users.row(ids[k]) += d_members.col(static_cast<Index>(k)).transpose();
  }
}

// dst += scale * src over every tensor.
void add_scaled(ModelParams& dst, const ModelParams& src, double scale) {
  auto d = parameter_tensors(dst);
  auto s = parameter_tensors(std::as_const(src));
  for (std::size_t t = 0; t < d.size(); ++t) {
    for (std::size_t i = 0; i < d[t].size(); ++i) d[t][i] += scale * s[t][i];
  }
}

}  // namespace

double group_item_distance(const Hypercube& cube,
                           const Eigen::Ref<const Vector>& item,
                           const HyperParams& hyper) {
  return hyper.point_distance ? center_distance(cube, item)
                              : distance_point_to_cube(cube, item, hyper.gamma);
}

LossValue group_loss(const ModelParams& params, std::span<const Triplet> triples,
                     const Dataset& dataset, ModelParams* grad,
                     const Dropout& dropout) {
  const HyperParams& hyper = params.hyper;
  const Index dim = params.dim();
  LossValue loss;

  struct Composed {
    Hypercube cube;
    CompositionTrace trace;
    Hypercube d_cube;
  };
  const std::vector<Index> groups = distinct_anchors(triples);
  std::unordered_map<Index, std::size_t> slot;
  std::vector<Composed> composed(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const Index g = groups[i];
    if (g < 0 || g >= dataset.num_groups()) {
      throw ValidationError(fmt::format("group index {} out of range", g));
    }
    const auto ids = dataset.members(g);
    if (ids.empty()) {
      throw ValidationError(
          fmt::format("group {} has no members", dataset.groups().name(g)));
    }
    slot.emplace(g, i);
    const Matrix members = gather_members(params.embeddings.users, ids);
    composed[i].cube = compose(members, params.composer, &composed[i].trace, dropout);
    composed[i].d_cube = Hypercube::zeros(dim);
    loss.note_kink(composed[i].trace.kink_gap);
  }

  Vector d_point(dim);
  for (const auto& t : triples) {
    Composed& c = composed[slot.at(t.anchor)];
    const Vector pos = params.embeddings.items.row(t.positive).transpose();
    const Vector neg = params.embeddings.items.row(t.negative).transpose();
    const double d_pos = group_item_distance(c.cube, pos, hyper);
    const double d_neg = group_item_distance(c.cube, neg, hyper);
    if (!hyper.point_distance) {
      loss.note_kink(cube_distance(c.cube, pos).kink_gap);
      loss.note_kink(cube_distance(c.cube, neg).kink_gap);
    }
    const double hinge = hyper.margin_group + d_pos - d_neg;
    loss.note_kink(hinge);
    if (hinge <= 0.0) continue;
    loss.value += hinge;
    ++loss.active;
    if (grad == nullptr) continue;

    for (const auto& [item, point, sign] :
         {std::tuple{t.positive, &pos, 1.0}, std::tuple{t.negative, &neg, -1.0}}) {
      d_point.setZero();
      if (hyper.point_distance) {
        center_distance_backward(c.cube, *point, sign, c.d_cube, d_point);
      } else {
        cube_distance_backward(c.cube, *point, hyper.gamma, sign, c.d_cube,
                               d_point);
      }
      grad->embeddings.items.row(item) += d_point.transpose();
    }
  }

  if (grad != nullptr) {
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const auto ids = dataset.members(groups[i]);
      Matrix d_members = Matrix::Zero(dim, static_cast<Index>(ids.size()));
      compose_backward(params.composer, composed[i].trace, composed[i].d_cube,
                       grad->composer, d_members);
      scatter_members(ids, d_members, grad->embeddings.users);
    }
  }
  return loss;
}

StepLosses stage2_objective(const ModelParams& params,
                            std::span<const Triplet> batch,
                            const Dataset& dataset,
                            const OverlapIndex& overlaps, std::mt19937_64& rng,
                            ModelParams* grad, bool training) {
  const HyperParams& hyper = params.hyper;
  const Dropout dropout =
      training ? Dropout{hyper.dropout, &rng} : Dropout{};
  StepLosses out;
  out.group = group_loss(params, batch, dataset, grad, dropout);

  if (hyper.mu > 0.0) {
    std::optional<ModelParams> ssl_grad;
    if (grad != nullptr) ssl_grad = zeros_like(params);
    for (const Index g : distinct_anchors(batch)) {
      const GroupPair pair = make_pair(g, dataset, overlaps, hyper.rho, rng);
      const std::vector<Index> negatives =
          sample_relay_negatives(pair, dataset.num_users(), rng);
      out.self += ssl_loss(pair, negatives, params,
                           ssl_grad ? &*ssl_grad : nullptr, dropout);
    }
    if (grad != nullptr) add_scaled(*grad, *ssl_grad, hyper.mu);
  }

  out.combined = out.group.value + hyper.mu * out.self.value;
  if (!std::isfinite(out.combined)) {
    throw NumericalError(fmt::format(
        "non-finite stage-2 loss (group {}, self {})", out.group.value,
        out.self.value));
  }
  if (grad != nullptr && !all_finite(*grad)) {
    throw NumericalError("non-finite gradient in stage-2 step");
  }
  return out;
}

StepLosses stage2_step(ModelParams& params, AdamState& adam,
                       std::span<const Triplet> batch, const Dataset& dataset,
                       const OverlapIndex& overlaps, std::mt19937_64& rng) {
  ModelParams grad = zeros_like(params);
  const StepLosses losses =
      stage2_objective(params, batch, dataset, overlaps, rng, &grad, true);
  const auto p = parameter_tensors(params);
  const auto g = parameter_tensors(grad);
  adam_step(p, g, adam, AdamConfig{.lr = params.hyper.lr});
  return losses;
}

namespace {

PretrainConfig pretrain_config(const HyperParams& hyper) {
  PretrainConfig cfg;
  cfg.dim = hyper.dim;
  cfg.layers = hyper.layers;
  cfg.margin = hyper.margin_user;
  cfg.lr = hyper.lr;
  cfg.batch_size = hyper.batch_size;
  cfg.negatives = hyper.negatives;
  cfg.epochs = hyper.pretrain_epochs;
  cfg.tolerance = hyper.tolerance;
  cfg.use_social = hyper.use_social;
  cfg.seed = hyper.seed;
  return cfg;
}

std::filesystem::path resume_file(const std::filesystem::path& path) {
  return std::filesystem::is_directory(path) ? path / "last.ckpt" : path;
}

void check_compatible(const ModelParams& params, const Dataset& dataset,
                      const HyperParams& hyper) {
  if (params.embeddings.users.rows() != dataset.num_users() ||
      params.embeddings.items.rows() != dataset.num_items()) {
    throw ValidationError(fmt::format(
        "checkpoint has {} users and {} items, dataset has {} and {}",
        params.embeddings.users.rows(), params.embeddings.items.rows(),
        dataset.num_users(), dataset.num_items()));
  }
  if (params.dim() != hyper.dim || params.variant() != hyper.variant) {
    throw ValidationError(fmt::format(
        "checkpoint is {} with d={}, configuration asks for {} with d={}",
        variant_name(params.variant()), params.dim(),
        variant_name(hyper.variant), hyper.dim));
  }
}

double validation_recall(const ModelParams& params, const Dataset& dataset,
                         int threads) {
  EvalOptions opts;
  opts.ks = {10};
  opts.split = Split::kValidation;
  opts.buckets = false;
  opts.threads = threads;
  return evaluate(params, dataset, opts).recall(10);
}

}  // namespace

TrainResult train(const Dataset& dataset, const HyperParams& hyper,
                  const TrainOptions& options) {
  hyper.validate();
  TrainReport report;
  TrainingState state;
  std::optional<ModelParams> best;
  const auto& dir = options.checkpoint_dir;
  if (dir) std::filesystem::create_directories(*dir);

  if (options.resume) {
    const auto file = resume_file(*options.resume);
    state = load_checkpoint(file);
    check_compatible(state.params, dataset, hyper);
    state.params.hyper = hyper;
    if (state.best_epoch >= 0) {
      const auto best_file = file.parent_path() / "best.ckpt";
      if (std::filesystem::exists(best_file)) {
        best = load_checkpoint(best_file).params;
        best->hyper = hyper;
      }
    }
  } else {
    PretrainResult pre = pretrain(
        dataset, pretrain_config(hyper), [&](const PretrainEpoch& e) {
          EpochRecord row;
          row.stage = 1;
          row.epoch = e.epoch;
          row.user_loss = e.loss;
          row.seconds = e.seconds;
          report.epochs.push_back(row);
          if (options.on_epoch) options.on_epoch(row);
        });
    if (dir) {
      save_embeddings(*dir / "pretrain.ckpt", pre.base, hyper.seed,
                      static_cast<std::int64_t>(pre.epochs.size()));
    }
    state.params = init_model(std::move(pre.propagated), hyper);
    state.adam = AdamState(parameter_tensors(state.params));
  }

  const bool select =
      options.select_on_validation && dataset.count(Split::kValidation) > 0;
  const OverlapIndex overlaps(dataset);

  for (std::int64_t epoch = state.epochs_done; epoch < hyper.train_epochs;
       ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(derive_seed(hyper.seed, kStage2Epoch,
                                    static_cast<std::uint64_t>(epoch)));
    TripletBatch batch =
        sample_triplets(dataset, Level::kGroup, hyper.negatives, rng);
    std::shuffle(batch.triples.begin(), batch.triples.end(), rng);

    EpochRecord row;
    row.epoch = static_cast<int>(epoch);
    const std::span<const Triplet> all(batch.triples);
    for (std::size_t begin = 0; begin < all.size();
         begin += static_cast<std::size_t>(hyper.batch_size)) {
      const auto chunk = all.subspan(
          begin, std::min<std::size_t>(hyper.batch_size, all.size() - begin));
      const StepLosses step =
          stage2_step(state.params, state.adam, chunk, dataset, overlaps, rng);
      row.group_loss += step.group.value;
      row.self_loss += step.self.value;
      row.combined += step.combined;
    }

    if (select) {
      row.val_recall = validation_recall(state.params, dataset, options.threads);
      if (row.val_recall > state.best_metric) {
        state.best_metric = row.val_recall;
        state.best_epoch = epoch;
        best = state.params;
        if (dir) {
          save_checkpoint(*dir / "best.ckpt",
                          TrainingState{*best, {}, epoch + 1, row.combined,
                                        state.best_metric, epoch});
        }
      }
    }

    const double previous = state.last_loss;
    state.last_loss = row.combined;
    state.epochs_done = epoch + 1;
    row.seconds = seconds_since(start);
    report.epochs.push_back(row);
    if (options.on_epoch) options.on_epoch(row);
    if (dir) save_checkpoint(*dir / "last.ckpt", state);

    const bool converged =
        row.combined == 0.0 ||
        (std::isfinite(previous) &&
         std::abs(previous - row.combined) /
                 std::max(std::abs(previous), 1e-12) <
             hyper.tolerance);
    if (converged) break;
  }

  TrainResult result;
  report.best_epoch = state.best_epoch;
  result.model = (select && best) ? std::move(*best) : state.params;
  if (dir) {
    const auto path = *dir / "model.ckpt";
    save_checkpoint(path, TrainingState{result.model, {}, state.epochs_done,
                                        state.last_loss, state.best_metric,
                                        state.best_epoch});
    report.checkpoint = path;
  }
  result.report = std::move(report);
  return result;
}

}  // namespace cuberec
