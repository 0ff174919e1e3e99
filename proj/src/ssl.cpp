#include "cuberec/ssl.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace cuberec {

namespace {

std::vector<Index> overlapping_groups(Index group, const Dataset& dataset) {
  std::vector<Index> out;
  for (Index u : dataset.members(group)) {
    for (Index g : dataset.user_groups(u)) {
      if (g != group) out.push_back(g);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<Index> sorted_copy(std::span<const Index> values) {
  std::vector<Index> out(values.begin(), values.end());
  std::sort(out.begin(), out.end());
  return out;
}

GroupPair natural_pair(Index group, Index partner, const Dataset& dataset) {
  GroupPair pair;
  pair.group = group;
  pair.members.assign(dataset.members(group).begin(), dataset.members(group).end());
  pair.partner = partner;
  pair.partner_members.assign(dataset.members(partner).begin(),
                              dataset.members(partner).end());
  const auto a = sorted_copy(pair.members);
  const auto b = sorted_copy(pair.partner_members);
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                        std::back_inserter(pair.relay));
  pair.source = PairSource::kNatural;
  return pair;
}

// Uniform draw from [0, num_users) minus the sorted `excluded` set.
Index draw_outside(std::span<const Index> excluded, Index num_users,
                   std::mt19937_64& rng) {
  std::uniform_int_distribution<Index> pick(0, num_users - 1);
  Index u;
  do {
    u = pick(rng);
  } while (std::binary_search(excluded.begin(), excluded.end(), u));
  return u;
}

std::size_t proportional_count(double rho, std::size_t size) {
  if (!(rho > 0.0 && rho <= 1.0)) {
    throw ValidationError(fmt::format("rho must be in (0, 1], got {}", rho));
  }
  const auto k = static_cast<std::size_t>(std::floor(rho * static_cast<double>(size) + 1e-9));
  return std::max<std::size_t>(1, k);
}

std::vector<Index> draw_new_members(const std::vector<Index>& sorted_group,
                                    std::size_t count, Index num_users,
                                    std::mt19937_64& rng) {
  if (static_cast<Index>(sorted_group.size()) >= num_users) {
    throw ValidationError("no users outside the group to sample from");
  }
  std::vector<Index> drawn;
  for (std::size_t i = 0; i < count; ++i) {
    const Index u = draw_outside(sorted_group, num_users, rng);
    if (std::find(drawn.begin(), drawn.end(), u) == drawn.end()) drawn.push_back(u);
  }
  return drawn;
}

}  // namespace

OverlapIndex::OverlapIndex(const Dataset& dataset) {
  partners_.resize(dataset.num_groups());
  for (Index g = 0; g < dataset.num_groups(); ++g) {
    partners_[g] = overlapping_groups(g, dataset);
  }
}

std::optional<GroupPair> find_partner(Index group, const Dataset& dataset,
                                      std::mt19937_64& rng) {
  const auto candidates = overlapping_groups(group, dataset);
  if (candidates.empty()) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  return natural_pair(group, candidates[pick(rng)], dataset);
}

std::optional<GroupPair> find_partner(Index group, const Dataset& dataset,
                                      const OverlapIndex& overlaps,
                                      std::mt19937_64& rng) {
  const auto candidates = overlaps.partners(group);
  if (candidates.empty()) return std::nullopt;
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  return natural_pair(group, candidates[pick(rng)], dataset);
}

DummyGroup proportional_swap(std::span<const Index> group, Index num_users,
                             double rho, std::mt19937_64& rng) {
  if (group.size() < 2) {
    throw ValidationError("proportional swap needs at least two members");
  }
  const std::size_t count = std::min(proportional_count(rho, group.size()),
                                     group.size() - 1);
  const auto sorted_group = sorted_copy(group);

  // Partial Fisher-Yates over member positions picks the swapped members.
  std::vector<std::size_t> positions(group.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, positions.size() - 1);
    std::swap(positions[i], positions[pick(rng)]);
  }
  std::vector<bool> swapped(group.size(), false);
  for (std::size_t i = 0; i < count; ++i) swapped[positions[i]] = true;

  DummyGroup out;
  for (std::size_t i = 0; i < group.size(); ++i) {
    if (!swapped[i]) out.members.push_back(group[i]);
  }
  out.relay = sorted_copy(out.members);
  const auto fresh = draw_new_members(sorted_group, count, num_users, rng);
  out.members.insert(out.members.end(), fresh.begin(), fresh.end());
  return out;
}

DummyGroup proportional_imputation(std::span<const Index> group,
                                   Index num_users, double rho,
                                   std::mt19937_64& rng) {
  if (group.empty()) throw ValidationError("cannot impute into an empty group");
  const std::size_t count = proportional_count(rho, group.size());
  const auto sorted_group = sorted_copy(group);
  DummyGroup out;
  out.members.assign(group.begin(), group.end());
  out.relay = sorted_group;
  const auto fresh = draw_new_members(sorted_group, count, num_users, rng);
  out.members.insert(out.members.end(), fresh.begin(), fresh.end());
  return out;
}

GroupPair make_pair(Index group, const Dataset& dataset,
                    const OverlapIndex& overlaps, double rho,
                    std::mt19937_64& rng) {
  if (auto natural = find_partner(group, dataset, overlaps, rng)) {
    return std::move(*natural);
  }
  const auto members = dataset.members(group);
  std::bernoulli_distribution coin(0.5);
  const bool swap = coin(rng) && members.size() >= 2;
  DummyGroup dummy =
      swap ? proportional_swap(members, dataset.num_users(), rho, rng)
           : proportional_imputation(members, dataset.num_users(), rho, rng);
  GroupPair pair;
  pair.group = group;
  pair.members.assign(members.begin(), members.end());
  pair.partner_members = std::move(dummy.members);
  pair.relay = std::move(dummy.relay);
  pair.source = swap ? PairSource::kSwap : PairSource::kImputation;
  return pair;
}

std::vector<Index> sample_relay_negatives(const GroupPair& pair,
                                          Index num_users,
                                          std::mt19937_64& rng) {
  if (static_cast<Index>(pair.relay.size()) >= num_users) {
    throw ValidationError("every user is a relay user; no negative exists");
  }
  std::vector<Index> negatives;
  negatives.reserve(pair.relay.size());
  for (std::size_t i = 0; i < pair.relay.size(); ++i) {
    negatives.push_back(draw_outside(pair.relay, num_users, rng));
  }
  return negatives;
}

LossValue ssl_loss(const GroupPair& pair, std::span<const Index> negatives,
                   const ModelParams& params, ModelParams* grad,
                   const Dropout& dropout) {
  if (negatives.size() != pair.relay.size()) {
    throw ValidationError("one negative per relay user is required");
  }
  const auto& users = params.embeddings.users;
  const double gamma = params.hyper.gamma;
  const double margin = params.hyper.margin_ssl;

  CompositionTrace trace_a;
  CompositionTrace trace_b;
  IntersectionTrace trace_int;
  const Hypercube cube_a =
      compose(gather_members(users, pair.members), params.composer, &trace_a, dropout);
  const Hypercube cube_b = compose(gather_members(users, pair.partner_members),
                                   params.composer, &trace_b, dropout);
  const Hypercube inter =
      intersect(cube_a, cube_b, params.intersection, &trace_int, dropout);

  LossValue loss;
  loss.note_kink(trace_a.kink_gap);
  loss.note_kink(trace_b.kink_gap);
  loss.note_kink(trace_int.kink_gap);
  Hypercube d_inter = Hypercube::zeros(inter.dim());
  for (std::size_t i = 0; i < pair.relay.size(); ++i) {
    const Index pos = pair.relay[i];
    const Index neg = negatives[i];
    const CubeDistance dp = cube_distance(inter, users.row(pos).transpose());
    const CubeDistance dn = cube_distance(inter, users.row(neg).transpose());
    loss.note_kink(dp.kink_gap);
    loss.note_kink(dn.kink_gap);
    const double hinge = margin + dp.total(gamma) - dn.total(gamma);
    loss.note_kink(hinge);
    if (hinge <= 0.0) continue;
    loss.value += hinge;
    ++loss.active;
    if (grad != nullptr) {
      Vector d_pos = Vector::Zero(inter.dim());
      Vector d_neg = Vector::Zero(inter.dim());
      cube_distance_backward(inter, users.row(pos).transpose(), gamma, 1.0, d_inter, d_pos);
      cube_distance_backward(inter, users.row(neg).transpose(), gamma, -1.0, d_inter, d_neg);
      grad->embeddings.users.row(pos) += d_pos.transpose();
      grad->embeddings.users.row(neg) += d_neg.transpose();
    }
  }
  if (grad == nullptr || loss.active == 0) return loss;

  Hypercube d_a = Hypercube::zeros(inter.dim());
  Hypercube d_b = Hypercube::zeros(inter.dim());
  intersect_backward(params.intersection, trace_int, d_inter, grad->intersection, d_a, d_b);
  auto scatter = [&](const CompositionTrace& trace, const Hypercube& d_cube,
                     const std::vector<Index>& ids) {
    Matrix d_members = Matrix::Zero(trace.members.rows(), trace.members.cols());
    compose_backward(params.composer, trace, d_cube, grad->composer, d_members);
    for (std::size_t j = 0; j < ids.size(); ++j) {
      grad->embeddings.users.row(ids[j]) += d_members.col(static_cast<Index>(j)).transpose();
    }
  };
  scatter(trace_a, d_a, pair.members);
  scatter(trace_b, d_b, pair.partner_members);
  return loss;
}

LossValue ssl_loss(const GroupPair& pair, const ModelParams& params,
                   std::mt19937_64& rng, ModelParams* grad,
                   const Dropout& dropout) {
  const auto negatives =
      sample_relay_negatives(pair, params.embeddings.users.rows(), rng);
  return ssl_loss(pair, negatives, params, grad, dropout);
}

}  // namespace cuberec
