#pragma once

#include <optional>
#include <random>
#include <span>
#include <vector>

#include "cuberec/dataset.hpp"
#include "cuberec/model.hpp"

namespace cuberec {

enum class PairSource { kNatural, kSwap, kImputation };

// A group and an overlapping partner, natural or dummy. The relay users are
// the members both share; they supervise the intersection box.
struct GroupPair {
  Index group = 0;
  std::vector<Index> members;
  std::optional<Index> partner;  // set for natural partners only
  std::vector<Index> partner_members;
  std::vector<Index> relay;  // sorted, non-empty
  PairSource source = PairSource::kNatural;
};

// Sorted list of distinct groups sharing at least one member, per group.
class OverlapIndex {
 public:
  OverlapIndex() = default;
  explicit OverlapIndex(const Dataset& dataset);
  std::span<const Index> partners(Index group) const { return partners_[group]; }

 private:
  std::vector<std::vector<Index>> partners_;
};

// Uniformly sampled overlapping group, or nullopt when `group` is disjoint
// from every other group.
std::optional<GroupPair> find_partner(Index group, const Dataset& dataset,
                                      std::mt19937_64& rng);
std::optional<GroupPair> find_partner(Index group, const Dataset& dataset,
                                      const OverlapIndex& overlaps,
                                      std::mt19937_64& rng);

struct DummyGroup {
  std::vector<Index> members;
  std::vector<Index> relay;  // sorted
};

// Replaces max(1, floor(rho|G|)) members, capped at |G| - 1, with users
// drawn uniformly (with replacement) from outside the group.
DummyGroup proportional_swap(std::span<const Index> group, Index num_users,
                             double rho, std::mt19937_64& rng);
// Adds max(1, floor(rho|G|)) users drawn uniformly (with replacement) from
// outside the group; the whole group relays.
DummyGroup proportional_imputation(std::span<const Index> group,
                                   Index num_users, double rho,
                                   std::mt19937_64& rng);

// Natural partner when one exists; otherwise a dummy from a fair coin flip
// between swap and imputation. Singleton groups cannot be swapped and always
// use imputation.
GroupPair make_pair(Index group, const Dataset& dataset,
                    const OverlapIndex& overlaps, double rho,
                    std::mt19937_64& rng);

// One negative per relay user, uniform over users outside the relay set.
std::vector<Index> sample_relay_negatives(const GroupPair& pair,
                                          Index num_users,
                                          std::mt19937_64& rng);

// Hinge loss pulling each relay user into the intersection of the two
// composed boxes and pushing its paired negative away. `negatives` is
// aligned with `pair.relay`. Gradients reach user embeddings, the composer
// and the intersection MLPs.
LossValue ssl_loss(const GroupPair& pair, std::span<const Index> negatives,
                   const ModelParams& params, ModelParams* grad = nullptr,
                   const Dropout& dropout = {});
LossValue ssl_loss(const GroupPair& pair, const ModelParams& params,
                   std::mt19937_64& rng, ModelParams* grad = nullptr,
                   const Dropout& dropout = {});

}  // namespace cuberec
