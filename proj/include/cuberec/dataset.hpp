#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cuberec/types.hpp"

namespace cuberec {

enum class Split : std::uint8_t { kTrain = 0, kValidation = 1, kTest = 2 };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

// Bidirectional map between original string ids and dense indices, in
// order of first registration.
class IdRegistry {
 public:
  Index intern(std::string_view id);
  std::optional<Index> find(std::string_view id) const;
  const std::string& name(Index index) const { return names_.at(index); }
  Index size() const { return static_cast<Index>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

  friend bool operator==(const IdRegistry& a, const IdRegistry& b) {
    return a.names_ == b.names_;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Index> index_;
};

struct UserItem {
  Index user;
  Index item;
  friend bool operator==(const UserItem&, const UserItem&) = default;
  friend auto operator<=>(const UserItem&, const UserItem&) = default;
};

struct GroupItem {
  Index group;
  Index item;
  Split split = Split::kTrain;
  friend bool operator==(const GroupItem&, const GroupItem&) = default;
};

// Undirected tie, stored once with a < b.
struct SocialEdge {
  Index a;
  Index b;
  friend bool operator==(const SocialEdge&, const SocialEdge&) = default;
  friend auto operator<=>(const SocialEdge&, const SocialEdge&) = default;
};

// Immutable interaction data with dense ids and lookup indexes. Every
// construction path validates the invariants: members and referenced
// items are registered, groups are non-empty without duplicate members,
// social ties are symmetric without self-loops, and each group-item pair
// carries exactly one split tag.
class Dataset {
 public:
  struct Parts {
    IdRegistry users;
    IdRegistry items;
    IdRegistry groups;
    std::vector<std::vector<Index>> members;  // per group, ordered
    std::vector<UserItem> user_item;
    std::vector<GroupItem> group_item;
    std::vector<SocialEdge> social;
  };

  Dataset() = default;
  // Deduplicates, sorts and validates the parts.
  explicit Dataset(Parts parts);

  Index num_users() const { return parts_.users.size(); }
  Index num_items() const { return parts_.items.size(); }
  Index num_groups() const { return parts_.groups.size(); }

  const IdRegistry& users() const { return parts_.users; }
  const IdRegistry& items() const { return parts_.items; }
  const IdRegistry& groups() const { return parts_.groups; }
  const Parts& parts() const { return parts_; }

  std::span<const Index> members(Index group) const {
    return parts_.members[group];
  }
  // Sorted item lists.
  std::span<const Index> user_items(Index user) const {
    return user_items_[user];
  }
  std::span<const Index> group_items(Index group) const {
    return group_items_[group];
  }
  std::span<const Index> group_items(Index group, Split split) const;
  // Sorted group list per user.
  std::span<const Index> user_groups(Index user) const {
    return user_groups_[user];
  }
  // Sorted neighbours in the (symmetric) social graph.
  std::span<const Index> friends(Index user) const { return friends_[user]; }

  const std::vector<UserItem>& user_item() const { return parts_.user_item; }
  const std::vector<GroupItem>& group_item() const {
    return parts_.group_item;
  }
  const std::vector<SocialEdge>& social() const { return parts_.social; }

  bool user_interacted(Index user, Index item) const;
  bool group_interacted(Index group, Index item) const;
  std::size_t count(Split split) const;

  // Returns a copy whose group-item tags are replaced by `splits`, which
  // must be aligned with group_item().
  Dataset with_splits(const std::vector<Split>& splits) const;

  friend bool operator==(const Dataset& a, const Dataset& b);

 private:
  void build_indexes();

  Parts parts_;
  std::vector<std::vector<Index>> user_items_;
  std::vector<std::vector<Index>> group_items_;
  std::array<std::vector<std::vector<Index>>, 3> group_items_by_split_;
  std::vector<std::vector<Index>> user_groups_;
  std::vector<std::vector<Index>> friends_;
};

struct DatasetPaths {
  std::filesystem::path user_item;
  std::filesystem::path group_members;
  std::filesystem::path group_item;
  // Absent social file means no ties.
  std::optional<std::filesystem::path> social;
  // Optional id registries (one id per line) fixing the dense order.
  std::optional<std::filesystem::path> users;
  std::optional<std::filesystem::path> items;
  std::optional<std::filesystem::path> groups;
};

// Tab-separated files with '#' comments. group_item lines may carry a third
// column with the split tag (train/val/test); otherwise pairs are train.
Dataset load_dataset(const DatasetPaths& paths);

// Standard file names inside a dataset directory. Registries and the social
// file are used when present.
DatasetPaths dataset_paths(const std::filesystem::path& dir);
Dataset load_dataset_dir(const std::filesystem::path& dir);

// Writes the canonical directory form (registries, interactions with split
// tags). Loading the result reproduces an equal Dataset.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

// Seeded uniform shuffle of the group-item pairs; validation and test get
// round(ratio * n) pairs each, training takes the remainder.
Dataset split_group_interactions(const Dataset& dataset,
                                 std::array<double, 3> ratios,
                                 std::uint64_t seed);

enum class Level { kUser, kGroup };

struct Triplet {
  Index anchor;
  Index positive;
  Index negative;
  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct TripletBatch {
  Level level = Level::kUser;
  std::vector<Triplet> triples;
};

// For every training positive of the level, `negatives_per_positive`
// triples whose negative is drawn uniformly from items the anchor never
// interacted with (in any split).
TripletBatch sample_triplets(const Dataset& dataset, Level level,
                             int negatives_per_positive, std::mt19937_64& rng);
TripletBatch sample_triplets(const Dataset& dataset, Level level,
                             int negatives_per_positive, std::uint64_t seed);

// Statistics in the layout of the usual dataset summary table.
struct DatasetStats {
  std::int64_t users = 0;
  std::int64_t groups = 0;
  std::int64_t items = 0;
  std::int64_t user_item = 0;
  std::int64_t group_item = 0;
  std::int64_t memberships = 0;
  std::int64_t social = 0;
  double items_per_user = 0;
  double items_per_group = 0;
  double groups_per_user = 0;
  double group_size = 0;
};

DatasetStats compute_stats(const Dataset& dataset);
// Two-column "field<TAB>value" table; counts as integers, averages with
// two decimals.
std::string format_stats(const DatasetStats& stats);

}  // namespace cuberec
