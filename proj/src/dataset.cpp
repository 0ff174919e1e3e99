#include "cuberec/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

namespace cuberec {

namespace fs = std::filesystem;

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kValidation:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "val" || name == "valid" || name == "validation") {
    return Split::kValidation;
  }
  if (name == "test") return Split::kTest;
  throw ValidationError(fmt::format("unknown split tag '{}'", name));
}

Index IdRegistry::intern(std::string_view id) {
  auto it = index_.find(std::string(id));
  if (it != index_.end()) return it->second;
  const auto next = static_cast<Index>(names_.size());
  names_.emplace_back(id);
  index_.emplace(names_.back(), next);
  return next;
}

std::optional<Index> IdRegistry::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

namespace {

template <class T>
void sort_unique(std::vector<T>& values) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
}

bool sorted_contains(std::span<const Index> values, Index value) {
  return std::binary_search(values.begin(), values.end(), value);
}

}  // namespace

Dataset::Dataset(Parts parts) : parts_(std::move(parts)) {
  const Index n_users = parts_.users.size();
  const Index n_items = parts_.items.size();
  const Index n_groups = parts_.groups.size();

  if (static_cast<Index>(parts_.members.size()) != n_groups) {
    throw ValidationError("membership lists do not match the group registry");
  }
  for (Index g = 0; g < n_groups; ++g) {
    auto& members = parts_.members[g];
    if (members.empty()) {
      throw ValidationError(
          fmt::format("group '{}' has no members", parts_.groups.name(g)));
    }
    std::vector<Index> seen;
    seen.reserve(members.size());
    for (Index u : members) {
      if (u < 0 || u >= n_users) {
        throw ValidationError(fmt::format(
            "group '{}' references an unknown user", parts_.groups.name(g)));
      }
      seen.push_back(u);
    }
    sort_unique(seen);
    if (seen.size() != members.size()) {
      throw ValidationError(fmt::format("group '{}' has duplicate members",
                                        parts_.groups.name(g)));
    }
  }

  for (const auto& ui : parts_.user_item) {
    if (ui.user < 0 || ui.user >= n_users || ui.item < 0 ||
        ui.item >= n_items) {
      throw ValidationError("user-item pair references an unknown id");
    }
  }
  sort_unique(parts_.user_item);

  for (const auto& gi : parts_.group_item) {
    if (gi.group < 0 || gi.group >= n_groups || gi.item < 0 ||
        gi.item >= n_items) {
      throw ValidationError("group-item pair references an unknown id");
    }
  }
  // Deduplicate on (group, item); the first tag wins.
  std::stable_sort(parts_.group_item.begin(), parts_.group_item.end(),
                   [](const GroupItem& a, const GroupItem& b) {
                     return std::tie(a.group, a.item) <
                            std::tie(b.group, b.item);
                   });
  parts_.group_item.erase(
      std::unique(parts_.group_item.begin(), parts_.group_item.end(),
                  [](const GroupItem& a, const GroupItem& b) {
                    return a.group == b.group && a.item == b.item;
                  }),
      parts_.group_item.end());

  for (auto& edge : parts_.social) {
    if (edge.a < 0 || edge.a >= n_users || edge.b < 0 || edge.b >= n_users) {
      throw ValidationError("social edge references an unknown user");
    }
    if (edge.a == edge.b) {
      throw ValidationError(fmt::format("social self-loop on user '{}'",
                                        parts_.users.name(edge.a)));
    }
    if (edge.a > edge.b) std::swap(edge.a, edge.b);
  }
  sort_unique(parts_.social);

  build_indexes();
}

void Dataset::build_indexes() {
  const Index n_users = num_users();
  const Index n_groups = num_groups();
  user_items_.assign(n_users, {});
  group_items_.assign(n_groups, {});
  for (auto& per_split : group_items_by_split_) per_split.assign(n_groups, {});
  user_groups_.assign(n_users, {});
  friends_.assign(n_users, {});

  for (const auto& ui : parts_.user_item) user_items_[ui.user].push_back(ui.item);
  for (const auto& gi : parts_.group_item) {
    group_items_[gi.group].push_back(gi.item);
    group_items_by_split_[static_cast<int>(gi.split)][gi.group].push_back(
        gi.item);
  }
  for (Index g = 0; g < n_groups; ++g) {
    for (Index u : parts_.members[g]) user_groups_[u].push_back(g);
  }
  for (const auto& edge : parts_.social) {
    friends_[edge.a].push_back(edge.b);
    friends_[edge.b].push_back(edge.a);
  }
  for (auto& v : friends_) std::sort(v.begin(), v.end());
  // user_item and group_item are sorted, so the per-entity lists are too.
}

std::span<const Index> Dataset::group_items(Index group, Split split) const {
  return group_items_by_split_[static_cast<int>(split)][group];
}

bool Dataset::user_interacted(Index user, Index item) const {
  return sorted_contains(user_items_[user], item);
}

bool Dataset::group_interacted(Index group, Index item) const {
  return sorted_contains(group_items_[group], item);
}

std::size_t Dataset::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(parts_.group_item.begin(), parts_.group_item.end(),
                    [split](const GroupItem& gi) { return gi.split == split; }));
}

Dataset Dataset::with_splits(const std::vector<Split>& splits) const {
  if (splits.size() != parts_.group_item.size()) {
    throw ValidationError("split tags do not match the group-item pairs");
  }
  Dataset out = *this;
  for (std::size_t i = 0; i < splits.size(); ++i) {
    out.parts_.group_item[i].split = splits[i];
  }
  out.build_indexes();
  return out;
}

bool operator==(const Dataset& a, const Dataset& b) {
  return a.parts_.users == b.parts_.users && a.parts_.items == b.parts_.items &&
         a.parts_.groups == b.parts_.groups &&
         a.parts_.members == b.parts_.members &&
         a.parts_.user_item == b.parts_.user_item &&
         a.parts_.group_item == b.parts_.group_item &&
         a.parts_.social == b.parts_.social;
}

// ---------------------------------------------------------------------------
// Loading

namespace {

// Calls `fn(fields, line_number)` for every record of a TSV file.
template <class Fn>
void read_tsv(const fs::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError(fmt::format("cannot open '{}'", path.string()));
  }
  std::string line;
  std::vector<std::string_view> fields;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    fields.clear();
    std::string_view rest(line);
    while (true) {
      const auto tab = rest.find('\t');
      fields.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    for (auto f : fields) {
      if (f.empty()) {
        throw ValidationError(fmt::format("{}:{}: empty field",
                                          path.string(), line_no));
      }
    }
    fn(std::span<const std::string_view>(fields), path, line_no);
  }
}

[[noreturn]] void malformed(const fs::path& path, std::size_t line_no,
                            std::string_view what) {
  throw ValidationError(
      fmt::format("{}:{}: {}", path.string(), line_no, what));
}

void read_registry(const fs::path& path, IdRegistry& registry) {
  read_tsv(path, [&](std::span<const std::string_view> f, const fs::path& p,
                     std::size_t n) {
    if (f.size() != 1) malformed(p, n, "expected one id per line");
    registry.intern(f[0]);
  });
}

}  // namespace

Dataset load_dataset(const DatasetPaths& paths) {
  Dataset::Parts parts;
  if (paths.users) read_registry(*paths.users, parts.users);
  if (paths.items) read_registry(*paths.items, parts.items);
  if (paths.groups) read_registry(*paths.groups, parts.groups);

  read_tsv(paths.user_item, [&](std::span<const std::string_view> f,
                                const fs::path& p, std::size_t n) {
    if (f.size() != 2) malformed(p, n, "expected user_id<TAB>item_id");
    parts.user_item.push_back({parts.users.intern(f[0]), parts.items.intern(f[1])});
  });

  std::vector<std::pair<std::string, std::size_t>> social_lines;
  if (paths.social) {
    read_tsv(*paths.social, [&](std::span<const std::string_view> f,
                                const fs::path& p, std::size_t n) {
      if (f.size() != 2) malformed(p, n, "expected user_id<TAB>user_id");
      if (f[0] == f[1]) {
        malformed(p, n, fmt::format("social self-loop on user '{}'", f[0]));
      }
      parts.social.push_back({parts.users.intern(f[0]), parts.users.intern(f[1])});
    });
  }

  read_tsv(paths.group_members, [&](std::span<const std::string_view> f,
                                    const fs::path& p, std::size_t n) {
    if (f.size() != 2) malformed(p, n, "expected group_id<TAB>user_id");
    const auto user = parts.users.find(f[1]);
    if (!user) malformed(p, n, fmt::format("unknown user '{}'", f[1]));
    const Index group = parts.groups.intern(f[0]);
    if (static_cast<Index>(parts.members.size()) <= group) {
      parts.members.resize(group + 1);
    }
    auto& members = parts.members[group];
    if (std::find(members.begin(), members.end(), *user) == members.end()) {
      members.push_back(*user);
    }
  });
  parts.members.resize(parts.groups.size());

  read_tsv(paths.group_item, [&](std::span<const std::string_view> f,
                                 const fs::path& p, std::size_t n) {
    if (f.size() != 2 && f.size() != 3) {
      malformed(p, n, "expected group_id<TAB>item_id[<TAB>split]");
    }
    const auto group = parts.groups.find(f[0]);
    if (!group) malformed(p, n, fmt::format("unknown group '{}'", f[0]));
    Split split = Split::kTrain;
    if (f.size() == 3) {
      try {
        split = parse_split(f[2]);
      } catch (const ValidationError& e) {
        malformed(p, n, e.what());
      }
    }
    parts.group_item.push_back({*group, parts.items.intern(f[1]), split});
  });

  return Dataset(std::move(parts));
}

DatasetPaths dataset_paths(const fs::path& dir) {
  DatasetPaths paths;
  paths.user_item = dir / "user_item.tsv";
  paths.group_members = dir / "group_members.tsv";
  paths.group_item = dir / "group_item.tsv";
  auto optional = [&](const char* name) -> std::optional<fs::path> {
    if (fs::exists(dir / name)) return dir / name;
    return std::nullopt;
  };
  paths.social = optional("social.tsv");
  paths.users = optional("users.tsv");
  paths.items = optional("items.tsv");
  paths.groups = optional("groups.tsv");
  return paths;
}

Dataset load_dataset_dir(const fs::path& dir) {
  return load_dataset(dataset_paths(dir));
}

void write_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) {
      throw ValidationError(
          fmt::format("cannot write '{}'", (dir / name).string()));
    }
    return out;
  };
  auto write_registry = [&](const char* name, const IdRegistry& registry) {
    auto out = open(name);
    for (const auto& id : registry.names()) out << id << '\n';
  };
  write_registry("users.tsv", dataset.users());
  write_registry("items.tsv", dataset.items());
  write_registry("groups.tsv", dataset.groups());

  {
    auto out = open("user_item.tsv");
    for (const auto& ui : dataset.user_item()) {
      out << dataset.users().name(ui.user) << '\t'
          << dataset.items().name(ui.item) << '\n';
    }
  }
  {
    auto out = open("group_members.tsv");
    for (Index g = 0; g < dataset.num_groups(); ++g) {
      for (Index u : dataset.members(g)) {
        out << dataset.groups().name(g) << '\t' << dataset.users().name(u)
            << '\n';
      }
    }
  }
  {
    auto out = open("group_item.tsv");
    for (const auto& gi : dataset.group_item()) {
      out << dataset.groups().name(gi.group) << '\t'
          << dataset.items().name(gi.item) << '\t' << split_name(gi.split)
          << '\n';
    }
  }
  {
    auto out = open("social.tsv");
    for (const auto& e : dataset.social()) {
      out << dataset.users().name(e.a) << '\t' << dataset.users().name(e.b)
          << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Splitting and sampling

Dataset split_group_interactions(const Dataset& dataset,
                                 std::array<double, 3> ratios,
                                 std::uint64_t seed) {
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ValidationError("split ratios must be >= 0");
  }
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError(
        fmt::format("split ratios must sum to 1 (got {})", total));
  }
  const auto n = static_cast<std::int64_t>(dataset.group_item().size());
  std::int64_t n_val = std::llround(ratios[1] * static_cast<double>(n));
  std::int64_t n_test = std::llround(ratios[2] * static_cast<double>(n));
  n_val = std::min(n_val, n);
  n_test = std::min(n_test, n - n_val);
  const std::int64_t n_train = n - n_val - n_test;

  std::vector<std::size_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Split> splits(order.size(), Split::kTrain);
  for (std::int64_t i = n_train; i < n_train + n_val; ++i) {
    splits[order[i]] = Split::kValidation;
  }
  for (std::int64_t i = n_train + n_val; i < n; ++i) {
    splits[order[i]] = Split::kTest;
  }
  return dataset.with_splits(splits);
}

TripletBatch sample_triplets(const Dataset& dataset, Level level,
                             int negatives_per_positive, std::mt19937_64& rng) {
  if (negatives_per_positive < 1) {
    throw ValidationError("negatives_per_positive must be >= 1");
  }
  const Index n_items = dataset.num_items();
  std::uniform_int_distribution<Index> pick(0, n_items - 1);
  TripletBatch batch;
  batch.level = level;

  auto emit = [&](Index anchor, Index positive, std::span<const Index> seen,
                  auto&& anchor_name) {
    if (static_cast<Index>(seen.size()) >= n_items) {
      throw ValidationError(fmt::format(
          "{} interacted with every item; no negative exists", anchor_name()));
    }
    for (int k = 0; k < negatives_per_positive; ++k) {
      Index negative;
      do {
        negative = pick(rng);
      } while (std::binary_search(seen.begin(), seen.end(), negative));
      batch.triples.push_back({anchor, positive, negative});
    }
  };

  if (level == Level::kUser) {
    batch.triples.reserve(dataset.user_item().size() * negatives_per_positive);
    for (const auto& ui : dataset.user_item()) {
      emit(ui.user, ui.item, dataset.user_items(ui.user), [&] {
        return fmt::format("user '{}'", dataset.users().name(ui.user));
      });
    }
  } else {
    for (const auto& gi : dataset.group_item()) {
      if (gi.split != Split::kTrain) continue;
      emit(gi.group, gi.item, dataset.group_items(gi.group), [&] {
        return fmt::format("group '{}'", dataset.groups().name(gi.group));
      });
    }
  }
  return batch;
}

TripletBatch sample_triplets(const Dataset& dataset, Level level,
                             int negatives_per_positive, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_triplets(dataset, level, negatives_per_positive, rng);
}

// ---------------------------------------------------------------------------
// Statistics

DatasetStats compute_stats(const Dataset& dataset) {
  DatasetStats s;
  s.users = dataset.num_users();
  s.groups = dataset.num_groups();
  s.items = dataset.num_items();
  s.user_item = static_cast<std::int64_t>(dataset.user_item().size());
  s.group_item = static_cast<std::int64_t>(dataset.group_item().size());
  s.social = static_cast<std::int64_t>(dataset.social().size());
  for (Index g = 0; g < dataset.num_groups(); ++g) {
    s.memberships += static_cast<std::int64_t>(dataset.members(g).size());
  }
  auto ratio = [](std::int64_t a, std::int64_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  s.items_per_user = ratio(s.user_item, s.users);
  s.items_per_group = ratio(s.group_item, s.groups);
  s.groups_per_user = ratio(s.memberships, s.users);
  s.group_size = ratio(s.memberships, s.groups);
  return s;
}

std::string format_stats(const DatasetStats& s) {
  std::string out;
  auto count = [&](std::string_view name, std::int64_t v) {
    out += fmt::format("{}\t{}\n", name, v);
  };
  auto avg = [&](std::string_view name, double v) {
    out += fmt::format("{}\t{:.2f}\n", name, v);
  };
  count("#users", s.users);
  count("#groups", s.groups);
  count("#items", s.items);
  count("#user-item interactions", s.user_item);
  count("#group-item interactions", s.group_item);
  avg("average #items per user", s.items_per_user);
  avg("average #items per group", s.items_per_group);
  avg("average #groups per user", s.groups_per_user);
  avg("average group size", s.group_size);
  return out;
}

}  // namespace cuberec
