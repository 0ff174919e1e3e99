#include <doctest.h>

#include <map>
#include <set>

#include <fmt/format.h>

#include "cuberec/dataset.hpp"
#include "files.hpp"
#include "toy.hpp"

using namespace cuberec;
using cuberec::testing::TempDir;
using cuberec::testing::write_text;

namespace {

const std::filesystem::path kFixtures = CUBEREC_FIXTURES;

Dataset pairs_dataset(int n_pairs) {
  std::vector<std::tuple<Index, Index, Split>> gi;
  for (int i = 0; i < n_pairs; ++i) gi.emplace_back(0, i, Split::kTrain);
  return testing::make_toy(2, n_pairs + 1, {{0, 1}}, {{0, 0}}, gi);
}

std::string error_of(const DatasetPaths& paths) {
  try {
    load_dataset(paths);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

DatasetPaths write_raw(const TempDir& dir, const std::string& user_item,
                       const std::string& members, const std::string& group_item,
                       const std::string& social = "") {
  write_text(dir / "user_item.tsv", user_item);
  write_text(dir / "group_members.tsv", members);
  write_text(dir / "group_item.tsv", group_item);
  if (!social.empty()) write_text(dir / "social.tsv", social);
  return dataset_paths(dir.path());
}

}  // namespace

TEST_CASE("two-user toy fixture loads with dense ids") {
  const Dataset ds = load_dataset_dir(kFixtures / "toy2");
  CHECK(ds.num_users() == 2);
  CHECK(ds.num_groups() == 1);
  CHECK(ds.num_items() >= 1);
  CHECK(ds.members(0).size() == 2);
  CHECK(ds.users().name(0) == "u0");
  CHECK(ds.groups().find("g0") == Index{0});
  CHECK(ds.group_items(0).size() == 1);
}

TEST_CASE("tiny fixture: dedup, symmetric social, indexes") {
  const Dataset ds = load_dataset_dir(kFixtures / "tiny");
  CHECK(ds.num_users() == 5);
  CHECK(ds.num_items() == 6);
  CHECK(ds.num_groups() == 4);
  CHECK(ds.user_item().size() == 9);  // the repeated alice/i1 line collapses
  CHECK(ds.social().size() == 3);
  const Index alice = *ds.users().find("alice");
  const Index bob = *ds.users().find("bob");
  REQUIRE(ds.friends(alice).size() == 1);
  CHECK(ds.friends(alice)[0] == bob);
  CHECK(std::find(ds.friends(bob).begin(), ds.friends(bob).end(), alice) !=
        ds.friends(bob).end());
  for (const auto& e : ds.social()) CHECK(e.a < e.b);
  CHECK(ds.user_interacted(alice, *ds.items().find("i2")));
  CHECK_FALSE(ds.user_interacted(alice, *ds.items().find("i3")));
  CHECK(ds.count(Split::kTrain) == 11);
}

TEST_CASE("malformed lines name file and line") {
  TempDir dir("malformed");
  auto paths = write_raw(dir, "u0\ti0\nu1\n", "g0\tu0\n", "g0\ti0\n");
  const std::string msg = error_of(paths);
  CHECK(msg.find("user_item.tsv:2") != std::string::npos);

  paths = write_raw(dir, "u0\ti0\n", "# header\ng0\tu0\ng0\tu9\n", "g0\ti0\n");
  const std::string unknown = error_of(paths);
  CHECK(unknown.find("group_members.tsv:3") != std::string::npos);
  CHECK(unknown.find("unknown user") != std::string::npos);

  paths = write_raw(dir, "u0\ti0\n", "g0\tu0\n", "g0\ti0\tholdout\n");
  CHECK(error_of(paths).find("group_item.tsv:1") != std::string::npos);
}

TEST_CASE("social self-loop is rejected") {
  TempDir dir("selfloop");
  const auto paths = write_raw(dir, "u0\ti0\nu5\ti0\n", "g0\tu0\n", "g0\ti0\n",
                               "u0\tu5\nu5\tu5\n");
  const std::string msg = error_of(paths);
  CHECK(msg.find("self-loop") != std::string::npos);
  CHECK(msg.find("social.tsv:2") != std::string::npos);
}

TEST_CASE("group without members is rejected") {
  TempDir dir("empty");
  auto paths = write_raw(dir, "u0\ti0\n", "g0\tu0\n", "g0\ti0\n");
  write_text(dir / "groups.tsv", "g0\ng1\n");
  paths = dataset_paths(dir.path());
  CHECK(error_of(paths).find("no members") != std::string::npos);

  Dataset::Parts parts;
  parts.users.intern("u0");
  parts.groups.intern("g0");
  parts.members = {{}};
  CHECK_THROWS_AS(Dataset(std::move(parts)), ValidationError);
}

TEST_CASE("members must reference registered users") {
  Dataset::Parts parts;
  parts.users.intern("u0");
  parts.groups.intern("g0");
  parts.members = {{0, 3}};
  CHECK_THROWS_AS(Dataset(std::move(parts)), ValidationError);
}

TEST_CASE("write then load is the identity") {
  const Dataset ds = split_group_interactions(
      load_dataset_dir(kFixtures / "tiny"), {0.6, 0.2, 0.2}, 3);
  TempDir dir("roundtrip");
  write_dataset(ds, dir.path());
  const Dataset again = load_dataset_dir(dir.path());
  CHECK(again == ds);
  CHECK(again.count(Split::kValidation) == ds.count(Split::kValidation));
}

TEST_CASE("split sizes follow the rounding rule") {
  const std::array<double, 3> ratios = {0.8, 0.1, 0.1};
  for (const auto& [n, train, val, test] :
       std::vector<std::array<int, 4>>{{10, 8, 1, 1}, {9, 7, 1, 1}, {1, 1, 0, 0},
                                       {25, 19, 3, 3}}) {
    CAPTURE(n);
    const Dataset ds = split_group_interactions(pairs_dataset(n), ratios, 11);
    CHECK(ds.count(Split::kTrain) == static_cast<std::size_t>(train));
    CHECK(ds.count(Split::kValidation) == static_cast<std::size_t>(val));
    CHECK(ds.count(Split::kTest) == static_cast<std::size_t>(test));
    // Partition: every pair tagged exactly once.
    CHECK(ds.count(Split::kTrain) + ds.count(Split::kValidation) +
              ds.count(Split::kTest) ==
          ds.group_item().size());
  }
}

TEST_CASE("split is deterministic per seed") {
  const Dataset base = pairs_dataset(40);
  const auto a = split_group_interactions(base, {0.8, 0.1, 0.1}, 5);
  const auto b = split_group_interactions(base, {0.8, 0.1, 0.1}, 5);
  CHECK(a == b);
  bool differs = false;
  for (std::uint64_t seed = 6; seed < 12 && !differs; ++seed) {
    differs = !(split_group_interactions(base, {0.8, 0.1, 0.1}, seed) == a);
  }
  CHECK(differs);
}

TEST_CASE("split rejects bad ratios") {
  const Dataset base = pairs_dataset(5);
  CHECK_THROWS_AS(split_group_interactions(base, {1.1, -0.1, 0.0}, 1),
                  ValidationError);
  CHECK_THROWS_AS(split_group_interactions(base, {0.5, 0.1, 0.1}, 1),
                  ValidationError);
}

TEST_CASE("one positive with five negatives gives five triples") {
  const Dataset ds = testing::make_toy(1, 10, {{0}}, {{0, 3}}, {});
  const TripletBatch batch = sample_triplets(ds, Level::kUser, 5, 9);
  REQUIRE(batch.triples.size() == 5);
  for (const auto& t : batch.triples) {
    CHECK(t.anchor == 0);
    CHECK(t.positive == 3);
    CHECK(t.negative != 3);
  }
}

TEST_CASE("anchor that saw every item has no negative") {
  const Dataset ds = testing::make_toy(2, 2, {{0}}, {{0, 0}, {0, 1}, {1, 0}}, {});
  try {
    sample_triplets(ds, Level::kUser, 1, 1);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("u0") != std::string::npos);
  }
}

TEST_CASE("negatives are never observed, over 10^4 draws") {
  const Dataset ds = testing::toy_groups();
  std::size_t drawn = 0;
  for (std::uint64_t seed = 0; drawn < 10000; ++seed) {
    for (const Level level : {Level::kUser, Level::kGroup}) {
      const TripletBatch batch = sample_triplets(ds, level, 7, seed);
      for (const auto& t : batch.triples) {
        if (level == Level::kUser) {
          CHECK(ds.user_interacted(t.anchor, t.positive));
          CHECK_FALSE(ds.user_interacted(t.anchor, t.negative));
        } else {
          const auto train = ds.group_items(t.anchor, Split::kTrain);
          CHECK(std::binary_search(train.begin(), train.end(), t.positive));
          // Not observed in any split.
          CHECK_FALSE(ds.group_interacted(t.anchor, t.negative));
        }
        ++drawn;
      }
    }
  }
}

TEST_CASE("group triplets use training positives only") {
  const Dataset ds = testing::toy_groups();
  const TripletBatch batch = sample_triplets(ds, Level::kGroup, 2, 4);
  CHECK(batch.triples.size() == 2 * ds.count(Split::kTrain));
  CHECK(sample_triplets(ds, Level::kGroup, 2, 4).triples == batch.triples);
}

TEST_CASE("Meetup-sized ingest reports the published statistics") {
  // Users, groups, items, interaction counts and memberships chosen to
  // reproduce every row of the Meetup column of the dataset table.
  const int users = 24631, groups = 13552, items = 19031;
  const int user_item = 126813, memberships = 119070;
  TempDir dir("meetup");
  std::string ui, gm, gi;
  for (int k = 0; k < user_item; ++k) {
    const int u = k % users, j = k / users;
    ui += fmt::format("u{}\ti{}\n", u, (u + j * 3001) % items);
  }
  int next = 0;
  for (int g = 0; g < groups; ++g) {
    const int size = g < memberships - 8 * groups ? 9 : 8;
    for (int m = 0; m < size; ++m) gm += fmt::format("g{}\tu{}\n", g, next++ % users);
  }
  for (int v = 0; v < items; ++v) gi += fmt::format("g{}\ti{}\n", v % groups, v);
  write_text(dir / "user_item.tsv", ui);
  write_text(dir / "group_members.tsv", gm);
  write_text(dir / "group_item.tsv", gi);

  const Dataset ds = load_dataset_dir(dir.path());
  CHECK(ds.num_users() == 24631);
  CHECK(ds.num_groups() == 13552);
  CHECK(ds.num_items() == 19031);
  const DatasetStats s = compute_stats(ds);
  CHECK(s.user_item == 126813);
  CHECK(s.group_item == 19031);
  const std::string table = format_stats(s);
  CHECK(table.find("average #items per user\t5.15\n") != std::string::npos);
  CHECK(table.find("average #items per group\t1.40\n") != std::string::npos);
  CHECK(table.find("average #groups per user\t4.83\n") != std::string::npos);
  CHECK(table.find("average group size\t8.79\n") != std::string::npos);
}

TEST_CASE("statistics of the tiny fixture match the hand count") {
  const Dataset ds = load_dataset_dir(kFixtures / "tiny");
  CHECK(format_stats(compute_stats(ds)) ==
        testing::read_text(kFixtures / "tiny" / "expected_stats.tsv"));
}
