// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any of them fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "cuberec/commands.hpp"
#include "cuberec/evaluator.hpp"
#include "cuberec/ssl.hpp"
#include "cuberec/trainer.hpp"
#include "files.hpp"
#include "gradcheck.hpp"
#include "synthetic.hpp"
#include "toy.hpp"

using namespace cuberec;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Vector random_vector(Index d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(d);
  for (Index i = 0; i < d; ++i) v[i] = normal(rng);
  return v;
}

Hypercube random_cube(Index d, std::mt19937_64& rng) {
  return {random_vector(d, rng), random_vector(d, rng).cwiseAbs()};
}

// --- 1 ---------------------------------------------------------------------

Outcome distance_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Index dims[] = {1, 2, 4, 8};
  int violations = 0, inside = 0;
  double worst = 0.0;
  for (int n = 0; n < 10000; ++n) {
    const Index d = dims[n % 4];
    const Hypercube cube = random_cube(d, rng);
    const double gamma = unit(rng);
    Vector v = random_vector(d, rng, 2.0);
    if (n % 5 == 0) {
      // Force a point inside the box.
      for (Index z = 0; z < d; ++z) {
        v[z] = cube.center[z] + (2.0 * unit(rng) - 1.0) * cube.offset[z];
      }
    }
    const Vector lo = cube.center - cube.offset;
    const Vector hi = cube.center + cube.offset;
    const Vector clamp = v.cwiseMax(lo).cwiseMin(hi);
    const double f_out = (v - clamp).squaredNorm();
    const double f_in = (cube.center - clamp).squaredNorm();
    double expect = f_out + gamma * f_in;
    const bool is_inside = (v.array() >= lo.array()).all() && (v.array() <= hi.array()).all();
    if (is_inside) {
      ++inside;
      expect = gamma * (cube.center - v).squaredNorm();
    }
    const double got = distance_point_to_cube(cube, v, gamma);
    const double err = std::abs(got - expect);
    worst = std::max(worst, err);
    if (err > 1e-12) ++violations;
  }
  return {violations == 0,
          fmt::format("10000 instances ({} inside), max |diff| {:.2e}, {} over 1e-12",
                      inside, worst, violations)};
}

// --- 2 ---------------------------------------------------------------------

struct ProbeTally {
  int checked = 0;
  int skipped = 0;
  int failed = 0;
  double worst = 0.0;

  void add(const testing::GradCheck& r) {
    if (r.skipped) {
      ++skipped;
      return;
    }
    ++checked;
    worst = std::max(worst, r.rel_error);
    if (!(r.rel_error < 1e-4)) ++failed;
  }
  bool ok() const { return checked == 100 && failed == 0; }
  std::string text(std::string_view name) const {
    return fmt::format("{} {}/{} (skip {}, worst {:.1e})", name, checked - failed,
                       checked, skipped, worst);
  }
};

// Central differences of the user loss with respect to the base embeddings,
// through propagation.
testing::GradCheck user_loss_probe(const Dataset& ds, const NormalizedAdjacency& adj,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.6);
  EmbeddingTable base = EmbeddingTable::zeros(ds.num_users(), ds.num_items(), 4);
  for (Index i = 0; i < base.users.size(); ++i) base.users.data()[i] = normal(rng);
  for (Index i = 0; i < base.items.size(); ++i) base.items.data()[i] = normal(rng);
  const auto triples = sample_triplets(ds, Level::kUser, 2, rng).triples;
  const double margin = 2.0;
  auto loss = [&](const EmbeddingTable& t) {
    return user_loss(propagate(t, adj, 2), triples, margin);
  };
  EmbeddingTable g = EmbeddingTable::zeros(ds.num_users(), ds.num_items(), 4);
  user_loss(propagate(base, adj, 2), triples, margin, &g);
  const EmbeddingTable analytic = propagate(g, adj, 2);

  testing::GradCheck out;
  const double step = 1e-5, kink = 1e-6;
  if (loss(base).nearest_kink < kink) {
    out.skipped = true;
    return out;
  }
  double diff2 = 0, a2 = 0, n2 = 0;
  for (auto [p, a] : {std::pair{&base.users, &analytic.users},
                      std::pair{&base.items, &analytic.items}}) {
    for (Index i = 0; i < p->size(); ++i) {
      const double keep = p->data()[i];
      p->data()[i] = keep + step;
      const LossValue plus = loss(base);
      p->data()[i] = keep - step;
      const LossValue minus = loss(base);
      p->data()[i] = keep;
      if (std::min(plus.nearest_kink, minus.nearest_kink) < kink) {
        out.skipped = true;
        return out;
      }
      const double numeric = (plus.value - minus.value) / (2 * step);
      const double analytic_i = a->data()[i];
      diff2 += (analytic_i - numeric) * (analytic_i - numeric);
      a2 += analytic_i * analytic_i;
      n2 += numeric * numeric;
    }
  }
  out.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
  return out;
}

Outcome gradient_probes() {
  const Dataset ds = testing::toy_groups();
  const OverlapIndex overlaps(ds);
  const NormalizedAdjacency adj = build_adjacency(ds, true);
  std::vector<std::string> parts;
  bool ok = true;
  // The user loss has no composer, but it is probed once per composer run so
  // every (loss, composer) cell gets its own 100 probes.
  for (const Variant variant : {Variant::kGeometric, Variant::kAttentive}) {
    const std::string tag(variant_name(variant));
    ProbeTally user, group, self;
    for (std::uint64_t seed = 0; user.checked < 100 && seed < 2000; ++seed) {
      user.add(user_loss_probe(ds, adj, seed * 2 + (variant == Variant::kAttentive)));
    }
    for (std::uint64_t seed = 0; group.checked < 100 && seed < 2000; ++seed) {
      ModelParams p = testing::random_model(ds, variant, 4, seed);
      p.hyper.margin_group = 2.0;
      const auto triples = sample_triplets(ds, Level::kGroup, 2, seed).triples;
      ModelParams grad = zeros_like(p);
      group_loss(p, triples, ds, &grad);
      group.add(testing::check_gradient(p, grad, [&](const ModelParams& q) {
        return group_loss(q, triples, ds);
      }));
    }
    for (std::uint64_t seed = 0; self.checked < 100 && seed < 2000; ++seed) {
      ModelParams p = testing::random_model(ds, variant, 4, seed);
      p.hyper.margin_ssl = 3.0;
      std::mt19937_64 rng(seed);
      const GroupPair pair = make_pair(static_cast<Index>(seed % ds.num_groups()),
                                       ds, overlaps, 0.5, rng);
      const auto negatives = sample_relay_negatives(pair, ds.num_users(), rng);
      ModelParams grad = zeros_like(p);
      ssl_loss(pair, negatives, p, &grad);
      self.add(testing::check_gradient(p, grad, [&](const ModelParams& q) {
        return ssl_loss(pair, negatives, q);
      }));
    }
    ok = ok && user.ok() && group.ok() && self.ok();
    parts.push_back(fmt::format("{}: {}; {}; {}", tag, user.text("user"),
                                group.text("group"), self.text("ssl")));
  }
  return {ok, fmt::format("{} | {}", parts[0], parts[1])};
}

// --- 3 ---------------------------------------------------------------------

Outcome geometry_properties() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<int> dim_pick(1, 8), size_pick(1, 8);
  int contain = 0, negative = 0, shrink = 0, strict = 0, center = 0;
  std::vector<IntersectionParams> nets;
  for (Index d = 1; d <= 8; ++d) nets.push_back(IntersectionParams::glorot(d, rng));
  for (int n = 0; n < 100000; ++n) {
    const Index d = dim_pick(rng);
    const int s = size_pick(rng);
    Matrix members(d, s);
    for (int j = 0; j < s; ++j) members.col(j) = random_vector(d, rng);
    const Hypercube box = bound_members(members);
    for (int j = 0; j < s; ++j) {
      // Contained up to rounding of center +- offset.
      if (cube_distance(box, members.col(j)).outer > 1e-24) ++contain;
    }

    ModelParams p = testing::random_model(
        testing::make_toy(1, 1, {{0}}, {}, {}),
        n % 2 ? Variant::kAttentive : Variant::kGeometric, static_cast<int>(d),
        static_cast<std::uint64_t>(n), 0.5);
    Matrix other(d, s);
    for (int j = 0; j < s; ++j) other.col(j) = random_vector(d, rng);
    const Hypercube a = compose(members, p.composer);
    const Hypercube b = compose(other, p.composer);
    const Hypercube i = intersect(a, b, nets[d - 1]);
    for (const Hypercube* c : {&box, &a, &b, &i}) {
      if ((c->offset.array() < 0.0).any()) ++negative;
    }
    for (Index z = 0; z < d; ++z) {
      const double m = std::min(a.offset[z], b.offset[z]);
      if (i.offset[z] > m) ++shrink;
      if (m > 0.0 && !(i.offset[z] < m)) ++strict;
      const double lo = std::min(a.center[z], b.center[z]);
      const double hi = std::max(a.center[z], b.center[z]);
      const double slack = 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
      if (i.center[z] < lo - slack || i.center[z] > hi + slack) ++center;
    }
  }
  const int total = contain + negative + shrink + strict + center;
  return {total == 0,
          fmt::format("100000 constructions; violations: containment {}, "
                      "negative offset {}, offset above min {}, not strictly "
                      "below min {}, center outside {}",
                      contain, negative, shrink, strict, center)};
}

// --- 4 ---------------------------------------------------------------------

Outcome hand_metrics() {
  int wrong = 0;
  auto expect = [&](double got, double want) {
    if (got != want) ++wrong;
  };
  const std::vector<Index> ranked = {5, 3, 9, 1, 7, 2, 8, 0, 6, 4, 11};
  // One truth item at rank 3.
  const std::vector<Index> one = {9};
  expect(ndcg_at_k(ranked, one, 10), 1.0 / std::log2(4.0));
  expect(ndcg_at_k(ranked, one, 10), 0.5);
  expect(recall_at_k(ranked, one, 10), 1.0);
  expect(recall_at_k(ranked, one, 2), 0.0);
  // Truth at ranks 1 and 4 plus one item outside the top 10.
  const std::vector<Index> three = {5, 1, 11};
  expect(recall_at_k(ranked, three, 10), 2.0 / 3.0);
  expect(ndcg_at_k(ranked, three, 10),
         (1.0 / std::log2(2.0) + 1.0 / std::log2(5.0)) /
             (1.0 / std::log2(2.0) + 1.0 / std::log2(3.0) + 1.0 / std::log2(4.0)));
  expect(ndcg_at_k(ranked, three, 1), 1.0);
  expect(recall_at_k(ranked, three, 20), 1.0);

  // Mean over two groups: one hit at rank 1, one miss.
  const Dataset ds = testing::make_toy(2, 3, {{0}, {1}}, {{0, 0}, {1, 1}},
                                       {{0, 0, Split::kTest}, {1, 2, Split::kTest}});
  HyperParams h;
  h.dim = 1;
  ModelParams p = init_model(EmbeddingTable::zeros(2, 3, 1), h);
  p.composer = GeometricComposer::identity(1);
  p.embeddings.users << 0.0, 0.0;
  p.embeddings.items << 0.1, 0.2, 5.0;
  const MetricReport r = evaluate(p, ds, {.ks = {1}});
  expect(r.recall(1), 0.5);
  expect(r.ndcg(1), 0.5);
  return {wrong == 0, fmt::format("{} of 10 values differ from the formulas", wrong)};
}

// --- 5 and 6 ---------------------------------------------------------------

// Planted data: five clusters in R^16, 200 users, 300 items, 60 groups drawn
// within a cluster. A group's positives are the 16 items of its cluster
// closest (outer box distance) to the latent bounding box of its members.
testing::SyntheticConfig planted(std::uint64_t seed) {
  testing::SyntheticConfig c;
  c.clusters = 5;
  c.latent_dim = 16;
  c.users = 200;
  c.items = 300;
  c.groups = 60;
  c.items_per_group = 16;
  c.box_gamma = 0.0;
  c.seed = seed;
  return c;
}

HyperParams planted_hyper(std::uint64_t seed) {
  HyperParams h;
  h.variant = Variant::kGeometric;
  h.dim = 16;
  h.lr = 5e-3;
  h.batch_size = 64;
  h.pretrain_epochs = 200;
  h.train_epochs = 100;
  h.seed = seed;
  return h;
}

struct SeedResult {
  std::uint64_t seed = 0;
  double base = 0.0;
  double point = 0.0;
  double no_ssl = 0.0;
};

std::vector<SeedResult> planted_runs() {
  std::vector<SeedResult> out;
  const Ablation toggles[] = {Ablation::kPointDistance, Ablation::kRemoveSsl};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto data = testing::make_synthetic(planted(seed));
    const NamedReports r =
        run_ablation(data.dataset, planted_hyper(seed), toggles, {}, {.ks = {10}});
    out.push_back({seed, r[0].second.recall(10), r[1].second.recall(10),
                   r[2].second.recall(10)});
    std::printf("  seed %llu: default %.4f  point_distance %.4f  remove_ssl %.4f\n",
                static_cast<unsigned long long>(seed), out.back().base,
                out.back().point, out.back().no_ssl);
    std::fflush(stdout);
  }
  return out;
}

Outcome planted_recovery(const SeedResult& r) {
  const bool ok = r.base >= 0.8 && r.base > r.point;
  return {ok, fmt::format("seed {}: Recall@10 {:.4f} (need >= 0.8), point distance "
                          "{:.4f}, margin {:+.4f}",
                          r.seed, r.base, r.point, r.base - r.point)};
}

Outcome ablation_direction(const std::vector<SeedResult>& runs) {
  int holds = 0;
  std::string seeds;
  for (const auto& r : runs) {
    const bool h = r.no_ssl <= r.base && r.point <= r.base;
    holds += h;
    seeds += fmt::format(" {}:{}", r.seed, h ? "yes" : "no");
  }
  return {holds >= 4, fmt::format("direction holds for {} of {} seeds (need 4);{}",
                                  holds, runs.size(), seeds)};
}

// --- 7 and 8 ---------------------------------------------------------------

const fs::path kTiny = fs::path(CUBEREC_FIXTURES) / "tiny";

RunConfig fixture_config(const fs::path& root) {
  RunConfig c;
  c.data_dir = kTiny;
  c.out_dir = root / "prepared";
  c.hyper.dim = 8;
  c.hyper.layers = 2;
  c.hyper.pretrain_epochs = 20;
  c.hyper.train_epochs = 10;
  c.hyper.batch_size = 4;
  c.hyper.seed = 7;
  c.threads = 2;
  return c;
}

std::string pipeline_csv(const fs::path& root) {
  std::ostringstream log;
  RunConfig c = fixture_config(root);
  cmd_prepare(c, log);
  c.data_dir = c.out_dir;
  c.out_dir = root / "run";
  cmd_train(c, log);
  cmd_evaluate(c, {.buckets = true}, log);
  return testing::read_text(c.out_dir / "metrics.csv");
}

Outcome determinism() {
  testing::TempDir a("accept-a"), b("accept-b");
  const std::string first = pipeline_csv(a.path());
  const std::string second = pipeline_csv(b.path());
  const bool ok = !first.empty() && first == second;
  return {ok, fmt::format("metrics.csv {} bytes, runs {}", first.size(),
                          first == second ? "identical" : "differ")};
}

Outcome ingest() {
  testing::TempDir dir("accept-prep");
  std::ostringstream log;
  const RunConfig c = fixture_config(dir.path());
  cmd_prepare(c, log);
  const std::string got = testing::read_text(c.out_dir / "stats.tsv");
  const std::string want = testing::read_text(kTiny / "expected_stats.tsv");
  bool names = true;
  for (const char* field : {"#users\t", "#groups\t", "#items\t", "average #items per user\t",
                            "average #items per group\t", "average #groups per user\t",
                            "average group size\t"}) {
    names = names && got.find(field) != std::string::npos;
  }
  return {got == want && names,
          got == want ? "stats.tsv matches the hand-counted table"
                      : "stats.tsv differs:\n" + got};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  std::vector<SeedResult> runs;
  auto planted = [&]() -> const std::vector<SeedResult>& {
    if (runs.empty()) runs = planted_runs();
    return runs;
  };
  const std::vector<Criterion> criteria = {
      {1, "distance oracle equivalence", distance_oracle},
      {2, "gradient correctness", gradient_probes},
      {3, "geometry properties", geometry_properties},
      {4, "hand-worked metrics", hand_metrics},
      {5, "synthetic planted-preference recovery",
       [&] { return planted_recovery(planted().front()); }},
      {6, "ablation direction on synthetic data",
       [&] { return ablation_direction(planted()); }},
      {7, "determinism", determinism},
      {8, "ingest fidelity", ingest},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, fmt::format("exception: {}", e.what())};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    std::printf("criterion %d [PRIMARY] %s: %s  (%s; %.1fs)\n", c.id, c.name,
                o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n",
              static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
