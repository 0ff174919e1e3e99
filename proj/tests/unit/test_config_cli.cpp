#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include <sys/wait.h>

#include "cuberec/commands.hpp"
#include "cuberec/config.hpp"
#include "files.hpp"

using namespace cuberec;
namespace fs = std::filesystem;

namespace {

const fs::path kTiny = fs::path(CUBEREC_FIXTURES) / "tiny";

int count_lines(const std::string& text) {
  return static_cast<int>(std::count(text.begin(), text.end(), '\n'));
}

int count_of(const std::string& text, const std::string& needle) {
  int n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos;
       pos = text.find(needle, pos + 1)) {
    ++n;
  }
  return n;
}

// Prepared tiny dataset plus a quick training config.
RunConfig quick_config(const fs::path& root) {
  RunConfig c;
  c.data_dir = kTiny;
  c.out_dir = root / "prepared";
  c.hyper.dim = 4;
  c.hyper.layers = 1;
  c.hyper.pretrain_epochs = 2;
  c.hyper.train_epochs = 2;
  c.hyper.batch_size = 8;
  c.threads = 1;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CUBEREC_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("settings precedence: defaults, then file, then flags") {
  testing::TempDir dir("cfg");
  testing::write_text(dir / "run.cfg",
                      "# comment\n\ngamma = 0.4\nd=32\nepochs=7,9\nk=5,10\n");
  const RunConfig c = resolve_config(dir / "run.cfg", {{"d", "16"}, {"remove-sr", "true"}});
  CHECK(c.hyper.gamma == 0.4);
  CHECK(c.hyper.dim == 16);
  CHECK(c.hyper.pretrain_epochs == 7);
  CHECK(c.hyper.train_epochs == 9);
  CHECK(c.ks == std::vector<int>{5, 10});
  CHECK_FALSE(c.hyper.use_social);
  CHECK(c.hyper.mu == RunConfig{}.hyper.mu);

  testing::write_text(dir / "empty.cfg", "");
  CHECK(resolve_config(dir / "empty.cfg", {}) == RunConfig{});
  CHECK(resolve_config(std::nullopt, {}) == RunConfig{});

  RunConfig x;
  apply_setting(x, "lambda", "0.25");
  CHECK(x.hyper.margin_user == 0.25);
  CHECK(x.hyper.margin_group == 0.25);
  CHECK(x.hyper.margin_ssl == 0.25);
  CHECK_THROWS_AS(apply_setting(x, "nonsense", "1"), ValidationError);
  CHECK_THROWS_AS(apply_setting(x, "gamma", "abc"), ValidationError);
  CHECK_THROWS_AS(parse_settings("no equals sign here"), ValidationError);
}

TEST_CASE("hyperparameter text round trip") {
  HyperParams h;
  h.variant = Variant::kAttentive;
  h.gamma = 0.1 + 0.2;
  h.use_social = false;
  h.seed = 123456789012345ULL;
  CHECK(parse_hyper(format_hyper(h)) == h);
}

TEST_CASE("prepare on the tiny fixture") {
  testing::TempDir dir("prep");
  RunConfig c = quick_config(dir.path());
  std::ostringstream log;
  const PrepareResult r = cmd_prepare(c, log);
  CHECK(testing::read_text(c.out_dir / "stats.tsv") ==
        testing::read_text(kTiny / "expected_stats.tsv"));
  CHECK(r.dataset.count(Split::kTrain) + r.dataset.count(Split::kValidation) +
            r.dataset.count(Split::kTest) ==
        11);

  const std::string first = testing::read_text(c.out_dir / "group_item.tsv");
  c.out_dir = dir / "again";
  cmd_prepare(c, log);
  CHECK(testing::read_text(c.out_dir / "group_item.tsv") == first);

  testing::TempDir raw("nosocial");
  for (const char* f : {"user_item.tsv", "group_members.tsv", "group_item.tsv"}) {
    fs::copy_file(kTiny / f, raw / f);
  }
  RunConfig missing = c;
  missing.data_dir = raw.path();
  missing.out_dir = dir / "nosocial";
  try {
    cmd_prepare(missing, log);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("remove_sr") != std::string::npos);
  }
  missing.hyper.use_social = false;
  CHECK(cmd_prepare(missing, log).dataset.social().empty());
}

TEST_CASE("train and evaluate write reproducible metrics") {
  testing::TempDir dir("eval");
  RunConfig prep = quick_config(dir.path());
  std::ostringstream log;
  cmd_prepare(prep, log);

  RunConfig c = prep;
  c.data_dir = prep.out_dir;
  c.out_dir = dir / "run";
  CHECK_THROWS_AS(cmd_evaluate(c, {}, log), ValidationError);

  cmd_train(c, log);
  CHECK(fs::exists(c.out_dir / "model.ckpt"));
  CHECK(fs::exists(c.out_dir / "train_log.tsv"));
  cmd_evaluate(c, {}, log);
  const std::string csv = testing::read_text(c.out_dir / "metrics.csv");
  // Header plus recall and ndcg at K = 10 and 20.
  CHECK(count_lines(csv) == 5);
  CHECK(count_of(csv, ",10,recall,all,") == 1);
  CHECK(count_of(csv, ",20,ndcg,all,") == 1);

  cmd_evaluate(c, {}, log);
  CHECK(testing::read_text(c.out_dir / "metrics.csv") == csv);

  RunConfig k5 = c;
  apply_setting(k5, "k", "5");
  cmd_evaluate(k5, {}, log);
  const std::string five = testing::read_text(c.out_dir / "metrics.csv");
  CHECK(count_lines(five) == 3);
  CHECK(count_of(five, ",5,recall,all,") == 1);

  cmd_evaluate(c, {.buckets = true}, log);
  CHECK(count_lines(testing::read_text(c.out_dir / "metrics.csv")) == 1 + 4 * 7);

  // A second training run from scratch gives the same bytes.
  RunConfig twin = c;
  twin.out_dir = dir / "twin";
  cmd_train(twin, log);
  cmd_evaluate(twin, {}, log);
  CHECK(testing::read_text(twin.out_dir / "metrics.csv") == csv);
}

TEST_CASE("sweep writes one row per value and resumes") {
  testing::TempDir dir("sweep");
  RunConfig prep = quick_config(dir.path());
  std::ostringstream log;
  cmd_prepare(prep, log);
  RunConfig c = prep;
  c.data_dir = prep.out_dir;
  c.out_dir = dir / "run";
  c.hyper.pretrain_epochs = 1;
  c.hyper.train_epochs = 1;

  const SweepArgs args{"gamma", {}};
  CHECK(cmd_sweep(c, args, log).size() == 5);
  const std::string csv = testing::read_text(c.out_dir / "sweep_gamma.csv");
  CHECK(count_lines(csv) == 6);
  CHECK(csv.rfind("param,value,recall@10,ndcg@10,recall@20,ndcg@20,n_groups\n", 0) == 0);

  std::ostringstream again;
  cmd_sweep(c, args, again);
  CHECK(count_of(again.str(), "skipping") == 5);
  CHECK(testing::read_text(c.out_dir / "sweep_gamma.csv") == csv);

  CHECK_THROWS_AS(default_sweep_values("lr"), ValidationError);
}

TEST_CASE("command-line exit codes") {
  testing::TempDir dir("cli");
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") != 0);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("prepare --data-dir " + (dir / "missing").string() + " --out-dir " +
                (dir / "out").string()) == 1);
  CHECK(run_cli("prepare --data-dir " + kTiny.string() + " --out-dir " +
                (dir / "prepared").string()) == 0);
  CHECK(run_cli("train --gamma -1 --data-dir " + (dir / "prepared").string()) == 1);
  // An absurd learning rate overflows the embeddings.
  CHECK(run_cli("train --d 4 --layers 1 --epochs 5,5 --lr 1e200 --data-dir " +
                (dir / "prepared").string() + " --out-dir " + (dir / "nan").string()) == 2);
}
