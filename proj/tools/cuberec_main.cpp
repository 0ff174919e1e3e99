// cuberec: batch front end (prepare / train / evaluate / ablate / sweep).

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cuberec/commands.hpp"

namespace {

using cuberec::Setting;

struct CommonArgs {
  std::optional<std::string> config_file;
  std::vector<Setting> overrides;
};

void add_common(CLI::App* app, CommonArgs& args) {
  app->add_option_function<std::string>(
      "--config", [&](const std::string& v) { args.config_file = v; },
      "key=value config file");
  auto value = [&](const char* flag, const char* key, const char* help) {
    app->add_option_function<std::string>(
        flag, [&args, key](const std::string& v) {
          args.overrides.emplace_back(key, v);
        },
        help);
  };
  auto toggle = [&](const char* flag, const char* key, const char* help) {
    app->add_flag_callback(
        flag, [&args, key] { args.overrides.emplace_back(key, "true"); }, help);
  };
  value("--data-dir", "data_dir", "dataset directory");
  value("--out-dir", "out_dir", "output directory");
  value("--checkpoint", "checkpoint",
        "checkpoint to evaluate, or last.ckpt to resume training from");
  value("--variant", "variant", "cuberec-g or cuberec-a");
  value("--d", "d", "embedding dimension");
  value("--layers", "layers", "graph propagation layers");
  value("--gamma", "gamma", "weight of the inner distance");
  value("--mu", "mu", "weight of the self-supervised loss");
  value("--lambda", "lambda", "margin of all three hinge losses");
  value("--lr", "lr", "Adam learning rate");
  value("--batch", "batch", "mini-batch size");
  value("--negatives", "negatives", "negative items per positive");
  value("--rho", "rho", "dummy-group swap/impute proportion");
  value("--dropout", "dropout", "dropout rate during training");
  value("--epochs", "epochs", "pretrain,train epoch budgets (or one value)");
  value("--seed", "seed", "random seed");
  value("--k", "k", "comma-separated cutoffs, e.g. 10,20");
  value("--threads", "threads", "worker threads (0: all cores)");
  value("--split", "split", "train,val,test ratios for prepare");
  toggle("--remove-sr", "remove_sr", "drop social ties from the graph");
  toggle("--point-distance", "point_distance",
         "rank and train with the squared center distance");
}

cuberec::RunConfig resolve(const CommonArgs& args) {
  std::optional<std::filesystem::path> file;
  if (args.config_file) file = *args.config_file;
  return cuberec::resolve_config(file, args.overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group recommendation with hypercube group representations"};
  app.require_subcommand(1);

  CommonArgs prepare_args, train_args, eval_args, ablate_args, sweep_args;
  bool eval_buckets = false;
  bool ablate_buckets = false;
  std::vector<std::string> toggles;
  cuberec::SweepArgs sweep;

  auto* prepare = app.add_subcommand(
      "prepare", "validate, re-index and split raw TSVs into a dataset directory");
  add_common(prepare, prepare_args);

  auto* train = app.add_subcommand("train", "pretrain and train a model");
  add_common(train, train_args);

  auto* evaluate = app.add_subcommand("evaluate", "score the test split");
  add_common(evaluate, eval_args);
  evaluate->add_flag("--buckets", eval_buckets, "break results down by group size");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate ablations");
  add_common(ablate, ablate_args);
  ablate->add_flag("--buckets", ablate_buckets, "break results down by group size");
  ablate->add_option("--toggles", toggles,
                     "subset of remove_sr, point_distance, remove_ssl (default all)")
      ->delimiter(',');

  auto* sweep_cmd = app.add_subcommand("sweep", "one-parameter sweep");
  add_common(sweep_cmd, sweep_args);
  sweep_cmd->add_option("--param", sweep.param, "setting to vary (d, gamma, mu, ...)")
      ->required();
  sweep_cmd->add_option("--values", sweep.values, "values (default: standard grid)")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (prepare->parsed()) {
      cuberec::cmd_prepare(resolve(prepare_args), std::cout);
    } else if (train->parsed()) {
      cuberec::cmd_train(resolve(train_args), std::cout);
    } else if (evaluate->parsed()) {
      cuberec::cmd_evaluate(resolve(eval_args), {eval_buckets}, std::cout);
    } else if (ablate->parsed()) {
      std::vector<cuberec::Ablation> chosen;
      if (toggles.empty()) {
        chosen = {cuberec::Ablation::kRemoveSocial,
                  cuberec::Ablation::kPointDistance,
                  cuberec::Ablation::kRemoveSsl};
      }
      for (const auto& t : toggles) chosen.push_back(cuberec::parse_ablation(t));
      cuberec::cmd_ablate(resolve(ablate_args), chosen, ablate_buckets, std::cout);
    } else if (sweep_cmd->parsed()) {
      cuberec::cmd_sweep(resolve(sweep_args), sweep, std::cout);
    }
  } catch (const cuberec::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
