#include "cuberec/commands.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "cuberec/checkpoint.hpp"
#include "cuberec/parallel.hpp"

namespace cuberec {

namespace fs = std::filesystem;

namespace {

std::ofstream open_output(const fs::path& path) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".")
                                                    : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError(fmt::format("cannot write '{}'", path.string()));
  return out;
}

void write_file(const fs::path& path, const std::string& text) {
  auto out = open_output(path);
  out << text;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(fmt::format("cannot read '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Dataset load_prepared(const RunConfig& config) {
  if (!fs::is_directory(config.data_dir)) {
    throw ValidationError(fmt::format("data directory '{}' does not exist",
                                      config.data_dir.string()));
  }
  return load_dataset_dir(config.data_dir);
}

TrainOptions train_options(const RunConfig& config, std::ostream* log) {
  TrainOptions opts;
  opts.checkpoint_dir = config.out_dir;
  opts.resume = config.checkpoint;
  opts.select_on_validation = config.select_on_validation;
  opts.threads = resolve_threads(config.threads);
  if (log != nullptr) {
    opts.on_epoch = [log](const EpochRecord& r) {
      if (r.stage == 1) {
        *log << fmt::format("pretrain epoch {:4d}  user {:.6f}  ({:.2f}s)\n",
                            r.epoch, r.user_loss, r.seconds);
      } else {
        *log << fmt::format(
            "train    epoch {:4d}  group {:.6f}  self {:.6f}  combined {:.6f}",
            r.epoch, r.group_loss, r.self_loss, r.combined);
        if (!std::isnan(r.val_recall)) {
          *log << fmt::format("  val Recall@10 {:.4f}", r.val_recall);
        }
        *log << fmt::format("  ({:.2f}s)\n", r.seconds);
      }
      log->flush();
    };
  }
  return opts;
}

EvalOptions eval_options(const RunConfig& config, bool buckets) {
  EvalOptions opts;
  opts.ks = config.ks;
  opts.split = Split::kTest;
  opts.point_distance = config.hyper.point_distance;
  opts.buckets = buckets;
  opts.threads = resolve_threads(config.threads);
  return opts;
}

void require_test_split(const Dataset& dataset) {
  if (dataset.count(Split::kTest) == 0) {
    throw ValidationError(
        "dataset has no test group-item pairs; run 'prepare' first");
  }
}

std::string train_log(const TrainReport& report) {
  std::string out =
      "stage\tepoch\tuser_loss\tgroup_loss\tself_loss\tcombined\tval_recall10\t"
      "seconds\n";
  for (const auto& r : report.epochs) {
    out += fmt::format("{}\t{}\t{:.9g}\t{:.9g}\t{:.9g}\t{:.9g}\t{}\t{:.3f}\n",
                       r.stage, r.epoch, r.user_loss, r.group_loss, r.self_loss,
                       r.combined,
                       std::isnan(r.val_recall)
                           ? std::string("-")
                           : fmt::format("{:.6f}", r.val_recall),
                       r.seconds);
  }
  return out;
}

void write_reports(const fs::path& dir, const std::string& stem,
                   const NamedReports& reports) {
  std::string table;
  for (const auto& [name, report] : reports) {
    table += format_report(report, name) + "\n";
  }
  write_file(dir / (stem + ".txt"), table);
  auto csv = open_output(dir / (stem + ".csv"));
  write_report_csv(csv, reports);
}

}  // namespace

PrepareResult cmd_prepare(const RunConfig& config, std::ostream& log) {
  DatasetPaths paths = dataset_paths(config.data_dir);
  if (!paths.social && config.hyper.use_social) {
    throw ValidationError(fmt::format(
        "'{}' not found: provide the social file or set remove_sr "
        "(--remove-sr) to train without social ties",
        (config.data_dir / "social.tsv").string()));
  }
  if (!config.hyper.use_social) paths.social.reset();
  const Dataset raw = load_dataset(paths);
  PrepareResult result{
      split_group_interactions(raw, config.split, config.hyper.seed), {}};
  write_dataset(result.dataset, config.out_dir);
  result.stats = compute_stats(result.dataset);
  const std::string table = format_stats(result.stats);
  write_file(config.out_dir / "stats.tsv", table);
  log << table;
  log << fmt::format("split\ttrain {}\tval {}\ttest {}\n",
                     result.dataset.count(Split::kTrain),
                     result.dataset.count(Split::kValidation),
                     result.dataset.count(Split::kTest));
  return result;
}

TrainResult cmd_train(const RunConfig& config, std::ostream& log) {
  const Dataset dataset = load_prepared(config);
  log << fmt::format("training {} on {} groups, {} users, {} items\n",
                     variant_name(config.hyper.variant), dataset.num_groups(),
                     dataset.num_users(), dataset.num_items());
  TrainResult result =
      train(dataset, config.hyper, train_options(config, &log));
  fs::create_directories(config.out_dir);
  write_file(config.out_dir / "train_log.tsv", train_log(result.report));
  write_file(config.out_dir / "config.txt", format_config(config));
  if (result.report.checkpoint) {
    log << fmt::format("checkpoint: {}\n", result.report.checkpoint->string());
  }
  return result;
}

MetricReport cmd_evaluate(const RunConfig& config, const EvaluateArgs& args,
                          std::ostream& log) {
  const fs::path ckpt =
      config.checkpoint.value_or(config.out_dir / "model.ckpt");
  if (!fs::exists(ckpt)) {
    throw ValidationError(
        fmt::format("checkpoint '{}' does not exist", ckpt.string()));
  }
  const Dataset dataset = load_prepared(config);
  require_test_split(dataset);
  const TrainingState state = load_checkpoint(ckpt);
  if (state.params.embeddings.users.rows() != dataset.num_users() ||
      state.params.embeddings.items.rows() != dataset.num_items()) {
    throw ValidationError(fmt::format(
        "checkpoint '{}' does not match the dataset in '{}'", ckpt.string(),
        config.data_dir.string()));
  }
  const EvalOptions opts = eval_options(config, args.buckets);
  MetricReport report = evaluate(state.params, dataset, opts);
  std::string name(variant_name(state.params.variant()));
  if (opts.point_distance && !state.params.hyper.point_distance) {
    name += "+point_distance";
  }
  const NamedReports reports = {{name, report}};
  write_reports(config.out_dir, "metrics", reports);
  log << format_report(report, name);
  return report;
}

NamedReports cmd_ablate(const RunConfig& config,
                        const std::vector<Ablation>& toggles, bool buckets,
                        std::ostream& log) {
  const Dataset dataset = load_prepared(config);
  require_test_split(dataset);
  RunConfig base = config;
  base.checkpoint.reset();
  TrainOptions topts = train_options(base, &log);
  topts.checkpoint_dir = config.out_dir / "ablation";
  EvalOptions eopts = eval_options(config, buckets);
  // The point-distance scorer belongs to its own run only.
  eopts.point_distance = false;
  const NamedReports reports =
      run_ablation(dataset, config.hyper, toggles, topts, eopts);
  write_reports(config.out_dir, "ablation", reports);
  for (const auto& [name, report] : reports) log << format_report(report, name);
  return reports;
}

std::vector<std::string> default_sweep_values(const std::string& param) {
  if (param == "d" || param == "dim") return {"16", "32", "64", "128", "256"};
  if (param == "gamma" || param == "mu") {
    return {"0.1", "0.3", "0.5", "0.7", "0.9"};
  }
  throw ValidationError(fmt::format(
      "no default sweep grid for '{}'; pass the values explicitly", param));
}

std::vector<std::string> cmd_sweep(const RunConfig& config,
                                   const SweepArgs& args, std::ostream& log) {
  const std::vector<std::string> values =
      args.values.empty() ? default_sweep_values(args.param) : args.values;
  const Dataset dataset = load_prepared(config);
  require_test_split(dataset);

  std::string header = "param,value";
  for (const int k : config.ks) header += fmt::format(",recall@{0},ndcg@{0}", k);
  header += ",n_groups\n";

  std::vector<std::string> rows;
  for (const auto& value : values) {
    RunConfig run = config;
    run.checkpoint.reset();
    apply_setting(run, args.param, value);
    run.hyper.validate();
    const fs::path dir =
        config.out_dir / "sweep" / fmt::format("{}={}", args.param, value);
    const fs::path result_file = dir / "result.csv";
    if (fs::exists(result_file)) {
      const std::string text = read_file(result_file);
      const auto eol = text.find('\n');
      if (eol != std::string::npos && text.substr(0, eol + 1) == header) {
        log << fmt::format("{}={}: already done, skipping\n", args.param, value);
        rows.push_back(text.substr(eol + 1));
        continue;
      }
    }
    log << fmt::format("{}={}: training\n", args.param, value);
    run.out_dir = dir;
    TrainOptions topts = train_options(run, &log);
    const TrainResult trained = train(dataset, run.hyper, topts);
    const MetricReport report =
        evaluate(trained.model, dataset, eval_options(run, false));
    std::string row = fmt::format("{},{}", args.param, value);
    for (const int k : report.ks) {
      row += fmt::format(",{:.6f},{:.6f}", report.recall(k), report.ndcg(k));
    }
    row += fmt::format(",{}\n", report.groups());
    // The result file marks the setting as complete, so it is written last.
    write_file(result_file, header + row);
    rows.push_back(row);
  }

  std::string csv = header;
  for (const auto& row : rows) csv += row;
  write_file(config.out_dir / fmt::format("sweep_{}.csv", args.param), csv);
  log << csv;
  return rows;
}

}  // namespace cuberec
