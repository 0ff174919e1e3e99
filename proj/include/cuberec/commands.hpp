#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "cuberec/config.hpp"
#include "cuberec/dataset.hpp"
#include "cuberec/evaluator.hpp"
#include "cuberec/trainer.hpp"

namespace cuberec {

// The pipeline steps behind the CLI subcommands. Each reads from
// config.data_dir, writes under config.out_dir and logs to `log`.

struct PrepareResult {
  Dataset dataset;
  DatasetStats stats;
};

// Raw TSVs in data_dir -> validated, split, canonical dataset in out_dir plus
// stats.tsv.
PrepareResult cmd_prepare(const RunConfig& config, std::ostream& log);

// Pretraining and stage 2 on the prepared dataset in data_dir. Checkpoints
// and train_log.tsv go to out_dir; config.checkpoint resumes stage 2.
TrainResult cmd_train(const RunConfig& config, std::ostream& log);

struct EvaluateArgs {
  bool buckets = false;
};

// Scores the test split with config.checkpoint (default out_dir/model.ckpt)
// and writes metrics.txt and metrics.csv to out_dir.
MetricReport cmd_evaluate(const RunConfig& config, const EvaluateArgs& args,
                          std::ostream& log);

// Default model plus one model per toggle; ablation.txt / ablation.csv.
NamedReports cmd_ablate(const RunConfig& config,
                        const std::vector<Ablation>& toggles, bool buckets,
                        std::ostream& log);

struct SweepArgs {
  std::string param;  // any config key, typically d, gamma or mu
  // Empty: the standard grid for d, gamma and mu.
  std::vector<std::string> values;
};

std::vector<std::string> default_sweep_values(const std::string& param);

// Trains and evaluates once per value, one CSV row per setting in
// out_dir/sweep_<param>.csv. Settings whose result file already exists
// under out_dir/sweep/ are read back instead of retrained. Returns the rows.
std::vector<std::string> cmd_sweep(const RunConfig& config,
                                   const SweepArgs& args, std::ostream& log);

}  // namespace cuberec
