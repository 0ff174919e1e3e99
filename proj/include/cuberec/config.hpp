#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cuberec/model.hpp"

namespace cuberec {

// Everything one CLI run needs. Every field has a default, so an empty
// config file is runnable.
struct RunConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "out";
  std::optional<std::filesystem::path> checkpoint;
  HyperParams hyper;
  std::vector<int> ks = {10, 20};
  std::array<double, 3> split = {0.8, 0.1, 0.1};
  int threads = 0;  // 0: all available cores
  bool select_on_validation = true;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

using Setting = std::pair<std::string, std::string>;

// Applies one `key=value` setting. Unknown keys and unparsable values throw
// ValidationError. `lambda` sets all three margins; `epochs` takes
// "pretrain,train" or a single value for both.
void apply_setting(RunConfig& config, std::string_view key,
                   std::string_view value);

// Line-oriented key=value text; '#' starts a comment, blank lines ignored.
std::vector<Setting> parse_settings(std::string_view text,
                                    std::string_view source = "<config>");
std::vector<Setting> read_settings_file(const std::filesystem::path& path);

// Defaults, then the config file, then flag overrides.
RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<Setting>& overrides);

// Round-trippable text of every hyperparameter.
std::string format_hyper(const HyperParams& hyper);
HyperParams parse_hyper(std::string_view text);
std::string format_config(const RunConfig& config);

}  // namespace cuberec
