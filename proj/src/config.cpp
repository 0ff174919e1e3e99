#include "cuberec/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace cuberec {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(trim(s.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
  throw ValidationError(fmt::format("invalid value '{}' for '{}'", value, key));
}

template <class T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  if constexpr (std::is_floating_point_v<T>) {
    // std::from_chars for double is not available on every toolchain.
    std::string copy(value);
    char* end = nullptr;
    out = std::strtod(copy.c_str(), &end);
    if (copy.empty() || end != copy.c_str() + copy.size()) bad_value(key, value);
  } else {
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value);
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  bad_value(key, value);
}

}  // namespace

void apply_setting(RunConfig& c, std::string_view key, std::string_view value) {
  value = trim(value);
  auto& h = c.hyper;
  auto num = [&]<class T>(T& field) { field = parse_number<T>(key, value); };

  if (key == "data_dir" || key == "data-dir") {
    c.data_dir = std::string(value);
  } else if (key == "out_dir" || key == "out-dir") {
    c.out_dir = std::string(value);
  } else if (key == "checkpoint") {
    if (value.empty()) {
      c.checkpoint.reset();
    } else {
      c.checkpoint = std::string(value);
    }
  } else if (key == "variant") {
    h.variant = parse_variant(value);
  } else if (key == "d" || key == "dim") {
    num(h.dim);
  } else if (key == "layers") {
    num(h.layers);
  } else if (key == "gamma") {
    num(h.gamma);
  } else if (key == "mu") {
    num(h.mu);
  } else if (key == "lambda") {
    num(h.margin_user);
    h.margin_group = h.margin_ssl = h.margin_user;
  } else if (key == "lambda_user") {
    num(h.margin_user);
  } else if (key == "lambda_group") {
    num(h.margin_group);
  } else if (key == "lambda_ssl") {
    num(h.margin_ssl);
  } else if (key == "lr") {
    num(h.lr);
  } else if (key == "batch") {
    num(h.batch_size);
  } else if (key == "negatives") {
    num(h.negatives);
  } else if (key == "rho") {
    num(h.rho);
  } else if (key == "dropout") {
    num(h.dropout);
  } else if (key == "epochs") {
    const auto parts = split_list(value);
    if (parts.size() == 1) {
      h.pretrain_epochs = h.train_epochs = parse_number<int>(key, parts[0]);
    } else if (parts.size() == 2) {
      h.pretrain_epochs = parse_number<int>(key, parts[0]);
      h.train_epochs = parse_number<int>(key, parts[1]);
    } else {
      bad_value(key, value);
    }
  } else if (key == "pretrain_epochs") {
    num(h.pretrain_epochs);
  } else if (key == "train_epochs") {
    num(h.train_epochs);
  } else if (key == "tolerance") {
    num(h.tolerance);
  } else if (key == "seed") {
    num(h.seed);
  } else if (key == "remove_sr" || key == "remove-sr") {
    h.use_social = !parse_bool(key, value);
  } else if (key == "point_distance" || key == "point-distance") {
    h.point_distance = parse_bool(key, value);
  } else if (key == "k") {
    c.ks.clear();
    for (auto part : split_list(value)) {
      const int k = parse_number<int>(key, part);
      if (k < 1) bad_value(key, value);
      c.ks.push_back(k);
    }
  } else if (key == "threads") {
    num(c.threads);
  } else if (key == "split") {
    const auto parts = split_list(value);
    if (parts.size() != 3) bad_value(key, value);
    for (int i = 0; i < 3; ++i) c.split[i] = parse_number<double>(key, parts[i]);
  } else if (key == "select_on_validation") {
    c.select_on_validation = parse_bool(key, value);
  } else {
    throw ValidationError(fmt::format("unknown setting '{}'", key));
  }
}

std::vector<Setting> parse_settings(std::string_view text, std::string_view source) {
  std::vector<Setting> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto newline = text.find('\n');
    std::string_view line = text.substr(0, newline);
    text.remove_prefix(newline == std::string_view::npos ? text.size() : newline + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ValidationError(
          fmt::format("{}:{}: expected key=value", source, line_no));
    }
    out.emplace_back(std::string(trim(line.substr(0, eq))),
                     std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

std::vector<Setting> read_settings_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError(fmt::format("cannot open config '{}'", path.string()));
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_settings(buffer.str(), path.string());
}

RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                         const std::vector<Setting>& overrides) {
  RunConfig config;
  if (file) {
    for (const auto& [key, value] : read_settings_file(*file)) {
      apply_setting(config, key, value);
    }
  }
  for (const auto& [key, value] : overrides) apply_setting(config, key, value);
  config.hyper.validate();
  return config;
}

std::string format_hyper(const HyperParams& h) {
  std::string out;
  auto line = [&](std::string_view key, const auto& value) {
    out += fmt::format("{}={}\n", key, value);
  };
  line("variant", variant_name(h.variant));
  line("d", h.dim);
  line("layers", h.layers);
  line("gamma", h.gamma);
  line("mu", h.mu);
  line("lambda_user", h.margin_user);
  line("lambda_group", h.margin_group);
  line("lambda_ssl", h.margin_ssl);
  line("lr", h.lr);
  line("batch", h.batch_size);
  line("negatives", h.negatives);
  line("rho", h.rho);
  line("dropout", h.dropout);
  line("pretrain_epochs", h.pretrain_epochs);
  line("train_epochs", h.train_epochs);
  line("tolerance", h.tolerance);
  line("remove_sr", h.use_social ? "false" : "true");
  line("point_distance", h.point_distance ? "true" : "false");
  line("seed", h.seed);
  return out;
}

HyperParams parse_hyper(std::string_view text) {
  RunConfig config;
  for (const auto& [key, value] : parse_settings(text, "<checkpoint>")) {
    apply_setting(config, key, value);
  }
  return config.hyper;
}

std::string format_config(const RunConfig& c) {
  std::string out;
  out += fmt::format("data_dir={}\n", c.data_dir.string());
  out += fmt::format("out_dir={}\n", c.out_dir.string());
  if (c.checkpoint) out += fmt::format("checkpoint={}\n", c.checkpoint->string());
  out += format_hyper(c.hyper);
  out += fmt::format("k={}\n", fmt::join(c.ks, ","));
  out += fmt::format("split={},{},{}\n", c.split[0], c.split[1], c.split[2]);
  out += fmt::format("threads={}\n", c.threads);
  out += fmt::format("select_on_validation={}\n", c.select_on_validation);
  return out;
}

}  // namespace cuberec
