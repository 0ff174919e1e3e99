#include "cuberec/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "cuberec/config.hpp"

namespace cuberec {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

namespace fs = std::filesystem;

constexpr char kMagic[8] = {'C', 'U', 'B', 'E', 'R', 'E', 'C', '\0'};
enum class Kind : std::uint32_t { kEmbeddings = 1, kModel = 2 };

class Writer {
 public:
  explicit Writer(const fs::path& path) : path_(path), tmp_(path) {
    tmp_ += ".tmp";
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(tmp_, std::ios::binary | std::ios::trunc);
    if (!out_) throw ValidationError(fmt::format("cannot write '{}'", tmp_.string()));
  }

  template <class T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    put_bytes(s.data(), s.size());
  }
  void put_doubles(std::span<const double> values) {
    put<std::uint64_t>(values.size());
    put_bytes(values.data(), values.size() * sizeof(double));
  }
  void commit() {
    out_.close();
    if (!out_) throw ValidationError(fmt::format("failed writing '{}'", tmp_.string()));
    fs::rename(tmp_, path_);
  }

 private:
  fs::path path_;
  fs::path tmp_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const fs::path& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw ValidationError(fmt::format("cannot open checkpoint '{}'", path.string()));
  }

  template <class T>
  T get() {
    T value{};
    get_bytes(&value, sizeof(T));
    return value;
  }
  void get_bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (!in_) fail("truncated file");
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    if (n > (1u << 20)) fail("oversized text block");
    std::string s(n, '\0');
    get_bytes(s.data(), n);
    return s;
  }
  void get_doubles(std::span<double> out) {
    const auto n = get<std::uint64_t>();
    if (n != out.size()) {
      fail(fmt::format("tensor of {} values where {} expected", n, out.size()));
    }
    get_bytes(out.data(), n * sizeof(double));
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) fail("trailing bytes");
  }
  [[noreturn]] void fail(std::string_view what) const {
    throw ValidationError(fmt::format("checkpoint '{}': {}", path_.string(), what));
  }

 private:
  fs::path path_;
  std::ifstream in_;
};

void put_header(Writer& w, Kind kind) {
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kind));
}

void check_header(Reader& r, Kind kind) {
  char magic[8];
  r.get_bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) r.fail("not a checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    r.fail(fmt::format("unsupported format version {}", version));
  }
  if (r.get<std::uint32_t>() != static_cast<std::uint32_t>(kind)) {
    r.fail("unexpected checkpoint kind");
  }
}

}  // namespace

void save_embeddings(const fs::path& path, const EmbeddingTable& table,
                     std::uint64_t seed, std::int64_t epoch) {
  Writer w(path);
  put_header(w, Kind::kEmbeddings);
  w.put<std::uint64_t>(table.users.rows());
  w.put<std::uint64_t>(table.items.rows());
  w.put<std::uint64_t>(table.users.cols());
  w.put<std::uint64_t>(seed);
  w.put<std::int64_t>(epoch);
  w.put_doubles({table.users.data(), static_cast<std::size_t>(table.users.size())});
  w.put_doubles({table.items.data(), static_cast<std::size_t>(table.items.size())});
  w.commit();
}

EmbeddingCheckpoint load_embeddings(const fs::path& path) {
  Reader r(path);
  check_header(r, Kind::kEmbeddings);
  const auto n_users = r.get<std::uint64_t>();
  const auto n_items = r.get<std::uint64_t>();
  const auto dim = r.get<std::uint64_t>();
  EmbeddingCheckpoint out;
  out.seed = r.get<std::uint64_t>();
  out.epoch = r.get<std::int64_t>();
  out.table = EmbeddingTable::zeros(static_cast<Index>(n_users),
                                    static_cast<Index>(n_items),
                                    static_cast<Index>(dim));
  r.get_doubles({out.table.users.data(), static_cast<std::size_t>(out.table.users.size())});
  r.get_doubles({out.table.items.data(), static_cast<std::size_t>(out.table.items.size())});
  r.expect_end();
  return out;
}

void save_checkpoint(const fs::path& path, const TrainingState& state) {
  Writer w(path);
  put_header(w, Kind::kModel);
  w.put_string(format_hyper(state.params.hyper));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(state.params.variant()));
  w.put<std::uint64_t>(state.params.embeddings.users.rows());
  w.put<std::uint64_t>(state.params.embeddings.items.rows());
  w.put<std::uint64_t>(state.params.dim());
  w.put<std::int64_t>(state.epochs_done);
  w.put<double>(state.last_loss);
  w.put<double>(state.best_metric);
  w.put<std::int64_t>(state.best_epoch);

  const auto tensors = parameter_tensors(state.params);
  w.put<std::uint64_t>(tensors.size());
  for (const auto& t : tensors) w.put_doubles(t);

  const bool has_adam = state.adam.first.size() == tensors.size();
  w.put<std::uint8_t>(has_adam ? 1 : 0);
  if (has_adam) {
    w.put<std::int64_t>(state.adam.step);
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      w.put_doubles(state.adam.first[i]);
      w.put_doubles(state.adam.second[i]);
    }
  }
  w.commit();
}

TrainingState load_checkpoint(const fs::path& path) {
  Reader r(path);
  check_header(r, Kind::kModel);
  TrainingState state;
  HyperParams hyper = parse_hyper(r.get_string());
  const auto variant = static_cast<Variant>(r.get<std::uint32_t>());
  if (variant != hyper.variant) r.fail("variant does not match hyperparameters");
  const auto n_users = static_cast<Index>(r.get<std::uint64_t>());
  const auto n_items = static_cast<Index>(r.get<std::uint64_t>());
  const auto dim = static_cast<Index>(r.get<std::uint64_t>());
  state.epochs_done = r.get<std::int64_t>();
  state.last_loss = r.get<double>();
  state.best_metric = r.get<double>();
  state.best_epoch = r.get<std::int64_t>();

  hyper.dim = dim;
  state.params = init_model(EmbeddingTable::zeros(n_users, n_items, dim), hyper);
  auto tensors = parameter_tensors(state.params);
  if (r.get<std::uint64_t>() != tensors.size()) r.fail("unexpected tensor count");
  for (auto& t : tensors) r.get_doubles(t);

  if (r.get<std::uint8_t>() != 0) {
    state.adam = AdamState(tensors);
    state.adam.step = r.get<std::int64_t>();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      r.get_doubles(state.adam.first[i]);
      r.get_doubles(state.adam.second[i]);
    }
  }
  r.expect_end();
  return state;
}

}  // namespace cuberec
