#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>

#include "cuberec/adam.hpp"
#include "cuberec/graph_embed.hpp"
#include "cuberec/model.hpp"

namespace cuberec {

// Binary, little-endian. Both kinds start with the 8-byte magic "CUBEREC\0",
// a u32 format version and a u32 kind (1 = embeddings, 2 = model); the
// README documents the full layout.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct EmbeddingCheckpoint {
  EmbeddingTable table;
  std::uint64_t seed = 0;
  std::int64_t epoch = 0;
};

void save_embeddings(const std::filesystem::path& path,
                     const EmbeddingTable& table, std::uint64_t seed,
                     std::int64_t epoch);
EmbeddingCheckpoint load_embeddings(const std::filesystem::path& path);

// Resumable stage-2 state.
struct TrainingState {
  ModelParams params;
  AdamState adam;
  std::int64_t epochs_done = 0;
  double last_loss = std::numeric_limits<double>::quiet_NaN();
  double best_metric = -std::numeric_limits<double>::infinity();
  std::int64_t best_epoch = -1;
};

// Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path& path,
                     const TrainingState& state);
TrainingState load_checkpoint(const std::filesystem::path& path);

}  // namespace cuberec
