#pragma once

#include <cstdint>
#include <vector>

#include "cuberec/dataset.hpp"
#include "cuberec/types.hpp"

namespace cuberec::testing {

// Planted-preference generator. Latent points for users and items are drawn
// around `clusters` well separated centers in R^latent_dim. Users interact
// with the nearest items of their own cluster, social ties stay within a
// cluster, groups draw members from one cluster, and a group's positives
// are the cluster items nearest to the latent bounding box of its members.
struct SyntheticConfig {
  int clusters = 5;
  int latent_dim = 16;
  int users = 200;
  int items = 300;
  int groups = 60;
  double center_scale = 3.0;
  double spread = 1.0;
  // Each cluster varies along this many of its own axes (0: all of them);
  // the rest get spread * minor_spread.
  int active_dims = 0;
  double minor_spread = 0.1;
  int items_per_user = 8;
  int friends_per_user = 3;
  int min_group_size = 2;
  int max_group_size = 8;
  int items_per_group = 8;
  // Weight of the center term when ranking items against a group's box.
  double box_gamma = 0.3;
  std::uint64_t seed = 7;
};

struct SyntheticData {
  Dataset dataset;  // already split 8:1:1 with the same seed
  std::vector<int> user_cluster;
  std::vector<int> item_cluster;
  std::vector<int> group_cluster;
  RowMatrix user_latent;
  RowMatrix item_latent;
};

SyntheticData make_synthetic(const SyntheticConfig& config = {});

}  // namespace cuberec::testing
