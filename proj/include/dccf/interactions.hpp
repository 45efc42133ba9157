#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace dccf {

// (user, item) pair, 0-based.
using Edge = std::pair<int, int>;
using EdgeList = std::vector<Edge>;

struct LoadResult {
  EdgeList edges;               // sorted by (user, item), deduplicated
  long duplicates_dropped = 0;  // duplicate pairs collapsed at load
};

// Implicit-feedback dataset with a train/test split. Interactions are
// binary; duplicates collapse to a single edge.
struct InteractionDataset {
  int num_users = 0;  // 1 + max user index observed across train and test
  int num_items = 0;  // 1 + max item index observed across train and test
  EdgeList train_edges;  // canonical order: sorted by (user, item)
  EdgeList test_edges;
  std::vector<std::vector<int>> train_items;  // per user, ascending
  std::vector<std::vector<int>> test_items;   // per user, ascending
  long dropped_test_edges = 0;  // test edges whose user has no train history
  long dropped_test_users = 0;

  int train_degree(int u) const { return static_cast<int>(train_items[u].size()); }
  bool has_train_edge(int u, int i) const;
};

struct DatasetStats {
  int num_users = 0;
  int num_items = 0;
  long num_interactions = 0;  // train + test
  double density = 0.0;       // interactions / (users * items)
};

// Degree-based entity grouping for sparsity breakdowns. Boundaries are
// ascending upper bounds; intervals are [0,b0), [b0,b1), ..., [b_last, inf).
struct DegreeBuckets {
  std::vector<long> boundaries;
  std::vector<int> user_bucket;  // per user, train degree bucket
  std::vector<int> item_bucket;
  int num_buckets() const { return static_cast<int>(boundaries.size()) + 1; }

  std::string label(int b) const {
    const std::string lo = b == 0 ? "0" : std::to_string(boundaries[b - 1]);
    if (b == static_cast<int>(boundaries.size())) return "[" + lo + ",inf)";
    return "[" + lo + "," + std::to_string(boundaries[b]) + ")";
  }
};

inline const std::vector<long> kDefaultBucketBoundaries = {10, 20, 50, 100};

// Reads "user item item ..." adjacency lines. Blank lines are skipped; a
// line with only a user id contributes no edges. `role` names the file in
// messages ("train"/"test").
LoadResult load_adjacency_list(const std::string& path, const std::string& role);

// Writes the same format (users ascending, items ascending, edge-free users
// omitted).
void write_adjacency_list(const std::string& path, const EdgeList& edges);

// Assembles the dataset: sizes the index spaces, sorts/dedups edges, drops
// test edges whose user never appears in train, builds per-user adjacency.
InteractionDataset build_dataset(EdgeList train, EdgeList test);

DatasetStats compute_stats(const InteractionDataset& ds);

// Two-significant-digit scientific form, e.g. 4.016e-4 -> "4.0e-04".
std::string format_density(double density);

DegreeBuckets bucket_by_degree(const InteractionDataset& ds, const std::vector<long>& boundaries);

// --- synthetic data -------------------------------------------------------

// Two user/item communities: dense inside a block, sparse across. Every user
// is guaranteed at least one edge. Deterministic in `seed`.
struct TwoBlockConfig {
  int users = 200;
  int items = 200;
  double p_in = 0.15;
  double p_cross = 0.01;
};

EdgeList synthetic_two_block(const TwoBlockConfig& cfg, std::uint64_t seed);

// Per-user random holdout: for each user with >= 2 edges, moves
// floor(test_fraction * degree) (at least 1, at most degree - 1) edges into
// the test split. Deterministic in `seed`.
void per_user_holdout(const EdgeList& all, double test_fraction, std::uint64_t seed,
                      EdgeList& train_out, EdgeList& test_out);

}  // namespace dccf
