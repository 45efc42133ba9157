#include "dccf/interactions.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <stdexcept>

#include "dccf/rng.hpp"

namespace dccf {

bool InteractionDataset::has_train_edge(int u, int i) const {
  const auto& items = train_items[u];
  return std::binary_search(items.begin(), items.end(), i);
}

static void sort_dedup(EdgeList& edges, long* dropped) {
  std::sort(edges.begin(), edges.end());
  auto last = std::unique(edges.begin(), edges.end());
  if (dropped) *dropped = static_cast<long>(edges.end() - last);
  edges.erase(last, edges.end());
}

LoadResult load_adjacency_list(const std::string& path, const std::string& role) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + role + " file: " + path);

  LoadResult out;
  std::string line;
  long line_no = 0;
  std::vector<long> nums;
  while (std::getline(in, line)) {
    ++line_no;
    nums.clear();
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
      if (p >= end) break;
      long v = 0;
      auto [q, ec] = std::from_chars(p, end, v);
      bool bad = (ec != std::errc()) ||
                 (q < end && *q != ' ' && *q != '\t' && *q != '\r');
      if (bad) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": parse error: malformed token in " + role + " file");
      }
      nums.push_back(v);
      p = q;
    }
    if (nums.empty()) continue;
    for (long v : nums) {
      if (v < 0) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": validation error: negative index");
      }
      if (v > std::numeric_limits<int>::max()) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": validation error: index out of range");
      }
    }
    int u = static_cast<int>(nums[0]);
    for (std::size_t k = 1; k < nums.size(); ++k) {
      out.edges.emplace_back(u, static_cast<int>(nums[k]));
    }
  }
  sort_dedup(out.edges, &out.duplicates_dropped);
  return out;
}

void write_adjacency_list(const std::string& path, const EdgeList& edges) {
  EdgeList sorted = edges;
  sort_dedup(sorted, nullptr);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open file for writing: " + path);
  std::size_t i = 0;
  while (i < sorted.size()) {
    int u = sorted[i].first;
    out << u;
    while (i < sorted.size() && sorted[i].first == u) {
      out << ' ' << sorted[i].second;
      ++i;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

InteractionDataset build_dataset(EdgeList train, EdgeList test) {
  if (train.empty()) throw std::runtime_error("build_dataset: train edge list is empty");
  sort_dedup(train, nullptr);
  sort_dedup(test, nullptr);

  InteractionDataset ds;
  int max_u = -1, max_i = -1;
  for (const auto& [u, i] : train) {
    max_u = std::max(max_u, u);
    max_i = std::max(max_i, i);
  }
  for (const auto& [u, i] : test) {
    max_u = std::max(max_u, u);
    max_i = std::max(max_i, i);
  }
  ds.num_users = max_u + 1;
  ds.num_items = max_i + 1;

  ds.train_items.assign(ds.num_users, {});
  ds.test_items.assign(ds.num_users, {});
  for (const auto& [u, i] : train) ds.train_items[u].push_back(i);

  // Test interactions of users without train history cannot be ranked
  // against anything the model saw; drop them and report.
  std::vector<char> dropped_user(ds.num_users, 0);
  EdgeList kept_test;
  kept_test.reserve(test.size());
  for (const auto& [u, i] : test) {
    if (ds.train_items[u].empty()) {
      ++ds.dropped_test_edges;
      if (!dropped_user[u]) {
        dropped_user[u] = 1;
        ++ds.dropped_test_users;
      }
      continue;
    }
    kept_test.push_back({u, i});
    ds.test_items[u].push_back(i);
  }
  ds.train_edges = std::move(train);
  ds.test_edges = std::move(kept_test);
  return ds;
}

DatasetStats compute_stats(const InteractionDataset& ds) {
  DatasetStats st;
  st.num_users = ds.num_users;
  st.num_items = ds.num_items;
  st.num_interactions = static_cast<long>(ds.train_edges.size() + ds.test_edges.size());
  double cells = static_cast<double>(ds.num_users) * static_cast<double>(ds.num_items);
  st.density = cells > 0 ? static_cast<double>(st.num_interactions) / cells : 0.0;
  return st;
}

std::string format_density(double density) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1e", density);
  return buf;
}

DegreeBuckets bucket_by_degree(const InteractionDataset& ds, const std::vector<long>& boundaries) {
  for (std::size_t b = 1; b < boundaries.size(); ++b) {
    if (boundaries[b] <= boundaries[b - 1]) {
      throw std::runtime_error("bucket_by_degree: boundaries must be strictly ascending");
    }
  }
  auto bucket_of = [&](long g) {
    for (std::size_t b = 0; b < boundaries.size(); ++b) {
      if (g < boundaries[b]) return static_cast<int>(b);
    }
    return static_cast<int>(boundaries.size());
  };

  DegreeBuckets out;
  out.boundaries = boundaries;
  out.user_bucket.resize(ds.num_users);
  for (int u = 0; u < ds.num_users; ++u) {
    out.user_bucket[u] = bucket_of(static_cast<long>(ds.train_items[u].size()));
  }
  std::vector<long> item_deg(ds.num_items, 0);
  for (const auto& [u, i] : ds.train_edges) ++item_deg[i];
  out.item_bucket.resize(ds.num_items);
  for (int i = 0; i < ds.num_items; ++i) out.item_bucket[i] = bucket_of(item_deg[i]);
  return out;
}

EdgeList synthetic_two_block(const TwoBlockConfig& cfg, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x2b10c));
  EdgeList edges;
  const int ub = cfg.users / 2;  // user block boundary
  const int ib = cfg.items / 2;
  for (int u = 0; u < cfg.users; ++u) {
    std::size_t before = edges.size();
    bool u_low = u < ub;
    for (int i = 0; i < cfg.items; ++i) {
      bool same = (u_low == (i < ib));
      double p = same ? cfg.p_in : cfg.p_cross;
      if (rng.next_unit() < p) edges.push_back({u, i});
    }
    if (edges.size() == before) {
      // Keep every user connected so the split below can always retain a
      // train edge for them.
      int lo = u_low ? 0 : ib;
      int span = u_low ? ib : cfg.items - ib;
      edges.push_back({u, lo + static_cast<int>(rng.next_below(span))});
    }
  }
  return edges;
}

void per_user_holdout(const EdgeList& all, double test_fraction, std::uint64_t seed,
                      EdgeList& train_out, EdgeList& test_out) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) {
    throw std::runtime_error("per_user_holdout: test_fraction must be in [0, 1)");
  }
  std::map<int, std::vector<int>> by_user;
  for (const auto& [u, i] : all) by_user[u].push_back(i);

  train_out.clear();
  test_out.clear();
  for (auto& [u, items] : by_user) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    int deg = static_cast<int>(items.size());
    int k = static_cast<int>(test_fraction * deg + 1e-9);
    k = std::min(k, deg - 1);  // never orphan a user from the train split
    if (k <= 0) {
      for (int i : items) train_out.push_back({u, i});
      continue;
    }
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(u)));
    std::vector<int> shuffled = items;
    rng.shuffle(shuffled);
    for (int t = 0; t < deg; ++t) {
      if (t < k) test_out.push_back({u, shuffled[t]});
      else train_out.push_back({u, shuffled[t]});
    }
  }
  std::sort(train_out.begin(), train_out.end());
  std::sort(test_out.begin(), test_out.end());
}

}  // namespace dccf
