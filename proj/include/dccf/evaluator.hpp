#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dccf/interactions.hpp"
#include "dccf/matrix.hpp"
#include "dccf/rng.hpp"

namespace dccf {

struct EvalOptions {
  std::vector<int> cutoffs = {20, 40};
  bool exclude_train_items = true;  // standard all-rank protocol
  bool compute_mad = true;
  int mad_sample_cap = 4096;
  std::uint64_t mad_seed = 9001;
  std::vector<long> bucket_boundaries;  // empty -> no degree-bucket breakdown
  int num_threads = 1;

  void validate() const {
    if (cutoffs.empty()) throw std::runtime_error("eval options: need at least one cutoff");
    for (std::size_t i = 0; i < cutoffs.size(); ++i) {
      if (cutoffs[i] < 1) throw std::runtime_error("eval options: cutoffs must be >= 1");
      if (i > 0 && cutoffs[i] <= cutoffs[i - 1]) {
        throw std::runtime_error("eval options: cutoffs must be strictly ascending");
      }
    }
    if (mad_sample_cap < 2) throw std::runtime_error("eval options: mad_sample_cap must be >= 2");
    if (num_threads < 1) throw std::runtime_error("eval options: num_threads must be >= 1");
  }
};

struct BucketReport {
  std::string label;
  long entity_count = 0;   // users in the bucket / items in the bucket
  long evaluated = 0;      // users contributing to this bucket's means
  std::vector<double> recall;  // aligned with cutoffs
  std::vector<double> ndcg;
};

struct EvalReport {
  std::vector<int> cutoffs;
  std::vector<double> recall;  // aligned with cutoffs
  std::vector<double> ndcg;
  long evaluated_users = 0;
  bool has_mad = false;
  double mad_user = 0.0;
  double mad_item = 0.0;
  int mad_sample_cap = 0;
  std::vector<BucketReport> user_buckets;
  std::vector<BucketReport> item_buckets;
};

// Top-N item indices for one user's score row: train items optionally
// excluded (treated as unrankable), ties broken by ascending item index.
template <class S>
std::vector<int> rank_items(const S* scores, int num_items, const std::vector<int>& train_items,
                            int n, bool exclude_train = true) {
  if (n < 1) throw std::runtime_error("rank_items: n must be >= 1");
  std::vector<int> candidates;
  candidates.reserve(num_items);
  if (exclude_train && !train_items.empty()) {
    std::size_t t = 0;
    for (int j = 0; j < num_items; ++j) {
      if (t < train_items.size() && train_items[t] == j) {
        ++t;
        continue;
      }
      candidates.push_back(j);
    }
  } else {
    candidates.resize(num_items);
    std::iota(candidates.begin(), candidates.end(), 0);
  }
  const int take = std::min<int>(n, static_cast<int>(candidates.size()));
  auto better = [scores](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(candidates.begin(), candidates.begin() + take, candidates.end(), better);
  candidates.resize(take);
  return candidates;
}

// |topn  ∩ test| / |test|; test_items must be sorted ascending.
inline double recall_at_n(const std::vector<int>& topn, const std::vector<int>& test_items) {
  if (test_items.empty()) throw std::runtime_error("recall_at_n: empty test set");
  long hits = 0;
  for (int j : topn) {
    if (std::binary_search(test_items.begin(), test_items.end(), j)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test_items.size());
}

// Binary-gain DCG over the top-N list (gain 1/log2(p+1) at 1-based hit
// position p), normalized by the ideal DCG over min(n, |test|) positions.
inline double ndcg_at_n(const std::vector<int>& topn, const std::vector<int>& test_items, int n) {
  if (test_items.empty()) throw std::runtime_error("ndcg_at_n: empty test set");
  double dcg = 0.0;
  for (std::size_t p = 0; p < topn.size(); ++p) {
    if (std::binary_search(test_items.begin(), test_items.end(), topn[p])) {
      dcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
    }
  }
  const int ideal = std::min<int>(n, static_cast<int>(test_items.size()));
  double idcg = 0.0;
  for (int p = 0; p < ideal; ++p) idcg += 1.0 / std::log2(static_cast<double>(p) + 2.0);
  return dcg / idcg;
}

// Mean average cosine distance over all row pairs, rows L2-normalized first.
// Above sample_cap rows, a seeded uniform row subsample of that size is used.
template <class S>
double mad(const Matrix<S>& emb, int sample_cap = 4096, std::uint64_t seed = 9001) {
  if (emb.rows < 2) throw std::runtime_error("mad: need at least 2 rows");
  if (sample_cap < 2) throw std::runtime_error("mad: sample_cap must be >= 2");

  std::vector<int> rows(emb.rows);
  std::iota(rows.begin(), rows.end(), 0);
  if (emb.rows > sample_cap) {
    Rng rng(mix_seed(seed, 0x3ad));
    rng.shuffle(rows);
    rows.resize(sample_cap);
    std::sort(rows.begin(), rows.end());
  }

  const int n = static_cast<int>(rows.size());
  const int d = emb.cols;
  std::vector<double> unit(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    const S* r = emb.row(rows[i]);
    double q = 0;
    for (int k = 0; k < d; ++k) q += static_cast<double>(r[k]) * static_cast<double>(r[k]);
    const double denom = q > 0.0 ? std::sqrt(q) : 1e-12;  // identical rows must collapse to 0
    for (int k = 0; k < d; ++k) unit[static_cast<std::size_t>(i) * d + k] = static_cast<double>(r[k]) / denom;
  }

  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double* xi = unit.data() + static_cast<std::size_t>(i) * d;
    for (int j = i + 1; j < n; ++j) {
      const double* xj = unit.data() + static_cast<std::size_t>(j) * d;
      double dot = 0;
      for (int k = 0; k < d; ++k) dot += xi[k] * xj[k];
      sum += 1.0 - dot;
    }
  }
  const double pairs = static_cast<double>(n) * (n - 1) / 2.0;
  return sum / pairs;
}

namespace detail {

struct UserMetrics {
  bool evaluated = false;
  std::vector<double> recall;     // per cutoff
  std::vector<double> ndcg;       // per cutoff
  std::vector<int> top_max;       // top-max(cutoffs) list, for bucket reuse
};

}  // namespace detail

// Full all-rank evaluation: per test user, scores against every item,
// ranking with train-item exclusion, Recall/NDCG at each cutoff, plus
// optional embedding-spread (MAD) and degree-bucket breakdowns. Worker
// threads write into per-user slots, so results do not depend on
// num_threads.
template <class S>
EvalReport evaluate_all(const Matrix<S>& user_emb, const Matrix<S>& item_emb,
                        const InteractionDataset& ds, const EvalOptions& opt) {
  opt.validate();
  if (user_emb.rows != ds.num_users || item_emb.rows != ds.num_items ||
      user_emb.cols != item_emb.cols) {
    throw std::runtime_error(
        "evaluate_all: embedding shapes (" + std::to_string(user_emb.rows) + "x" +
        std::to_string(user_emb.cols) + ", " + std::to_string(item_emb.rows) + "x" +
        std::to_string(item_emb.cols) + ") do not match dataset (" +
        std::to_string(ds.num_users) + " users, " + std::to_string(ds.num_items) + " items)");
  }

  const int num_cutoffs = static_cast<int>(opt.cutoffs.size());
  const int max_cutoff = opt.cutoffs.back();
  const int d = user_emb.cols;

  std::vector<detail::UserMetrics> per_user(ds.num_users);
  auto eval_user = [&](int u) {
    const auto& test = ds.test_items.at(u);
    if (test.empty()) return;
    detail::UserMetrics m;
    m.evaluated = true;
    std::vector<S> scores(ds.num_items);
    const S* eu = user_emb.row(u);
    for (int j = 0; j < ds.num_items; ++j) {
      const S* ej = item_emb.row(j);
      S acc = 0;
      for (int k = 0; k < d; ++k) acc += eu[k] * ej[k];
      scores[j] = acc;
    }
    m.top_max = rank_items(scores.data(), ds.num_items, ds.train_items.at(u), max_cutoff,
                           opt.exclude_train_items);
    m.recall.resize(num_cutoffs);
    m.ndcg.resize(num_cutoffs);
    for (int c = 0; c < num_cutoffs; ++c) {
      std::vector<int> topn(m.top_max.begin(),
                            m.top_max.begin() + std::min<std::size_t>(m.top_max.size(),
                                                                      opt.cutoffs[c]));
      m.recall[c] = recall_at_n(topn, test);
      m.ndcg[c] = ndcg_at_n(topn, test, opt.cutoffs[c]);
    }
    per_user[u] = std::move(m);
  };

  if (opt.num_threads <= 1 || ds.num_users < 2) {
    for (int u = 0; u < ds.num_users; ++u) eval_user(u);
  } else {
    const int workers = std::min<int>(opt.num_threads, ds.num_users);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (int u = w; u < ds.num_users; u += workers) eval_user(u);
      });
    }
    for (auto& t : pool) t.join();
  }

  EvalReport report;
  report.cutoffs = opt.cutoffs;
  report.recall.assign(num_cutoffs, 0.0);
  report.ndcg.assign(num_cutoffs, 0.0);
  for (int u = 0; u < ds.num_users; ++u) {
    const auto& m = per_user[u];
    if (!m.evaluated) continue;
    ++report.evaluated_users;
    for (int c = 0; c < num_cutoffs; ++c) {
      report.recall[c] += m.recall[c];
      report.ndcg[c] += m.ndcg[c];
    }
  }
  if (report.evaluated_users > 0) {
    for (int c = 0; c < num_cutoffs; ++c) {
      report.recall[c] /= static_cast<double>(report.evaluated_users);
      report.ndcg[c] /= static_cast<double>(report.evaluated_users);
    }
  }

  if (opt.compute_mad && ds.num_users >= 2 && ds.num_items >= 2) {
    report.has_mad = true;
    report.mad_sample_cap = opt.mad_sample_cap;
    report.mad_user = mad(user_emb, opt.mad_sample_cap, opt.mad_seed);
    report.mad_item = mad(item_emb, opt.mad_sample_cap, opt.mad_seed);
  }

  if (!opt.bucket_boundaries.empty()) {
    const DegreeBuckets buckets = bucket_by_degree(ds, opt.bucket_boundaries);

    // User buckets: restrict the evaluated users to the bucket's members.
    for (int b = 0; b < buckets.num_buckets(); ++b) {
      BucketReport br;
      br.label = buckets.label(b);
      br.recall.assign(num_cutoffs, 0.0);
      br.ndcg.assign(num_cutoffs, 0.0);
      for (int u = 0; u < ds.num_users; ++u) {
        if (buckets.user_bucket[u] != b) continue;
        ++br.entity_count;
        const auto& m = per_user[u];
        if (!m.evaluated) continue;
        ++br.evaluated;
        for (int c = 0; c < num_cutoffs; ++c) {
          br.recall[c] += m.recall[c];
          br.ndcg[c] += m.ndcg[c];
        }
      }
      if (br.evaluated > 0) {
        for (int c = 0; c < num_cutoffs; ++c) {
          br.recall[c] /= static_cast<double>(br.evaluated);
          br.ndcg[c] /= static_cast<double>(br.evaluated);
        }
      }
      report.user_buckets.push_back(std::move(br));
    }

    // Item buckets: per user, restrict the test interactions to the bucket's
    // items and recompute the metrics over the same global ranking.
    for (int b = 0; b < buckets.num_buckets(); ++b) {
      BucketReport br;
      br.label = buckets.label(b);
      br.recall.assign(num_cutoffs, 0.0);
      br.ndcg.assign(num_cutoffs, 0.0);
      for (int j = 0; j < ds.num_items; ++j) {
        if (buckets.item_bucket[j] == b) ++br.entity_count;
      }
      for (int u = 0; u < ds.num_users; ++u) {
        const auto& m = per_user[u];
        if (!m.evaluated) continue;
        std::vector<int> restricted;
        for (int j : ds.test_items.at(u)) {
          if (buckets.item_bucket[j] == b) restricted.push_back(j);
        }
        if (restricted.empty()) continue;
        ++br.evaluated;
        for (int c = 0; c < num_cutoffs; ++c) {
          std::vector<int> topn(m.top_max.begin(),
                                m.top_max.begin() + std::min<std::size_t>(m.top_max.size(),
                                                                          opt.cutoffs[c]));
          br.recall[c] += recall_at_n(topn, restricted);
          br.ndcg[c] += ndcg_at_n(topn, restricted, opt.cutoffs[c]);
        }
      }
      if (br.evaluated > 0) {
        for (int c = 0; c < num_cutoffs; ++c) {
          br.recall[c] /= static_cast<double>(br.evaluated);
          br.ndcg[c] /= static_cast<double>(br.evaluated);
        }
      }
      report.item_buckets.push_back(std::move(br));
    }
  }

  return report;
}

}  // namespace dccf
