#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "dccf/interactions.hpp"

namespace {

std::string write_tmp(const std::string& name, const std::string& content) {
  std::filesystem::create_directories("ut_data");
  const std::string path = "ut_data/" + name;
  std::ofstream out(path);
  out << content;
  return path;
}

}  // namespace

TEST_CASE("adjacency list loading") {
  SUBCASE("parses users with item lists and dedups") {
    const auto path = write_tmp("ok.txt", "0 1 2 2\n\n2 0\n1\n0 1\n");
    const dccf::LoadResult r = dccf::load_adjacency_list(path, "train");
    CHECK(r.edges == dccf::EdgeList{{0, 1}, {0, 2}, {2, 0}});
    CHECK(r.duplicates_dropped == 2);  // "0 1" twice and "0 2 2"
  }

  SUBCASE("missing file names the path") {
    CHECK_THROWS_WITH_AS(dccf::load_adjacency_list("ut_data/absent.txt", "train"),
                         doctest::Contains("ut_data/absent.txt"), std::runtime_error);
  }

  SUBCASE("malformed token reports file and line") {
    const auto path = write_tmp("bad_tok.txt", "0 1\n2 x3\n");
    CHECK_THROWS_WITH_AS(dccf::load_adjacency_list(path, "train"),
                         doctest::Contains(":2: parse error"), std::runtime_error);
  }

  SUBCASE("negative index rejected") {
    const auto path = write_tmp("neg.txt", "0 -1\n");
    CHECK_THROWS_WITH_AS(dccf::load_adjacency_list(path, "train"),
                         doctest::Contains("negative index"), std::runtime_error);
  }

  SUBCASE("tabs and trailing whitespace accepted") {
    const auto path = write_tmp("ws.txt", "0\t1 2 \r\n");
    CHECK(dccf::load_adjacency_list(path, "train").edges == dccf::EdgeList{{0, 1}, {0, 2}});
  }

  SUBCASE("round trip through writer") {
    const dccf::EdgeList edges = {{3, 0}, {0, 5}, {0, 2}, {3, 1}};
    const auto path = "ut_data/rt.txt";
    std::filesystem::create_directories("ut_data");
    dccf::write_adjacency_list(path, edges);
    const dccf::LoadResult r = dccf::load_adjacency_list(path, "train");
    CHECK(r.edges == dccf::EdgeList{{0, 2}, {0, 5}, {3, 0}, {3, 1}});
  }
}

TEST_CASE("dataset assembly") {
  SUBCASE("index spaces cover train and test") {
    const dccf::InteractionDataset ds =
        dccf::build_dataset({{0, 0}, {1, 2}}, {{1, 4}, {3, 0}, {3, 1}});
    CHECK(ds.num_users == 4);
    CHECK(ds.num_items == 5);
    CHECK(ds.train_edges.size() == 2);
    // user 3 has no train history: its test edges are dropped
    CHECK(ds.test_edges == dccf::EdgeList{{1, 4}});
    CHECK(ds.dropped_test_edges == 2);
    CHECK(ds.dropped_test_users == 1);
    CHECK(ds.train_items[1] == std::vector<int>{2});
    CHECK(ds.test_items[1] == std::vector<int>{4});
    CHECK(ds.has_train_edge(1, 2));
    CHECK_FALSE(ds.has_train_edge(1, 4));
  }

  SUBCASE("empty train rejected") {
    CHECK_THROWS_WITH_AS(dccf::build_dataset({}, {{0, 0}}), doctest::Contains("empty"),
                         std::runtime_error);
  }

  SUBCASE("stats and density formatting") {
    dccf::InteractionDataset ds = dccf::build_dataset({{0, 0}}, {});
    ds.num_users = 29858;  // plausible large catalog
    ds.num_items = 40981;
    ds.train_edges.assign(491436, {0, 0});
    const dccf::DatasetStats st = dccf::compute_stats(ds);
    CHECK(st.num_interactions == 491436);
    CHECK(dccf::format_density(st.density) == "4.0e-04");
    CHECK(dccf::format_density(0.0) == "0.0e+00");
  }
}

TEST_CASE("degree buckets") {
  dccf::EdgeList train;
  for (int i = 0; i < 12; ++i) train.push_back({0, i});  // user 0: degree 12
  train.push_back({1, 0});                               // user 1: degree 1
  const dccf::InteractionDataset ds = dccf::build_dataset(train, {});
  const dccf::DegreeBuckets b = dccf::bucket_by_degree(ds, {10, 20});
  CHECK(b.num_buckets() == 3);
  CHECK(b.user_bucket[0] == 1);  // 12 in [10,20)
  CHECK(b.user_bucket[1] == 0);  // 1 in [0,10)
  CHECK(b.item_bucket[0] == 0);  // item 0: degree 2
  CHECK(b.label(0) == "[0,10)");
  CHECK(b.label(1) == "[10,20)");
  CHECK(b.label(2) == "[20,inf)");
  CHECK_THROWS_WITH_AS(dccf::bucket_by_degree(ds, {20, 10}), doctest::Contains("ascending"),
                       std::runtime_error);
}

TEST_CASE("per-user holdout") {
  dccf::EdgeList all;
  for (int u = 0; u < 20; ++u) {
    for (int i = 0; i < 3 + u % 5; ++i) all.push_back({u, i});
  }

  dccf::EdgeList train1, test1, train2, test2;
  dccf::per_user_holdout(all, 0.2, 7, train1, test1);
  dccf::per_user_holdout(all, 0.2, 7, train2, test2);

  SUBCASE("deterministic in the seed") {
    CHECK(train1 == train2);
    CHECK(test1 == test2);
  }

  SUBCASE("partition preserves the edge set") {
    dccf::EdgeList merged = train1;
    merged.insert(merged.end(), test1.begin(), test1.end());
    std::sort(merged.begin(), merged.end());
    dccf::EdgeList sorted_all = all;
    std::sort(sorted_all.begin(), sorted_all.end());
    CHECK(merged == sorted_all);
  }

  SUBCASE("every user keeps a train edge and sheds floor(frac * degree)") {
    std::set<int> train_users;
    for (const auto& [u, i] : train1) train_users.insert(u);
    std::vector<int> test_count(20, 0);
    for (const auto& [u, i] : test1) ++test_count[u];
    for (int u = 0; u < 20; ++u) {
      CHECK(train_users.count(u) == 1);
      const int deg = 3 + u % 5;
      CHECK(test_count[u] == static_cast<int>(0.2 * deg + 1e-9));
    }
  }

  SUBCASE("fraction bounds enforced") {
    dccf::EdgeList a, b;
    CHECK_THROWS_AS(dccf::per_user_holdout(all, 1.0, 7, a, b), std::runtime_error);
    CHECK_THROWS_AS(dccf::per_user_holdout(all, -0.1, 7, a, b), std::runtime_error);
  }
}

TEST_CASE("two-block synthetic graph") {
  const dccf::TwoBlockConfig cfg;  // 200 x 200
  const dccf::EdgeList a = dccf::synthetic_two_block(cfg, 11);
  const dccf::EdgeList b = dccf::synthetic_two_block(cfg, 11);
  CHECK(a == b);

  std::vector<int> deg(cfg.users, 0);
  long in_block = 0, cross = 0;
  for (const auto& [u, i] : a) {
    ++deg[u];
    const bool same = (u < cfg.users / 2) == (i < cfg.items / 2);
    (same ? in_block : cross) += 1;
  }
  for (int u = 0; u < cfg.users; ++u) CHECK(deg[u] >= 1);
  // ~15 in-block vs ~1 cross-block edges expected per user
  CHECK(in_block > 5 * cross);
  CHECK(dccf::synthetic_two_block(cfg, 12) != a);
}
