#include <doctest.h>

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "dccf/matrix.hpp"
#include "dccf/spgraph.hpp"
#include "support/reference.hpp"

namespace {

// Dense view of a CSR matrix for oracle comparison.
template <class S>
refimpl::Mat densify(const dccf::SparseMatrixCSR<S>& m) {
  refimpl::Mat out = refimpl::zeros(m.num_rows, m.num_cols);
  for (int r = 0; r < m.num_rows; ++r) {
    for (int e = m.row_ptr[r]; e < m.row_ptr[r + 1]; ++e) {
      out[r][m.col_idx[e]] = static_cast<double>(m.values[e]);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("pattern construction and validation") {
  const dccf::EdgeList edges = {{0, 0}, {0, 2}, {2, 1}};
  const dccf::CsrPattern p = dccf::build_pattern(edges, 3, 3);
  CHECK(p.row_ptr == std::vector<int>{0, 2, 2, 3});
  CHECK(p.col_idx == std::vector<int>{0, 2, 1});
  CHECK(p.nnz() == 3);

  CHECK_THROWS_WITH_AS(dccf::build_pattern({{1, 0}, {0, 0}}, 2, 2), doctest::Contains("sorted"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(dccf::build_pattern({{0, 0}, {0, 0}}, 2, 2),
                       doctest::Contains("duplicate"), std::runtime_error);
  CHECK_THROWS_WITH_AS(dccf::build_pattern({{0, 5}}, 2, 2), doctest::Contains("out of range"),
                       std::runtime_error);
}

TEST_CASE("pattern transpose tracks edge correspondence") {
  const auto edges = refimpl::gen_bipartite(7, 5, 18, 99);
  dccf::EdgeList el(edges.begin(), edges.end());
  const dccf::CsrPattern p = dccf::build_pattern(el, 7, 5);
  std::vector<int> src;
  const dccf::CsrPattern t = dccf::transpose_pattern(p, &src);
  CHECK(t.num_rows == 5);
  CHECK(t.num_cols == 7);
  REQUIRE(t.nnz() == p.nnz());

  // Enumerate both edge orders and confirm src maps transposed slot -> the
  // identical (user, item) edge in the original order.
  std::vector<std::pair<int, int>> orig(p.nnz()), trans(t.nnz());
  for (int r = 0; r < p.num_rows; ++r) {
    for (int e = p.row_ptr[r]; e < p.row_ptr[r + 1]; ++e) orig[e] = {r, p.col_idx[e]};
  }
  for (int r = 0; r < t.num_rows; ++r) {
    for (int e = t.row_ptr[r]; e < t.row_ptr[r + 1]; ++e) trans[e] = {t.col_idx[e], r};
  }
  for (int k = 0; k < t.nnz(); ++k) CHECK(orig[src[k]] == trans[k]);
}

TEST_CASE("symmetric normalization matches hand values") {
  const dccf::EdgeList edges = {{0, 0}, {0, 1}, {1, 1}};
  const auto adj = dccf::sym_normalize<double>(edges, 2, 2);
  const refimpl::Mat a = densify(adj.a_bar);
  CHECK(a[0][0] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(a[0][1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a[1][0] == 0.0);
  CHECK(a[1][1] == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));

  const refimpl::Mat at = densify(adj.a_bar_t);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) CHECK(at[i][j] == a[j][i]);
  }
}

TEST_CASE("sparse multiply matches dense multiply") {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const int I = 6 + trial, J = 9, d = 3;
    const auto edges = refimpl::gen_bipartite(I, J, 2 * I, 1000 + trial);
    dccf::EdgeList el(edges.begin(), edges.end());
    const auto adj = dccf::sym_normalize<double>(el, I, J);

    dccf::Matrix<double> x(J, d);
    for (auto& v : x.data) v = unif(gen);
    const dccf::Matrix<double> y = dccf::spmm(adj.a_bar, x);

    const refimpl::Mat expect = refimpl::matmul(densify(adj.a_bar), refimpl::from_matrix(x));
    for (int r = 0; r < I; ++r) {
      for (int c = 0; c < d; ++c) {
        CHECK(y.at(r, c) == doctest::Approx(expect[r][c]).epsilon(1e-12));
      }
    }
  }
  dccf::Matrix<double> bad(3, 2);
  CHECK_THROWS_WITH_AS(dccf::spmm(dccf::sym_normalize<double>({{0, 0}}, 2, 2).a_bar, bad),
                       doctest::Contains("shape"), std::runtime_error);
}

TEST_CASE("mask row normalization") {
  // Two users, three items; user 0 holds two edges.
  const dccf::EdgeList edges = {{0, 0}, {0, 2}, {1, 1}};
  const std::vector<double> mask = {0.25, 0.75, 0.5};

  SUBCASE("user side rows sum to one") {
    const auto m = dccf::masked_row_normalize<double>(edges, std::span<const double>(mask), 2, 3,
                                                      dccf::MaskSide::kUser);
    const refimpl::Mat w = densify(m);
    CHECK(w[0][0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(w[0][2] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(w[1][1] == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("item side normalizes over item rows") {
    const auto m = dccf::masked_row_normalize<double>(edges, std::span<const double>(mask), 2, 3,
                                                      dccf::MaskSide::kItem);
    CHECK(m.num_rows == 3);
    const refimpl::Mat w = densify(m);
    CHECK(w[0][0] == doctest::Approx(1.0).epsilon(1e-12));  // item 0 <- user 0
    CHECK(w[1][1] == doctest::Approx(1.0).epsilon(1e-12));  // item 1 <- user 1
    CHECK(w[2][0] == doctest::Approx(1.0).epsilon(1e-12));  // item 2 <- user 0
  }

  SUBCASE("all-zero masks stay zero through the guarded denominator") {
    const std::vector<double> zeroes = {0.0, 0.0, 0.0};
    const auto m = dccf::masked_row_normalize<double>(edges, std::span<const double>(zeroes), 2, 3,
                                                      dccf::MaskSide::kUser);
    for (double v : m.values) CHECK(v == 0.0);
  }

  SUBCASE("input validation") {
    const std::vector<double> out_of_range = {0.25, 1.5, 0.5};
    CHECK_THROWS_WITH_AS(dccf::masked_row_normalize<double>(
                             edges, std::span<const double>(out_of_range), 2, 3,
                             dccf::MaskSide::kUser),
                         doctest::Contains("outside [0, 1]"), std::runtime_error);
    const std::vector<double> short_mask = {0.25};
    CHECK_THROWS_WITH_AS(dccf::masked_row_normalize<double>(
                             edges, std::span<const double>(short_mask), 2, 3,
                             dccf::MaskSide::kUser),
                         doctest::Contains("one mask value per edge"), std::runtime_error);
  }
}

TEST_CASE("random row sums stay within 1e-5 of one") {
  std::mt19937_64 gen(12);
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  const auto edges = refimpl::gen_bipartite(20, 15, 80, 5);
  dccf::EdgeList el(edges.begin(), edges.end());
  std::vector<float> mask(el.size());
  for (auto& v : mask) v = static_cast<float>(unif(gen));

  for (auto side : {dccf::MaskSide::kUser, dccf::MaskSide::kItem}) {
    const auto m = dccf::masked_row_normalize<float>(el, std::span<const float>(mask), 20, 15, side);
    for (int r = 0; r < m.num_rows; ++r) {
      if (m.row_ptr[r] == m.row_ptr[r + 1]) continue;
      double sum = 0;
      for (int e = m.row_ptr[r]; e < m.row_ptr[r + 1]; ++e) sum += m.values[e];
      CHECK(std::abs(sum - 1.0) < 1e-5);
    }
  }
}
