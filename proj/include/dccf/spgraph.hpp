#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dccf/interactions.hpp"
#include "dccf/matrix.hpp"

namespace dccf {

// Denominator guard for row normalization of non-negative edge weights:
// rows whose raw sum falls below this use (sum + kRowNormEps) instead.
inline constexpr double kRowNormEps = 1e-8;

// Structure-only CSR: row extents plus column indices, ascending per row.
struct CsrPattern {
  int num_rows = 0;
  int num_cols = 0;
  std::vector<int> row_ptr;  // size num_rows + 1
  std::vector<int> col_idx;  // size nnz
  int nnz() const { return static_cast<int>(col_idx.size()); }
};

template <class S>
struct SparseMatrixCSR {
  int num_rows = 0;
  int num_cols = 0;
  std::vector<int> row_ptr;
  std::vector<int> col_idx;
  std::vector<S> values;
  int nnz() const { return static_cast<int>(col_idx.size()); }
};

enum class MaskSide { kUser, kItem };

// Symmetrically normalized bipartite adjacency and its exact transpose.
template <class S>
struct NormalizedAdjacency {
  SparseMatrixCSR<S> a_bar;    // users x items, value 1/sqrt(deg_u * deg_i)
  SparseMatrixCSR<S> a_bar_t;  // items x users
};

inline void validate_edges(const EdgeList& edges, int num_rows, int num_cols,
                           const char* who) {
  for (std::size_t e = 1; e < edges.size(); ++e) {
    if (edges[e] == edges[e - 1]) {
      throw std::runtime_error(std::string(who) + ": duplicate edge");
    }
  }
  for (const auto& [r, c] : edges) {
    if (r < 0 || r >= num_rows || c < 0 || c >= num_cols) {
      throw std::runtime_error(std::string(who) + ": edge index out of range");
    }
  }
}

// Edges must be sorted by (row, col) — the canonical dataset order.
inline CsrPattern build_pattern(const EdgeList& edges, int num_rows, int num_cols) {
  if (!std::is_sorted(edges.begin(), edges.end())) {
    throw std::runtime_error("build_pattern: edges must be sorted by (row, col)");
  }
  validate_edges(edges, num_rows, num_cols, "build_pattern");
  CsrPattern p;
  p.num_rows = num_rows;
  p.num_cols = num_cols;
  p.row_ptr.assign(num_rows + 1, 0);
  p.col_idx.resize(edges.size());
  for (const auto& [r, c] : edges) ++p.row_ptr[r + 1];
  for (int r = 0; r < num_rows; ++r) p.row_ptr[r + 1] += p.row_ptr[r];
  for (std::size_t e = 0; e < edges.size(); ++e) p.col_idx[e] = edges[e].second;
  return p;
}

// Transpose of the structure. If src_of_transposed is given it receives, for
// every position k in the transposed edge order, the position of the same
// edge in the original order.
inline CsrPattern transpose_pattern(const CsrPattern& p, std::vector<int>* src_of_transposed = nullptr) {
  CsrPattern t;
  t.num_rows = p.num_cols;
  t.num_cols = p.num_rows;
  t.row_ptr.assign(t.num_rows + 1, 0);
  for (int c : p.col_idx) ++t.row_ptr[c + 1];
  for (int r = 0; r < t.num_rows; ++r) t.row_ptr[r + 1] += t.row_ptr[r];
  t.col_idx.resize(p.col_idx.size());
  if (src_of_transposed) src_of_transposed->resize(p.col_idx.size());
  std::vector<int> cursor(t.row_ptr.begin(), t.row_ptr.end() - 1);
  for (int r = 0; r < p.num_rows; ++r) {
    for (int e = p.row_ptr[r]; e < p.row_ptr[r + 1]; ++e) {
      int pos = cursor[p.col_idx[e]]++;
      t.col_idx[pos] = r;
      if (src_of_transposed) (*src_of_transposed)[pos] = e;
    }
  }
  return t;
}

template <class S>
SparseMatrixCSR<S> transpose(const SparseMatrixCSR<S>& m) {
  CsrPattern p{m.num_rows, m.num_cols, m.row_ptr, m.col_idx};
  std::vector<int> src;
  CsrPattern t = transpose_pattern(p, &src);
  SparseMatrixCSR<S> out;
  out.num_rows = t.num_rows;
  out.num_cols = t.num_cols;
  out.row_ptr = std::move(t.row_ptr);
  out.col_idx = std::move(t.col_idx);
  out.values.resize(m.values.size());
  for (std::size_t k = 0; k < src.size(); ++k) out.values[k] = m.values[src[k]];
  return out;
}

// A_bar = D_u^{-1/2} A D_i^{-1/2} over the binary interaction matrix.
template <class S>
NormalizedAdjacency<S> sym_normalize(const EdgeList& edges, int num_users, int num_items) {
  EdgeList sorted = edges;
  std::sort(sorted.begin(), sorted.end());
  validate_edges(sorted, num_users, num_items, "sym_normalize");

  std::vector<long> du(num_users, 0), di(num_items, 0);
  for (const auto& [u, i] : sorted) {
    ++du[u];
    ++di[i];
  }
  NormalizedAdjacency<S> out;
  SparseMatrixCSR<S>& a = out.a_bar;
  a.num_rows = num_users;
  a.num_cols = num_items;
  a.row_ptr.assign(num_users + 1, 0);
  a.col_idx.resize(sorted.size());
  a.values.resize(sorted.size());
  for (const auto& [u, i] : sorted) ++a.row_ptr[u + 1];
  for (int u = 0; u < num_users; ++u) a.row_ptr[u + 1] += a.row_ptr[u];
  for (std::size_t e = 0; e < sorted.size(); ++e) {
    const auto& [u, i] = sorted[e];
    a.col_idx[e] = i;
    a.values[e] = static_cast<S>(1.0 / std::sqrt(static_cast<double>(du[u]) * static_cast<double>(di[i])));
  }
  out.a_bar_t = transpose(a);
  return out;
}

// y = m * x; y is (num_rows x d), overwritten. Accumulation order within a
// row is ascending col_idx, so results are reproducible.
template <class S>
void spmm(const SparseMatrixCSR<S>& m, const S* x, int d, S* y) {
  std::fill(y, y + static_cast<std::size_t>(m.num_rows) * d, S(0));
  for (int r = 0; r < m.num_rows; ++r) {
    S* yr = y + static_cast<std::size_t>(r) * d;
    for (int e = m.row_ptr[r]; e < m.row_ptr[r + 1]; ++e) {
      const S v = m.values[e];
      const S* xc = x + static_cast<std::size_t>(m.col_idx[e]) * d;
      for (int j = 0; j < d; ++j) yr[j] += v * xc[j];
    }
  }
}

template <class S>
Matrix<S> spmm(const SparseMatrixCSR<S>& m, const Matrix<S>& x) {
  if (x.rows != m.num_cols) throw std::runtime_error("spmm: shape mismatch");
  Matrix<S> y(m.num_rows, x.cols);
  spmm(m, x.data.data(), x.cols, y.data.data());
  return y;
}

// Row-normalizes an edge-mask weighting of the base adjacency. `edges` are
// (user, item) pairs with one mask value each, in the same order;
// side == kUser yields the users x items matrix, kItem the transposed one,
// each normalized over its own rows.
template <class S>
SparseMatrixCSR<S> masked_row_normalize(const EdgeList& edges, std::span<const S> mask_values,
                                        int num_users, int num_items, MaskSide side) {
  if (mask_values.size() != edges.size()) {
    throw std::runtime_error("masked_row_normalize: one mask value per edge required");
  }
  for (S v : mask_values) {
    double d = static_cast<double>(v);
    if (!(d >= -1e-6 && d <= 1.0 + 1e-6)) {
      throw std::runtime_error("masked_row_normalize: mask value outside [0, 1]");
    }
  }
  const bool user_side = side == MaskSide::kUser;
  const int num_rows = user_side ? num_users : num_items;
  const int num_cols = user_side ? num_items : num_users;

  std::vector<int> order(edges.size());
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](int e) {
    const auto& [u, i] = edges[e];
    return user_side ? std::pair<int, int>(u, i) : std::pair<int, int>(i, u);
  };
  std::sort(order.begin(), order.end(), [&](int a, int b) { return key(a) < key(b); });

  SparseMatrixCSR<S> m;
  m.num_rows = num_rows;
  m.num_cols = num_cols;
  m.row_ptr.assign(num_rows + 1, 0);
  m.col_idx.resize(edges.size());
  m.values.resize(edges.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto [r, c] = key(order[k]);
    if (r < 0 || r >= num_rows || c < 0 || c >= num_cols) {
      throw std::runtime_error("masked_row_normalize: edge index out of range");
    }
    ++m.row_ptr[r + 1];
    m.col_idx[k] = c;
  }
  for (int r = 0; r < num_rows; ++r) m.row_ptr[r + 1] += m.row_ptr[r];

  for (int r = 0; r < num_rows; ++r) {
    double sum = 0.0;
    for (int e = m.row_ptr[r]; e < m.row_ptr[r + 1]; ++e) {
      sum += static_cast<double>(mask_values[order[e]]);
    }
    const double denom = sum < kRowNormEps ? sum + kRowNormEps : sum;
    for (int e = m.row_ptr[r]; e < m.row_ptr[r + 1]; ++e) {
      m.values[e] = static_cast<S>(static_cast<double>(mask_values[order[e]]) / denom);
    }
  }
  return m;
}

}  // namespace dccf
