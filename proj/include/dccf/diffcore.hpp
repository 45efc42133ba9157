#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dccf/interactions.hpp"
#include "dccf/matrix.hpp"
#include "dccf/rng.hpp"
#include "dccf/spgraph.hpp"

namespace dccf {

using NodeId = int;
inline constexpr NodeId kNoNode = -1;

// Guard added to norm products/row norms before division in cosine kernels.
inline constexpr double kCosineEps = 1e-12;

// Reverse-mode tape over the fixed op set the model needs. Every node is a
// dense row-major tensor (scalars are 1x1). Ops record a backward closure;
// backward() replays them in exact reverse order, accumulating into
// preallocated gradient buffers, so gradients are reproducible.
//
// Lifetime contract: pointer arguments (CSR patterns/matrices, edge lists,
// permutations) are borrowed and must outlive the tape. Node references are
// never held across node creation (the node vector may reallocate).
template <class S>
class Tape {
 public:
  struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<S> val;
    std::vector<S> grad;  // allocated iff needs_grad
    bool needs_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Scan every op output for non-finite values (verification runs).
  bool check_finite = false;

  // Test hook: skews the matmul backward rule so gradient checking can be
  // shown to catch a broken derivative. Never set outside negative tests.
  bool corrupt_matmul_backward_for_tests = false;

  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  int rows(NodeId id) const { return nodes_.at(id).rows; }
  int cols(NodeId id) const { return nodes_.at(id).cols; }
  bool needs_grad(NodeId id) const { return nodes_.at(id).needs_grad; }

  std::span<const S> value(NodeId id) const { return nodes_.at(id).val; }
  std::span<const S> gradient(NodeId id) const {
    const Node& n = nodes_.at(id);
    if (!n.needs_grad) throw std::runtime_error("tape: node has no gradient buffer");
    return n.grad;
  }

  Matrix<S> value_matrix(NodeId id) const {
    const Node& n = nodes_.at(id);
    Matrix<S> m(n.rows, n.cols);
    m.data = n.val;
    return m;
  }

  // --- leaves --------------------------------------------------------------

  NodeId leaf(int nrows, int ncols, std::span<const S> vals, bool needs_grad) {
    if (vals.size() != static_cast<std::size_t>(nrows) * ncols) {
      throw std::runtime_error("tape: leaf size mismatch");
    }
    NodeId id = make_node(nrows, ncols, needs_grad);
    std::copy(vals.begin(), vals.end(), nodes_[id].val.begin());
    return id;
  }

  NodeId leaf(const Matrix<S>& m, bool needs_grad) {
    return leaf(m.rows, m.cols, std::span<const S>(m.data), needs_grad);
  }

  NodeId constant(int nrows, int ncols, std::span<const S> vals) {
    return leaf(nrows, ncols, vals, false);
  }

  NodeId zeros(int nrows, int ncols) { return make_node(nrows, ncols, false); }

  // --- dense products --------------------------------------------------------

  // y = a * b
  NodeId matmul(NodeId a, NodeId b) {
    const int n = rows(a), k = cols(a), m = cols(b);
    if (k != rows(b)) throw std::runtime_error("tape: matmul shape mismatch");
    NodeId y = make_node(n, m, needs_grad(a) || needs_grad(b));
    dense_mm(val(a), val(b), mut_val(y), n, k, m);
    finish(y, "matmul");
    if (needs_grad(y)) {
      record([this, a, b, y, n, k, m] {
        const S* g = grad_of(y);
        const S corrupt = corrupt_matmul_backward_for_tests ? S(1.01) : S(1);
        if (needs_grad(a)) {
          // gA += G * B^T
          S* ga = mut_grad(a);
          const S* bv = val(b);
          for (int i = 0; i < n; ++i) {
            for (int kk = 0; kk < k; ++kk) {
              S acc = 0;
              for (int j = 0; j < m; ++j) {
                acc += g[idx(i, j, m)] * bv[idx(kk, j, m)];
              }
              ga[idx(i, kk, k)] += corrupt * acc;
            }
          }
        }
        if (needs_grad(b)) {
          // gB += A^T * G
          S* gb = mut_grad(b);
          const S* av = val(a);
          for (int i = 0; i < n; ++i) {
            for (int kk = 0; kk < k; ++kk) {
              const S aik = av[idx(i, kk, k)];
              if (aik == S(0)) continue;
              const S* gi = g + idx(i, 0, m);
              S* gbr = gb + idx(kk, 0, m);
              for (int j = 0; j < m; ++j) gbr[j] += aik * gi[j];
            }
          }
        }
      });
    }
    return y;
  }

  // y = a * b^T  (a: n x k, b: m x k -> n x m)
  NodeId matmul_nt(NodeId a, NodeId b) {
    const int n = rows(a), k = cols(a), m = rows(b);
    if (k != cols(b)) throw std::runtime_error("tape: matmul_nt shape mismatch");
    NodeId y = make_node(n, m, needs_grad(a) || needs_grad(b));
    {
      const S* av = val(a);
      const S* bv = val(b);
      S* yv = mut_val(y);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
          S acc = 0;
          for (int kk = 0; kk < k; ++kk) acc += av[idx(i, kk, k)] * bv[idx(j, kk, k)];
          yv[idx(i, j, m)] = acc;
        }
      }
    }
    finish(y, "matmul_nt");
    if (needs_grad(y)) {
      record([this, a, b, y, n, k, m] {
        const S* g = grad_of(y);
        if (needs_grad(a)) dense_mm_acc(g, val(b), mut_grad(a), n, m, k);  // gA += G * B
        if (needs_grad(b)) {
          // gB += G^T * A
          const S* av = val(a);
          S* gb = mut_grad(b);
          for (int i = 0; i < n; ++i) {
            const S* ai = av + idx(i, 0, k);
            for (int j = 0; j < m; ++j) {
              const S gij = g[idx(i, j, m)];
              if (gij == S(0)) continue;
              S* gbj = gb + idx(j, 0, k);
              for (int kk = 0; kk < k; ++kk) gbj[kk] += gij * ai[kk];
            }
          }
        }
      });
    }
    return y;
  }

  // y = m * x with constant sparse values; mt must be the exact transpose.
  NodeId spmm(const SparseMatrixCSR<S>* m, const SparseMatrixCSR<S>* mt, NodeId x) {
    if (rows(x) != m->num_cols || mt->num_rows != m->num_cols || mt->num_cols != m->num_rows) {
      throw std::runtime_error("tape: spmm shape mismatch");
    }
    const int d = cols(x);
    NodeId y = make_node(m->num_rows, d, needs_grad(x));
    dccf::spmm(*m, val(x), d, mut_val(y));
    finish(y, "spmm");
    if (needs_grad(y)) {
      record([this, mt, x, y, d] {
        // gX += M^T * G
        const S* g = grad_of(y);
        S* gx = mut_grad(x);
        for (int r = 0; r < mt->num_rows; ++r) {
          S* gxr = gx + idx(r, 0, d);
          for (int e = mt->row_ptr[r]; e < mt->row_ptr[r + 1]; ++e) {
            const S v = mt->values[e];
            const S* gc = g + idx(mt->col_idx[e], 0, d);
            for (int j = 0; j < d; ++j) gxr[j] += v * gc[j];
          }
        }
      });
    }
    return y;
  }

  // y = P(ev) * x where P is the fixed pattern `p` carrying differentiable
  // edge values ev (nnz x 1, aligned with p's edge order). p_t is p's
  // transposed pattern; ev_index_of_pt maps every p_t edge position to the
  // matching index into ev.
  NodeId spmm_edges(const CsrPattern* p, const CsrPattern* p_t,
                    const std::vector<int>* ev_index_of_pt, NodeId ev, NodeId x) {
    if (cols(ev) != 1 || rows(ev) != p->nnz()) {
      throw std::runtime_error("tape: spmm_edges edge values must be nnz x 1");
    }
    if (rows(x) != p->num_cols) throw std::runtime_error("tape: spmm_edges shape mismatch");
    const int d = cols(x);
    NodeId y = make_node(p->num_rows, d, needs_grad(ev) || needs_grad(x));
    {
      const S* evv = val(ev);
      const S* xv = val(x);
      S* yv = mut_val(y);
      for (int r = 0; r < p->num_rows; ++r) {
        S* yr = yv + idx(r, 0, d);
        for (int e = p->row_ptr[r]; e < p->row_ptr[r + 1]; ++e) {
          const S v = evv[e];
          const S* xc = xv + idx(p->col_idx[e], 0, d);
          for (int j = 0; j < d; ++j) yr[j] += v * xc[j];
        }
      }
    }
    finish(y, "spmm_edges");
    if (needs_grad(y)) {
      record([this, p, p_t, ev_index_of_pt, ev, x, y, d] {
        const S* g = grad_of(y);
        if (needs_grad(ev)) {
          // d/d ev[e at (r,c)] = dot(g[r,:], x[c,:])
          S* gev = mut_grad(ev);
          const S* xv = val(x);
          for (int r = 0; r < p->num_rows; ++r) {
            const S* gr = g + idx(r, 0, d);
            for (int e = p->row_ptr[r]; e < p->row_ptr[r + 1]; ++e) {
              const S* xc = xv + idx(p->col_idx[e], 0, d);
              S acc = 0;
              for (int j = 0; j < d; ++j) acc += gr[j] * xc[j];
              gev[e] += acc;
            }
          }
        }
        if (needs_grad(x)) {
          // gX += P(ev)^T * G, iterated over the transposed pattern so each
          // input row accumulates once, in ascending edge order.
          S* gx = mut_grad(x);
          const S* evv = val(ev);
          for (int c = 0; c < p_t->num_rows; ++c) {
            S* gxc = gx + idx(c, 0, d);
            for (int k = p_t->row_ptr[c]; k < p_t->row_ptr[c + 1]; ++k) {
              const S v = evv[(*ev_index_of_pt)[k]];
              const S* gr = g + idx(p_t->col_idx[k], 0, d);
              for (int j = 0; j < d; ++j) gxc[j] += v * gr[j];
            }
          }
        }
      });
    }
    return y;
  }

  // Row-normalizes non-negative edge values within each pattern row:
  // out[e] = ev[e] / denom(row), denom = sum, or sum + eps for near-zero rows.
  NodeId sparse_row_normalize(const CsrPattern* p, NodeId ev) {
    if (cols(ev) != 1 || rows(ev) != p->nnz()) {
      throw std::runtime_error("tape: sparse_row_normalize edge values must be nnz x 1");
    }
    NodeId y = make_node(p->nnz(), 1, needs_grad(ev));
    std::vector<double> denoms(p->num_rows);
    {
      const S* evv = val(ev);
      S* yv = mut_val(y);
      for (int r = 0; r < p->num_rows; ++r) {
        double sum = 0.0;
        for (int e = p->row_ptr[r]; e < p->row_ptr[r + 1]; ++e) sum += static_cast<double>(evv[e]);
        const double denom = sum < kRowNormEps ? sum + kRowNormEps : sum;
        denoms[r] = denom;
        for (int e = p->row_ptr[r]; e < p->row_ptr[r + 1]; ++e) {
          yv[e] = static_cast<S>(static_cast<double>(evv[e]) / denom);
        }
      }
    }
    finish(y, "sparse_row_normalize");
    if (needs_grad(y)) {
      record([this, p, ev, y, denoms = std::move(denoms)] {
        const S* g = grad_of(y);
        const S* evv = val(ev);
        S* gev = mut_grad(ev);
        // out[e] = v[e]/D with dD/dv[f] = 1 for f in the same row, so
        // d/dv[f] = g[f]/D - (sum_e g[e] v[e]) / D^2.
        for (int r = 0; r < p->num_rows; ++r) {
          const double denom = denoms[r];
          double t = 0.0;
          for (int e = p->row_ptr[r]; e < p->row_ptr[r + 1]; ++e) {
            t += static_cast<double>(g[e]) * static_cast<double>(evv[e]);
          }
          const double t_over_d2 = t / (denom * denom);
          for (int e = p->row_ptr[r]; e < p->row_ptr[r + 1]; ++e) {
            gev[e] += static_cast<S>(static_cast<double>(g[e]) / denom - t_over_d2);
          }
        }
      });
    }
    return y;
  }

  // --- model-specific ops ----------------------------------------------------

  // P = row_softmax(e * c^T): e is n x d, c is K x d, P is n x K. Logits are
  // stabilized by row-max subtraction before exponentiation.
  NodeId row_softmax_scores(NodeId e, NodeId c) {
    const int n = rows(e), d = cols(e), K = rows(c);
    if (d != cols(c)) throw std::runtime_error("tape: row_softmax_scores dim mismatch");
    if (K < 1) throw std::runtime_error("tape: row_softmax_scores needs at least one prototype");
    NodeId y = make_node(n, K, needs_grad(e) || needs_grad(c));
    {
      const S* ev = val(e);
      const S* cv = val(c);
      S* pv = mut_val(y);
      std::vector<double> logits(K);
      for (int i = 0; i < n; ++i) {
        const S* ei = ev + idx(i, 0, d);
        double mx = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < K; ++k) {
          double acc = 0;
          const S* ck = cv + idx(k, 0, d);
          for (int j = 0; j < d; ++j) acc += static_cast<double>(ei[j]) * static_cast<double>(ck[j]);
          logits[k] = acc;
          mx = std::max(mx, acc);
        }
        double z = 0;
        for (int k = 0; k < K; ++k) {
          logits[k] = std::exp(logits[k] - mx);
          z += logits[k];
        }
        S* pi = pv + idx(i, 0, K);
        for (int k = 0; k < K; ++k) pi[k] = static_cast<S>(logits[k] / z);
      }
    }
    finish(y, "row_softmax_scores");
    if (needs_grad(y)) {
      record([this, e, c, y, n, d, K] {
        const S* g = grad_of(y);
        const S* pv = val(y);
        // dLogits = P .* (G - rowsum(G .* P))
        std::vector<S> dl(static_cast<std::size_t>(n) * K);
        for (int i = 0; i < n; ++i) {
          const S* gi = g + idx(i, 0, K);
          const S* pi = pv + idx(i, 0, K);
          S dot = 0;
          for (int k = 0; k < K; ++k) dot += gi[k] * pi[k];
          S* dli = dl.data() + idx(i, 0, K);
          for (int k = 0; k < K; ++k) dli[k] = pi[k] * (gi[k] - dot);
        }
        if (needs_grad(e)) dense_mm_acc(dl.data(), val(c), mut_grad(e), n, K, d);
        if (needs_grad(c)) {
          // gC += dL^T * E
          S* gc = mut_grad(c);
          const S* ev = val(e);
          for (int i = 0; i < n; ++i) {
            const S* dli = dl.data() + idx(i, 0, K);
            const S* ei = ev + idx(i, 0, d);
            for (int k = 0; k < K; ++k) {
              const S w = dli[k];
              if (w == S(0)) continue;
              S* gck = gc + idx(k, 0, d);
              for (int j = 0; j < d; ++j) gck[j] += w * ei[j];
            }
          }
        }
      });
    }
    return y;
  }

  // Per-pair cosine similarity: out[e] = dot(a_i, b_j) / (|a_i||b_j| + eps)
  // for each (i, j) in pairs. Result is nnz x 1.
  NodeId cosine_pairs(NodeId a, NodeId b, const EdgeList* pairs) {
    const int d = cols(a);
    if (d != cols(b)) throw std::runtime_error("tape: cosine_pairs dim mismatch");
    const int n = static_cast<int>(pairs->size());
    const int arows = rows(a), brows = rows(b);
    for (const auto& [i, j] : *pairs) {
      if (i < 0 || i >= arows || j < 0 || j >= brows) {
        throw std::runtime_error("tape: cosine_pairs index out of range");
      }
    }
    NodeId y = make_node(n, 1, needs_grad(a) || needs_grad(b));
    std::vector<double> na(n), nb(n), dots(n);
    {
      const S* av = val(a);
      const S* bv = val(b);
      S* yv = mut_val(y);
      for (int e = 0; e < n; ++e) {
        const auto& [i, j] = (*pairs)[e];
        const S* ai = av + idx(i, 0, d);
        const S* bj = bv + idx(j, 0, d);
        double dot = 0, qa = 0, qb = 0;
        for (int k = 0; k < d; ++k) {
          dot += static_cast<double>(ai[k]) * static_cast<double>(bj[k]);
          qa += static_cast<double>(ai[k]) * static_cast<double>(ai[k]);
          qb += static_cast<double>(bj[k]) * static_cast<double>(bj[k]);
        }
        na[e] = std::sqrt(qa);
        nb[e] = std::sqrt(qb);
        dots[e] = dot;
        yv[e] = static_cast<S>(dot / (na[e] * nb[e] + kCosineEps));
      }
    }
    finish(y, "cosine_pairs");
    if (needs_grad(y)) {
      record([this, a, b, y, d, pairs, na = std::move(na), nb = std::move(nb),
              dots = std::move(dots)] {
        const S* g = grad_of(y);
        const S* av = val(a);
        const S* bv = val(b);
        for (std::size_t e = 0; e < pairs->size(); ++e) {
          const double ge = static_cast<double>(g[e]);
          if (ge == 0) continue;
          const auto& [i, j] = (*pairs)[e];
          const S* ai = av + idx(i, 0, d);
          const S* bj = bv + idx(j, 0, d);
          const double denom = na[e] * nb[e] + kCosineEps;
          // ds/da = b/denom - dot*nb*(a/na)/denom^2; the second term carries
          // a factor dot which is zero whenever the row is zero.
          if (needs_grad(a)) {
            S* ga = mut_grad(a) + idx(i, 0, d);
            const double c2 = na[e] > 0 ? dots[e] * nb[e] / (na[e] * denom * denom) : 0.0;
            for (int k = 0; k < d; ++k) {
              ga[k] += static_cast<S>(ge * (static_cast<double>(bj[k]) / denom - c2 * static_cast<double>(ai[k])));
            }
          }
          if (needs_grad(b)) {
            S* gb = mut_grad(b) + idx(j, 0, d);
            const double c2 = nb[e] > 0 ? dots[e] * na[e] / (nb[e] * denom * denom) : 0.0;
            for (int k = 0; k < d; ++k) {
              gb[k] += static_cast<S>(ge * (static_cast<double>(ai[k]) / denom - c2 * static_cast<double>(bj[k])));
            }
          }
        }
      });
    }
    return y;
  }

  // Per-pair inner product: out[e] = dot(a_i, b_j). Result is nnz x 1.
  NodeId pair_dot(NodeId a, NodeId b, const EdgeList* pairs) {
    const int d = cols(a);
    if (d != cols(b)) throw std::runtime_error("tape: pair_dot dim mismatch");
    const int arows = rows(a), brows = rows(b);
    for (const auto& [i, j] : *pairs) {
      if (i < 0 || i >= arows || j < 0 || j >= brows) {
        throw std::runtime_error("tape: pair_dot index out of range");
      }
    }
    const int n = static_cast<int>(pairs->size());
    NodeId y = make_node(n, 1, needs_grad(a) || needs_grad(b));
    {
      const S* av = val(a);
      const S* bv = val(b);
      S* yv = mut_val(y);
      for (int e = 0; e < n; ++e) {
        const auto& [i, j] = (*pairs)[e];
        const S* ai = av + idx(i, 0, d);
        const S* bj = bv + idx(j, 0, d);
        S acc = 0;
        for (int k = 0; k < d; ++k) acc += ai[k] * bj[k];
        yv[e] = acc;
      }
    }
    finish(y, "pair_dot");
    if (needs_grad(y)) {
      record([this, a, b, y, d, pairs] {
        const S* g = grad_of(y);
        const S* av = val(a);
        const S* bv = val(b);
        for (std::size_t e = 0; e < pairs->size(); ++e) {
          const S ge = g[e];
          if (ge == S(0)) continue;
          const auto& [i, j] = (*pairs)[e];
          if (needs_grad(a)) {
            S* ga = mut_grad(a) + idx(i, 0, d);
            const S* bj = bv + idx(j, 0, d);
            for (int k = 0; k < d; ++k) ga[k] += ge * bj[k];
          }
          if (needs_grad(b)) {
            S* gb = mut_grad(b) + idx(j, 0, d);
            const S* ai = av + idx(i, 0, d);
            for (int k = 0; k < d; ++k) gb[k] += ge * ai[k];
          }
        }
      });
    }
    return y;
  }

  // --- reshaping --------------------------------------------------------------

  NodeId gather_rows(NodeId x, std::vector<int> indices) {
    const int xr = rows(x), d = cols(x);
    for (int i : indices) {
      if (i < 0 || i >= xr) throw std::runtime_error("tape: gather_rows index out of range");
    }
    NodeId y = make_node(static_cast<int>(indices.size()), d, needs_grad(x));
    {
      const S* xv = val(x);
      S* yv = mut_val(y);
      for (std::size_t i = 0; i < indices.size(); ++i) {
        std::copy_n(xv + idx(indices[i], 0, d), d, yv + i * d);
      }
    }
    finish(y, "gather_rows");
    if (needs_grad(y)) {
      record([this, x, y, d, indices = std::move(indices)] {
        const S* g = grad_of(y);
        S* gx = mut_grad(x);
        for (std::size_t i = 0; i < indices.size(); ++i) {
          S* gr = gx + idx(indices[i], 0, d);
          const S* gi = g + i * d;
          for (int k = 0; k < d; ++k) gr[k] += gi[k];
        }
      });
    }
    return y;
  }

  // out[k] = v[(*perm)[k]] over an n x 1 vector; perm must be a bijection.
  NodeId permute(NodeId v, const std::vector<int>* perm) {
    if (cols(v) != 1 || rows(v) != static_cast<int>(perm->size())) {
      throw std::runtime_error("tape: permute shape mismatch");
    }
    NodeId y = make_node(rows(v), 1, needs_grad(v));
    {
      const S* vv = val(v);
      S* yv = mut_val(y);
      for (std::size_t k = 0; k < perm->size(); ++k) yv[k] = vv[(*perm)[k]];
    }
    finish(y, "permute");
    if (needs_grad(y)) {
      record([this, v, y, perm] {
        const S* g = grad_of(y);
        S* gv = mut_grad(v);
        for (std::size_t k = 0; k < perm->size(); ++k) gv[(*perm)[k]] += g[k];
      });
    }
    return y;
  }

  // --- elementwise -------------------------------------------------------------

  NodeId add(NodeId a, NodeId b) { return binary_ew(a, b, Ew::kAdd); }
  NodeId sub(NodeId a, NodeId b) { return binary_ew(a, b, Ew::kSub); }
  NodeId mul(NodeId a, NodeId b) { return binary_ew(a, b, Ew::kMul); }

  NodeId scale(NodeId a, S c) {
    NodeId y = make_node(rows(a), cols(a), needs_grad(a));
    {
      const S* av = val(a);
      S* yv = mut_val(y);
      for (std::size_t i = 0; i < nodes_[a].val.size(); ++i) yv[i] = c * av[i];
    }
    finish(y, "scale");
    if (needs_grad(y)) {
      record([this, a, y, c] {
        const S* g = grad_of(y);
        S* ga = mut_grad(a);
        for (std::size_t i = 0; i < nodes_[a].grad.size(); ++i) ga[i] += c * g[i];
      });
    }
    return y;
  }

  // y = (x + 1) / 2 — maps the cosine range [-1, 1] onto [0, 1].
  NodeId affine01(NodeId a) {
    NodeId y = make_node(rows(a), cols(a), needs_grad(a));
    {
      const S* av = val(a);
      S* yv = mut_val(y);
      for (std::size_t i = 0; i < nodes_[a].val.size(); ++i) yv[i] = (av[i] + S(1)) / S(2);
    }
    finish(y, "affine01");
    if (needs_grad(y)) {
      record([this, a, y] {
        const S* g = grad_of(y);
        S* ga = mut_grad(a);
        for (std::size_t i = 0; i < nodes_[a].grad.size(); ++i) ga[i] += g[i] / S(2);
      });
    }
    return y;
  }

  // Forward identity that blocks gradient flow.
  NodeId detach(NodeId a) {
    NodeId y = make_node(rows(a), cols(a), false);
    nodes_[y].val = nodes_[a].val;
    return y;
  }

  NodeId softplus(NodeId a) {
    NodeId y = make_node(rows(a), cols(a), needs_grad(a));
    {
      const S* av = val(a);
      S* yv = mut_val(y);
      for (std::size_t i = 0; i < nodes_[a].val.size(); ++i) {
        const double x = static_cast<double>(av[i]);
        yv[i] = static_cast<S>(x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)));
      }
    }
    finish(y, "softplus");
    if (needs_grad(y)) {
      record([this, a, y] {
        const S* g = grad_of(y);
        const S* av = val(a);
        S* ga = mut_grad(a);
        for (std::size_t i = 0; i < nodes_[a].grad.size(); ++i) {
          const double x = static_cast<double>(av[i]);
          const double sig = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
          ga[i] += static_cast<S>(static_cast<double>(g[i]) * sig);
        }
      });
    }
    return y;
  }

  // Rows scaled to unit L2 norm (guarded): y_i = x_i / (|x_i| + eps).
  NodeId row_l2_normalize(NodeId a) {
    const int n = rows(a), d = cols(a);
    NodeId y = make_node(n, d, needs_grad(a));
    std::vector<double> norms(n);
    {
      const S* xv = val(a);
      S* yv = mut_val(y);
      for (int i = 0; i < n; ++i) {
        const S* xi = xv + idx(i, 0, d);
        double q = 0;
        for (int k = 0; k < d; ++k) q += static_cast<double>(xi[k]) * static_cast<double>(xi[k]);
        norms[i] = std::sqrt(q);
        const double denom = norms[i] + kCosineEps;
        S* yi = yv + idx(i, 0, d);
        for (int k = 0; k < d; ++k) yi[k] = static_cast<S>(static_cast<double>(xi[k]) / denom);
      }
    }
    finish(y, "row_l2_normalize");
    if (needs_grad(y)) {
      record([this, a, y, n, d, norms = std::move(norms)] {
        const S* g = grad_of(y);
        const S* xv = val(a);
        S* gx = mut_grad(a);
        for (int i = 0; i < n; ++i) {
          const double nrm = norms[i];
          const double denom = nrm + kCosineEps;
          const S* gi = g + idx(i, 0, d);
          const S* xi = xv + idx(i, 0, d);
          S* gxi = gx + idx(i, 0, d);
          double dot = 0;
          for (int k = 0; k < d; ++k) dot += static_cast<double>(gi[k]) * static_cast<double>(xi[k]);
          const double c2 = nrm > 0 ? dot / (nrm * denom * denom) : 0.0;
          for (int k = 0; k < d; ++k) {
            gxi[k] += static_cast<S>(static_cast<double>(gi[k]) / denom - c2 * static_cast<double>(xi[k]));
          }
        }
      });
    }
    return y;
  }

  // Row-wise log(sum(exp(x))), max-stabilized. n x m -> n x 1.
  NodeId logsumexp_rows(NodeId a) {
    const int n = rows(a), m = cols(a);
    if (m < 1) throw std::runtime_error("tape: logsumexp_rows needs at least one column");
    NodeId y = make_node(n, 1, needs_grad(a));
    {
      const S* xv = val(a);
      S* yv = mut_val(y);
      for (int i = 0; i < n; ++i) {
        const S* xi = xv + idx(i, 0, m);
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < m; ++j) mx = std::max(mx, static_cast<double>(xi[j]));
        double z = 0;
        for (int j = 0; j < m; ++j) z += std::exp(static_cast<double>(xi[j]) - mx);
        yv[i] = static_cast<S>(mx + std::log(z));
      }
    }
    finish(y, "logsumexp_rows");
    if (needs_grad(y)) {
      record([this, a, y, n, m] {
        const S* g = grad_of(y);
        const S* xv = val(a);
        const S* yv = val(y);
        S* gx = mut_grad(a);
        for (int i = 0; i < n; ++i) {
          const double gi = static_cast<double>(g[i]);
          if (gi == 0) continue;
          const S* xi = xv + idx(i, 0, m);
          S* gxi = gx + idx(i, 0, m);
          const double lse = static_cast<double>(yv[i]);
          for (int j = 0; j < m; ++j) {
            gxi[j] += static_cast<S>(gi * std::exp(static_cast<double>(xi[j]) - lse));
          }
        }
      });
    }
    return y;
  }

  // Main diagonal of a square matrix as n x 1.
  NodeId take_diag(NodeId a) {
    const int n = rows(a);
    if (n != cols(a)) throw std::runtime_error("tape: take_diag needs a square matrix");
    NodeId y = make_node(n, 1, needs_grad(a));
    {
      const S* av = val(a);
      S* yv = mut_val(y);
      for (int i = 0; i < n; ++i) yv[i] = av[idx(i, i, n)];
    }
    finish(y, "take_diag");
    if (needs_grad(y)) {
      record([this, a, y, n] {
        const S* g = grad_of(y);
        S* ga = mut_grad(a);
        for (int i = 0; i < n; ++i) ga[idx(i, i, n)] += g[i];
      });
    }
    return y;
  }

  // --- reductions ----------------------------------------------------------

  NodeId mean_all(NodeId a) {
    if (nodes_.at(a).val.empty()) throw std::runtime_error("tape: mean_all of an empty tensor");
    NodeId y = make_node(1, 1, needs_grad(a));
    {
      double acc = 0;
      for (S v : nodes_[a].val) acc += static_cast<double>(v);
      mut_val(y)[0] = static_cast<S>(acc / static_cast<double>(nodes_[a].val.size()));
    }
    finish(y, "mean_all");
    if (needs_grad(y)) {
      record([this, a, y] {
        S* ga = mut_grad(a);
        const S w = grad_of(y)[0] / static_cast<S>(nodes_[a].grad.size());
        for (std::size_t i = 0; i < nodes_[a].grad.size(); ++i) ga[i] += w;
      });
    }
    return y;
  }

  NodeId sum_squares(NodeId a) {
    NodeId y = make_node(1, 1, needs_grad(a));
    {
      double acc = 0;
      for (S v : nodes_[a].val) acc += static_cast<double>(v) * static_cast<double>(v);
      mut_val(y)[0] = static_cast<S>(acc);
    }
    finish(y, "sum_squares");
    if (needs_grad(y)) {
      record([this, a, y] {
        const S g = grad_of(y)[0];
        const S* av = val(a);
        S* ga = mut_grad(a);
        for (std::size_t i = 0; i < nodes_[a].grad.size(); ++i) ga[i] += S(2) * g * av[i];
      });
    }
    return y;
  }

  // --- backward ----------------------------------------------------------------

  void backward(NodeId loss) {
    if (rows(loss) != 1 || cols(loss) != 1) {
      throw std::runtime_error("tape: backward needs a scalar loss");
    }
    if (!std::isfinite(static_cast<double>(nodes_[loss].val[0]))) {
      throw std::runtime_error("tape: non-finite loss value");
    }
    if (backward_done_) throw std::runtime_error("tape: backward already ran");
    backward_done_ = true;
    if (!nodes_[loss].needs_grad) return;  // nothing upstream is trainable
    nodes_[loss].grad[0] = S(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

 private:
  enum class Ew { kAdd, kSub, kMul };

  // Same-shape, or scalar (1x1) second operand broadcast.
  NodeId binary_ew(NodeId a, NodeId b, Ew kind) {
    const bool scalar_b = rows(b) == 1 && cols(b) == 1;
    if (!scalar_b && (rows(a) != rows(b) || cols(a) != cols(b))) {
      throw std::runtime_error("tape: elementwise shape mismatch");
    }
    NodeId y = make_node(rows(a), cols(a), needs_grad(a) || needs_grad(b));
    {
      const S* av = val(a);
      const S* bv = val(b);
      S* yv = mut_val(y);
      const std::size_t n = nodes_[a].val.size();
      for (std::size_t i = 0; i < n; ++i) {
        const S bi = scalar_b ? bv[0] : bv[i];
        switch (kind) {
          case Ew::kAdd: yv[i] = av[i] + bi; break;
          case Ew::kSub: yv[i] = av[i] - bi; break;
          case Ew::kMul: yv[i] = av[i] * bi; break;
        }
      }
    }
    finish(y, "elementwise");
    if (needs_grad(y)) {
      record([this, a, b, y, kind, scalar_b] {
        const S* g = grad_of(y);
        const std::size_t n = nodes_[a].val.size();
        if (needs_grad(a)) {
          S* ga = mut_grad(a);
          const S* bv = val(b);
          for (std::size_t i = 0; i < n; ++i) {
            switch (kind) {
              case Ew::kAdd:
              case Ew::kSub: ga[i] += g[i]; break;
              case Ew::kMul: ga[i] += g[i] * (scalar_b ? bv[0] : bv[i]); break;
            }
          }
        }
        if (needs_grad(b)) {
          S* gb = mut_grad(b);
          const S* av = val(a);
          for (std::size_t i = 0; i < n; ++i) {
            S gi = S(0);
            switch (kind) {
              case Ew::kAdd: gi = g[i]; break;
              case Ew::kSub: gi = -g[i]; break;
              case Ew::kMul: gi = g[i] * av[i]; break;
            }
            gb[scalar_b ? 0 : i] += gi;
          }
        }
      });
    }
    return y;
  }

  NodeId make_node(int nrows, int ncols, bool needs_grad) {
    Node n;
    n.rows = nrows;
    n.cols = ncols;
    n.needs_grad = needs_grad;
    n.val.assign(static_cast<std::size_t>(nrows) * ncols, S(0));
    if (needs_grad) n.grad.assign(n.val.size(), S(0));
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  void finish(NodeId y, const char* op) {
    if (!check_finite) return;
    for (S v : nodes_[y].val) {
      if (!std::isfinite(static_cast<double>(v))) {
        throw std::runtime_error(std::string("tape: non-finite value produced by ") + op);
      }
    }
  }

  void record(std::function<void()> fn) { ops_.push_back(std::move(fn)); }

  const S* val(NodeId id) const { return nodes_[id].val.data(); }
  S* mut_val(NodeId id) { return nodes_[id].val.data(); }
  const S* grad_of(NodeId id) const { return nodes_[id].grad.data(); }
  S* mut_grad(NodeId id) { return nodes_[id].grad.data(); }

  static std::size_t idx(int i, int j, int stride) {
    return static_cast<std::size_t>(i) * stride + j;
  }

  // y = a * b (n x k times k x m), overwrite.
  static void dense_mm(const S* a, const S* b, S* y, int n, int k, int m) {
    std::fill(y, y + static_cast<std::size_t>(n) * m, S(0));
    dense_mm_acc(a, b, y, n, k, m);
  }

  // y += a * b
  static void dense_mm_acc(const S* a, const S* b, S* y, int n, int k, int m) {
    for (int i = 0; i < n; ++i) {
      for (int kk = 0; kk < k; ++kk) {
        const S aik = a[idx(i, kk, k)];
        if (aik == S(0)) continue;
        const S* br = b + idx(kk, 0, m);
        S* yr = y + idx(i, 0, m);
        for (int j = 0; j < m; ++j) yr[j] += aik * br[j];
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<std::function<void()>> ops_;
  bool backward_done_ = false;
};

// --- gradient checking ----------------------------------------------------

struct GradCheckGroup {
  std::string name;
  double max_rel_err = 0.0;
  long entries_checked = 0;
};

struct GradCheckReport {
  bool pass = true;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  long entries_checked = 0;
  std::vector<GradCheckGroup> groups;
};

// Builds the scalar loss from leaves created for `params` (same order).
using LossBuilder = std::function<NodeId(Tape<double>&, const std::vector<NodeId>&)>;

// Central-difference check of the tape's gradients, double precision only.
// Entries where both |analytic| and |numeric| fall below 1e-8 are skipped.
// Parameters larger than max_entries_per_param are subsampled with
// sample_seed.
inline GradCheckReport grad_check(const LossBuilder& build, std::vector<Matrix<double>*> params,
                                  std::vector<std::string> names, double step, double tolerance,
                                  std::uint64_t sample_seed = 17,
                                  long max_entries_per_param = 10000) {
  if (names.size() != params.size()) throw std::runtime_error("grad_check: one name per parameter");

  auto eval = [&](bool with_grad, std::vector<std::vector<double>>* grads) {
    Tape<double> tape;
    std::vector<NodeId> ids;
    ids.reserve(params.size());
    for (auto* p : params) ids.push_back(tape.leaf(*p, with_grad));
    NodeId loss = build(tape, ids);
    const double v = tape.value(loss)[0];
    if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite loss");
    if (with_grad && !params.empty()) {
      tape.backward(loss);
      for (NodeId id : ids) {
        auto g = tape.gradient(id);
        grads->emplace_back(g.begin(), g.end());
      }
    }
    return v;
  };

  std::vector<std::vector<double>> analytic;
  eval(true, &analytic);

  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix<double>& p = *params[pi];
    GradCheckGroup group;
    group.name = names[pi];

    std::vector<std::size_t> entries(p.size());
    std::iota(entries.begin(), entries.end(), 0);
    if (static_cast<long>(entries.size()) > max_entries_per_param) {
      Rng rng(mix_seed(sample_seed, pi));
      rng.shuffle(entries);
      entries.resize(max_entries_per_param);
      std::sort(entries.begin(), entries.end());
    }

    for (std::size_t e : entries) {
      const double keep = p.data[e];
      p.data[e] = keep + step;
      const double up = eval(false, nullptr);
      p.data[e] = keep - step;
      const double down = eval(false, nullptr);
      p.data[e] = keep;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[pi][e];
      ++group.entries_checked;
      const double mag = std::max(std::abs(a), std::abs(numeric));
      if (mag <= 1e-8) continue;
      const double rel = std::abs(a - numeric) / mag;
      group.max_rel_err = std::max(group.max_rel_err, rel);
    }
    report.entries_checked += group.entries_checked;
    report.max_rel_err = std::max(report.max_rel_err, group.max_rel_err);
    report.groups.push_back(std::move(group));
  }
  report.pass = report.max_rel_err <= tolerance;
  return report;
}

}  // namespace dccf
