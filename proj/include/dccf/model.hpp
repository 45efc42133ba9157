#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dccf/diffcore.hpp"
#include "dccf/interactions.hpp"
#include "dccf/matrix.hpp"
#include "dccf/rng.hpp"
#include "dccf/spgraph.hpp"

namespace dccf {

struct ModelConfig {
  int d = 32;        // embedding dimension
  int K = 128;       // intent prototypes per side
  int L = 2;         // propagation layers
  double tau = 0.2;  // contrastive temperature

  // Ablations. Disabling intents removes both the global intent view and the
  // intent-mask view (the latter is derived from the former).
  bool disable_intents = false;
  bool disable_local_mask = false;
  bool disable_disen_mask = false;
  bool detach_masks = false;

  void validate() const {
    if (d < 1) throw std::runtime_error("model config: d must be >= 1");
    if (K < 1) throw std::runtime_error("model config: K must be >= 1");
    if (L < 0) throw std::runtime_error("model config: L must be >= 0");
    if (!(tau > 0.0)) throw std::runtime_error("model config: tau must be > 0");
  }

  bool use_intents() const { return !disable_intents; }
  bool use_local_mask() const { return !disable_local_mask; }
  bool use_disen_mask() const { return !disable_intents && !disable_disen_mask; }
};

template <class S>
struct ModelParams {
  Matrix<S> e0_user;     // I x d
  Matrix<S> e0_item;     // J x d
  Matrix<S> proto_user;  // K x d
  Matrix<S> proto_item;  // K x d
};

// Fixed order used everywhere parameters are enumerated (optimizer slots,
// checkpoints, exports, gradient-check groups).
inline const std::vector<std::string>& param_names() {
  static const std::vector<std::string> names = {"e0_user", "e0_item", "proto_user", "proto_item"};
  return names;
}

namespace detail {

template <class S>
void fill_xavier_uniform(Matrix<S>& m, int fan_in, int fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / (static_cast<double>(fan_in) + static_cast<double>(fan_out)));
  for (auto& v : m.data) v = static_cast<S>(rng.next_symmetric(a));
}

}  // namespace detail

// Xavier-uniform initialization; embedding tables use (rows, cols) as
// (fan_in, fan_out), prototypes use d for both. Draw order is fixed so a
// seed fully determines the parameters.
template <class S>
ModelParams<S> init_params(int num_users, int num_items, const ModelConfig& cfg,
                           std::uint64_t seed) {
  cfg.validate();
  if (num_users < 1 || num_items < 1) {
    throw std::runtime_error("init_params: need at least one user and one item");
  }
  ModelParams<S> p;
  p.e0_user = Matrix<S>(num_users, cfg.d);
  p.e0_item = Matrix<S>(num_items, cfg.d);
  p.proto_user = Matrix<S>(cfg.K, cfg.d);
  p.proto_item = Matrix<S>(cfg.K, cfg.d);
  Rng rng(mix_seed(seed, 0x1217));
  detail::fill_xavier_uniform(p.e0_user, num_users, cfg.d, rng);
  detail::fill_xavier_uniform(p.e0_item, num_items, cfg.d, rng);
  detail::fill_xavier_uniform(p.proto_user, cfg.d, cfg.d, rng);
  detail::fill_xavier_uniform(p.proto_item, cfg.d, cfg.d, rng);
  return p;
}

// Preprocessed graph structures shared by every forward pass: the
// symmetrically normalized adjacency for the plain propagation view, and the
// raw pattern (plus its transpose and the edge-order correspondence between
// them) for the mask-weighted views.
template <class S>
struct PropagationGraph {
  int num_users = 0;
  int num_items = 0;
  EdgeList edges;               // canonical (user, item) order, ascending
  NormalizedAdjacency<S> adj;   // D^-1/2 A D^-1/2 and its transpose
  CsrPattern pat;               // users x items
  CsrPattern pat_t;             // items x users
  std::vector<int> t_src;       // pat_t edge k -> index of the same edge in pat order
  std::vector<int> t_inv;       // pat edge e -> position of the same edge in pat_t
};

template <class S>
PropagationGraph<S> build_propagation_graph(const EdgeList& edges, int num_users, int num_items) {
  PropagationGraph<S> g;
  g.num_users = num_users;
  g.num_items = num_items;
  g.edges = edges;
  std::sort(g.edges.begin(), g.edges.end());
  validate_edges(g.edges, num_users, num_items, "build_propagation_graph");
  g.pat = build_pattern(g.edges, num_users, num_items);
  g.pat_t = transpose_pattern(g.pat, &g.t_src);
  g.t_inv.assign(g.t_src.size(), 0);
  for (std::size_t k = 0; k < g.t_src.size(); ++k) g.t_inv[g.t_src[k]] = static_cast<int>(k);
  g.adj = sym_normalize<S>(g.edges, num_users, num_items);
  return g;
}

template <class S>
PropagationGraph<S> build_propagation_graph(const InteractionDataset& ds) {
  return build_propagation_graph<S>(ds.train_edges, ds.num_users, ds.num_items);
}

// Node ids of everything one propagation step produces. kNoNode marks views
// removed by ablation flags.
struct ForwardStep {
  NodeId z_user = kNoNode, z_item = kNoNode;          // plain graph view
  NodeId p_user = kNoNode, p_item = kNoNode;          // intent-relevance rows
  NodeId r_user = kNoNode, r_item = kNoNode;          // global intent view
  NodeId local_mask = kNoNode;                        // per-edge, adjacency order
  NodeId intent_mask = kNoNode;                       // per-edge, adjacency order
  NodeId h_beta_user = kNoNode, h_beta_item = kNoNode;    // local-mask view
  NodeId h_gamma_user = kNoNode, h_gamma_item = kNoNode;  // intent-mask view
  NodeId e_user = kNoNode, e_item = kNoNode;          // accumulated embedding
};

struct ForwardTrace {
  NodeId e0_user = kNoNode, e0_item = kNoNode;
  NodeId proto_user = kNoNode, proto_item = kNoNode;
  std::vector<ForwardStep> steps;
  NodeId final_user = kNoNode, final_item = kNoNode;  // sum of e_0..e_L
};

namespace detail {

template <class S>
void ensure_finite(const Tape<S>& tape, NodeId id, const char* view, int step) {
  for (S v : tape.value(id)) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw std::runtime_error("forward: non-finite values in " + std::string(view) + " at step " +
                               std::to_string(step));
    }
  }
}

// Per-edge mask from endpoint views: (cosine + 1) / 2, optionally cut out of
// the gradient graph.
template <class S>
NodeId edge_mask_node(Tape<S>& tape, NodeId user_view, NodeId item_view, const EdgeList* edges,
                      bool detach) {
  NodeId cos = tape.cosine_pairs(user_view, item_view, edges);
  if (detach) cos = tape.detach(cos);
  return tape.affine01(cos);
}

// Row-normalizes per-edge mask values over one side's pattern and propagates
// the opposite side's embeddings through the resulting weighted graph.
template <class S>
NodeId masked_propagate_user(Tape<S>& tape, const PropagationGraph<S>& g, NodeId mask,
                             NodeId e_item) {
  NodeId w = tape.sparse_row_normalize(&g.pat, mask);
  return tape.spmm_edges(&g.pat, &g.pat_t, &g.t_src, w, e_item);
}

template <class S>
NodeId masked_propagate_item(Tape<S>& tape, const PropagationGraph<S>& g, NodeId mask,
                             NodeId e_user) {
  NodeId mask_t = tape.permute(mask, &g.t_src);
  NodeId w = tape.sparse_row_normalize(&g.pat_t, mask_t);
  return tape.spmm_edges(&g.pat_t, &g.pat, &g.t_inv, w, e_user);
}

}  // namespace detail

// The full multi-view forward pass over already-created parameter leaves.
// Per step l (all inputs are the previous step's embeddings):
//   z       = normalized-adjacency propagation,
//   r       = softmax-weighted combination of intent prototypes,
//   h_beta  = propagation through the row-normalized local-mask graph
//             (masks from cosine of the z views),
//   h_gamma = the same through the intent-mask graph (masks from the r views),
//   e_l     = e_{l-1} + z + r + h_beta + h_gamma  (disabled views drop out).
// Final embeddings are the sum of e_0..e_L. The graph must outlive the tape.
template <class S>
ForwardTrace forward_from_leaves(Tape<S>& tape, NodeId e0_user, NodeId e0_item, NodeId proto_user,
                                 NodeId proto_item, const ModelConfig& cfg,
                                 const PropagationGraph<S>& graph) {
  cfg.validate();
  if (tape.rows(e0_user) != graph.num_users || tape.rows(e0_item) != graph.num_items ||
      tape.cols(e0_user) != cfg.d || tape.cols(e0_item) != cfg.d ||
      tape.rows(proto_user) != cfg.K || tape.rows(proto_item) != cfg.K ||
      tape.cols(proto_user) != cfg.d || tape.cols(proto_item) != cfg.d) {
    throw std::runtime_error("forward: parameter shapes do not match config/graph");
  }

  ForwardTrace trace;
  trace.e0_user = e0_user;
  trace.e0_item = e0_item;
  trace.proto_user = proto_user;
  trace.proto_item = proto_item;
  detail::ensure_finite(tape, trace.e0_user, "e0_user", 0);
  detail::ensure_finite(tape, trace.e0_item, "e0_item", 0);
  detail::ensure_finite(tape, trace.proto_user, "proto_user", 0);
  detail::ensure_finite(tape, trace.proto_item, "proto_item", 0);

  NodeId e_user = trace.e0_user;
  NodeId e_item = trace.e0_item;
  NodeId sum_user = e_user;
  NodeId sum_item = e_item;

  for (int l = 1; l <= cfg.L; ++l) {
    ForwardStep step;

    step.z_user = tape.spmm(&graph.adj.a_bar, &graph.adj.a_bar_t, e_item);
    step.z_item = tape.spmm(&graph.adj.a_bar_t, &graph.adj.a_bar, e_user);
    detail::ensure_finite(tape, step.z_user, "z_user", l);
    detail::ensure_finite(tape, step.z_item, "z_item", l);

    if (cfg.use_intents()) {
      step.p_user = tape.row_softmax_scores(e_user, trace.proto_user);
      step.p_item = tape.row_softmax_scores(e_item, trace.proto_item);
      step.r_user = tape.matmul(step.p_user, trace.proto_user);
      step.r_item = tape.matmul(step.p_item, trace.proto_item);
      detail::ensure_finite(tape, step.r_user, "r_user", l);
      detail::ensure_finite(tape, step.r_item, "r_item", l);
    }

    if (cfg.use_local_mask()) {
      step.local_mask =
          detail::edge_mask_node(tape, step.z_user, step.z_item, &graph.edges, cfg.detach_masks);
      step.h_beta_user = detail::masked_propagate_user(tape, graph, step.local_mask, e_item);
      step.h_beta_item = detail::masked_propagate_item(tape, graph, step.local_mask, e_user);
      detail::ensure_finite(tape, step.h_beta_user, "h_beta_user", l);
      detail::ensure_finite(tape, step.h_beta_item, "h_beta_item", l);
    }

    if (cfg.use_disen_mask()) {
      step.intent_mask =
          detail::edge_mask_node(tape, step.r_user, step.r_item, &graph.edges, cfg.detach_masks);
      step.h_gamma_user = detail::masked_propagate_user(tape, graph, step.intent_mask, e_item);
      step.h_gamma_item = detail::masked_propagate_item(tape, graph, step.intent_mask, e_user);
      detail::ensure_finite(tape, step.h_gamma_user, "h_gamma_user", l);
      detail::ensure_finite(tape, step.h_gamma_item, "h_gamma_item", l);
    }

    NodeId next_user = tape.add(e_user, step.z_user);
    NodeId next_item = tape.add(e_item, step.z_item);
    if (step.r_user != kNoNode) {
      next_user = tape.add(next_user, step.r_user);
      next_item = tape.add(next_item, step.r_item);
    }
    if (step.h_beta_user != kNoNode) {
      next_user = tape.add(next_user, step.h_beta_user);
      next_item = tape.add(next_item, step.h_beta_item);
    }
    if (step.h_gamma_user != kNoNode) {
      next_user = tape.add(next_user, step.h_gamma_user);
      next_item = tape.add(next_item, step.h_gamma_item);
    }
    step.e_user = next_user;
    step.e_item = next_item;

    e_user = next_user;
    e_item = next_item;
    sum_user = tape.add(sum_user, e_user);
    sum_item = tape.add(sum_item, e_item);
    trace.steps.push_back(step);
  }

  trace.final_user = sum_user;
  trace.final_item = sum_item;
  return trace;
}

// Convenience wrapper creating the four parameter leaves itself.
template <class S>
ForwardTrace forward(Tape<S>& tape, const ModelParams<S>& params, const ModelConfig& cfg,
                     const PropagationGraph<S>& graph, bool trainable) {
  const NodeId e0_user = tape.leaf(params.e0_user, trainable);
  const NodeId e0_item = tape.leaf(params.e0_item, trainable);
  const NodeId proto_user = tape.leaf(params.proto_user, trainable);
  const NodeId proto_item = tape.leaf(params.proto_item, trainable);
  return forward_from_leaves(tape, e0_user, e0_item, proto_user, proto_item, cfg, graph);
}

// Intent-relevance rows: softmax over embedding-prototype dot products.
// Plain (non-tape) version for exports and tests.
template <class S>
Matrix<S> intent_relevance(const Matrix<S>& e_prev, const Matrix<S>& protos) {
  if (e_prev.cols != protos.cols) throw std::runtime_error("intent_relevance: dim mismatch");
  const int n = e_prev.rows, K = protos.rows, d = e_prev.cols;
  Matrix<S> p(n, K);
  std::vector<double> logits(K);
  for (int i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < K; ++k) {
      double acc = 0;
      for (int j = 0; j < d; ++j) {
        acc += static_cast<double>(e_prev.at(i, j)) * static_cast<double>(protos.at(k, j));
      }
      logits[k] = acc;
      mx = std::max(mx, acc);
    }
    double z = 0;
    for (int k = 0; k < K; ++k) {
      logits[k] = std::exp(logits[k] - mx);
      z += logits[k];
    }
    for (int k = 0; k < K; ++k) p.at(i, k) = static_cast<S>(logits[k] / z);
  }
  return p;
}

// r = P * protos with P = intent_relevance(e_prev, protos).
template <class S>
Matrix<S> intent_aggregate(const Matrix<S>& e_prev, const Matrix<S>& protos) {
  const Matrix<S> p = intent_relevance(e_prev, protos);
  const int n = e_prev.rows, K = protos.rows, d = protos.cols;
  Matrix<S> r(n, d);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < K; ++k) {
      const S w = p.at(i, k);
      for (int j = 0; j < d; ++j) r.at(i, j) += w * protos.at(k, j);
    }
  }
  return r;
}

// Per-edge masks (cosine similarity mapped to [0, 1]) from endpoint views;
// plain version aligned with the tape op.
template <class S>
std::vector<S> edge_masks(const Matrix<S>& src_view, const Matrix<S>& dst_view,
                          const EdgeList& edges) {
  if (src_view.cols != dst_view.cols) throw std::runtime_error("edge_masks: dim mismatch");
  const int d = src_view.cols;
  std::vector<S> out(edges.size());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& [i, j] = edges[e];
    if (i < 0 || i >= src_view.rows || j < 0 || j >= dst_view.rows) {
      throw std::runtime_error("edge_masks: edge index out of range");
    }
    double dot = 0, qa = 0, qb = 0;
    for (int k = 0; k < d; ++k) {
      const double a = static_cast<double>(src_view.at(i, k));
      const double b = static_cast<double>(dst_view.at(j, k));
      dot += a * b;
      qa += a * a;
      qb += b * b;
    }
    const double cos = dot / (std::sqrt(qa) * std::sqrt(qb) + kCosineEps);
    out[e] = static_cast<S>((cos + 1.0) / 2.0);
  }
  return out;
}

// Aggregated embeddings of a completed forward pass, as plain matrices.
template <class S>
std::pair<Matrix<S>, Matrix<S>> final_embeddings(const Tape<S>& tape, const ForwardTrace& trace) {
  return {tape.value_matrix(trace.final_user), tape.value_matrix(trace.final_item)};
}

// Preference scores for a subset of users: one row per user, one column per
// item, plain inner products.
template <class S>
Matrix<S> predict_scores(const Matrix<S>& user_emb, const Matrix<S>& item_emb,
                         const std::vector<int>& user_subset) {
  if (user_emb.cols != item_emb.cols) throw std::runtime_error("predict_scores: dim mismatch");
  const int d = user_emb.cols, J = item_emb.rows;
  Matrix<S> scores(static_cast<int>(user_subset.size()), J);
  for (std::size_t row = 0; row < user_subset.size(); ++row) {
    const int u = user_subset[row];
    if (u < 0 || u >= user_emb.rows) throw std::runtime_error("predict_scores: user out of range");
    const S* eu = user_emb.row(u);
    S* out = scores.row(static_cast<int>(row));
    for (int j = 0; j < J; ++j) {
      const S* ej = item_emb.row(j);
      S acc = 0;
      for (int k = 0; k < d; ++k) acc += eu[k] * ej[k];
      out[j] = acc;
    }
  }
  return scores;
}

}  // namespace dccf
