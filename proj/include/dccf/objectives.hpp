#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dccf/diffcore.hpp"
#include "dccf/interactions.hpp"
#include "dccf/model.hpp"
#include "dccf/rng.hpp"

namespace dccf {

struct LossConfig {
  double lambda1 = 0.1;   // contrastive weight
  double lambda2 = 5e-4;  // embedding L2 weight
  double lambda3 = 5e-4;  // prototype L2 weight
  int s_per_user = 1;     // positive/negative pairs sampled per batch user

  // Contrastive anchors are the batch's entities by default; this switches to
  // every user/item (only sensible on tiny instances).
  bool cl_full_set = false;

  // Ablations on the contrastive objective.
  bool drop_cl_disen = false;   // drop the z-vs-r term
  bool drop_cl_masked = false;  // drop both z-vs-mask-view terms

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0) {
      throw std::runtime_error("loss config: lambda weights must be >= 0");
    }
    if (s_per_user < 1) throw std::runtime_error("loss config: s_per_user must be >= 1");
  }
};

// One ranking mini-batch: a set of distinct users, s positive and s negative
// items per user (grouped per user), plus the flattened score-pair lists the
// loss consumes directly. Must outlive any tape built over it.
struct TrainBatch {
  std::vector<int> users;      // distinct within the batch
  std::vector<int> pos_items;  // users.size() * s entries
  std::vector<int> neg_items;  // users.size() * s entries
  int s_per_user = 1;
  std::vector<int> distinct_items;  // sorted unique items of the batch (pos + neg)
  EdgeList pos_pairs;               // (user, pos item), global indices
  EdgeList neg_pairs;               // (user, neg item), global indices
};

struct LossBreakdown {
  double bpr = 0.0;
  double cl_user = 0.0;
  double cl_item = 0.0;
  double reg_theta1 = 0.0;
  double reg_theta2 = 0.0;
  double total = 0.0;
};

// Users that can anchor a ranking pair: at least one train item and at least
// one non-interacted item. Users interacting with everything are excluded
// (counted by the caller via the difference in sizes).
inline std::vector<int> eligible_users(const InteractionDataset& ds) {
  std::vector<int> out;
  out.reserve(ds.num_users);
  for (int u = 0; u < ds.num_users; ++u) {
    const int deg = ds.train_degree(u);
    if (deg >= 1 && deg < ds.num_items) out.push_back(u);
  }
  return out;
}

// Draws s positives (uniform over the user's train items) and s negatives
// (uniform over the complement; rejection sampling with a scan fallback) for
// each given user. Users must all be eligible.
inline TrainBatch fill_batch(const InteractionDataset& ds, std::vector<int> users, int s_per_user,
                             Rng& rng) {
  if (s_per_user < 1) throw std::runtime_error("fill_batch: s_per_user must be >= 1");
  constexpr int kRejectionCap = 100;
  TrainBatch batch;
  batch.users = std::move(users);
  batch.s_per_user = s_per_user;
  batch.pos_items.reserve(batch.users.size() * s_per_user);
  batch.neg_items.reserve(batch.users.size() * s_per_user);
  for (int u : batch.users) {
    const auto& items = ds.train_items.at(u);
    const int deg = static_cast<int>(items.size());
    if (deg < 1 || deg >= ds.num_items) {
      throw std::runtime_error("fill_batch: user " + std::to_string(u) + " is not sampleable");
    }
    for (int s = 0; s < s_per_user; ++s) {
      const int pos = items[static_cast<std::size_t>(rng.next_below(deg))];
      int neg = -1;
      for (int attempt = 0; attempt < kRejectionCap; ++attempt) {
        const int cand = static_cast<int>(rng.next_below(ds.num_items));
        if (!ds.has_train_edge(u, cand)) {
          neg = cand;
          break;
        }
      }
      if (neg < 0) {
        // Scan fallback: pick the k-th non-interacted item directly.
        std::uint64_t k = rng.next_below(static_cast<std::uint64_t>(ds.num_items - deg));
        for (int j = 0; j < ds.num_items; ++j) {
          if (ds.has_train_edge(u, j)) continue;
          if (k == 0) {
            neg = j;
            break;
          }
          --k;
        }
      }
      batch.pos_items.push_back(pos);
      batch.neg_items.push_back(neg);
      batch.pos_pairs.emplace_back(u, pos);
      batch.neg_pairs.emplace_back(u, neg);
    }
  }
  batch.distinct_items = batch.pos_items;
  batch.distinct_items.insert(batch.distinct_items.end(), batch.neg_items.begin(),
                              batch.neg_items.end());
  std::sort(batch.distinct_items.begin(), batch.distinct_items.end());
  batch.distinct_items.erase(std::unique(batch.distinct_items.begin(), batch.distinct_items.end()),
                             batch.distinct_items.end());
  return batch;
}

// Standalone batch draw: `count` distinct eligible users chosen without
// replacement (all of them when fewer exist).
inline TrainBatch sample_batch(const InteractionDataset& ds, int count, int s_per_user, Rng& rng) {
  std::vector<int> pool = eligible_users(ds);
  if (pool.empty()) throw std::runtime_error("sample_batch: no sampleable users");
  rng.shuffle(pool);
  if (static_cast<int>(pool.size()) > count) pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return fill_batch(ds, std::move(pool), s_per_user, rng);
}

// Pairwise ranking loss: mean of -log sigmoid(pos - neg), evaluated in the
// stable softplus form softplus(neg - pos).
template <class S>
NodeId bpr_loss(Tape<S>& tape, NodeId pos_scores, NodeId neg_scores) {
  if (tape.rows(pos_scores) != tape.rows(neg_scores) || tape.cols(pos_scores) != 1 ||
      tape.cols(neg_scores) != 1) {
    throw std::runtime_error("bpr_loss: score vectors must be equal-length columns");
  }
  if (tape.rows(pos_scores) == 0) throw std::runtime_error("bpr_loss: empty batch");
  return tape.mean_all(tape.softplus(tape.sub(neg_scores, pos_scores)));
}

// InfoNCE between two row-aligned view matrices (B x d): positives are the
// matching rows, negatives the rest of the batch (the denominator includes
// the positive itself). Similarity is cosine at temperature tau.
template <class S>
NodeId infonce(Tape<S>& tape, NodeId anchor, NodeId view, double tau) {
  if (tape.rows(anchor) != tape.rows(view) || tape.cols(anchor) != tape.cols(view)) {
    throw std::runtime_error("infonce: view shape mismatch");
  }
  if (tape.rows(anchor) < 1) throw std::runtime_error("infonce: empty batch");
  if (!(tau > 0.0)) throw std::runtime_error("infonce: tau must be > 0");
  NodeId a = tape.row_l2_normalize(anchor);
  NodeId v = tape.row_l2_normalize(view);
  NodeId logits = tape.scale(tape.matmul_nt(a, v), static_cast<S>(1.0 / tau));
  NodeId denom = tape.logsumexp_rows(logits);
  NodeId pos = tape.take_diag(logits);
  return tape.mean_all(tape.sub(denom, pos));
}

// Sum of per-step InfoNCE terms for one side: anchor z against each retained
// augmented view (r, h_beta, h_gamma) of the same entities. Views removed by
// ablation are skipped, not contrasted as zeros. Returns kNoNode when no
// terms survive.
template <class S>
NodeId contrastive_side(Tape<S>& tape, const ForwardTrace& trace, bool user_side,
                        const std::vector<int>& entity_rows, double tau, const LossConfig& lcfg) {
  NodeId total = kNoNode;
  for (const ForwardStep& step : trace.steps) {
    const NodeId z = user_side ? step.z_user : step.z_item;
    const NodeId r = user_side ? step.r_user : step.r_item;
    const NodeId hb = user_side ? step.h_beta_user : step.h_beta_item;
    const NodeId hg = user_side ? step.h_gamma_user : step.h_gamma_item;

    std::vector<NodeId> views;
    if (!lcfg.drop_cl_disen && r != kNoNode) views.push_back(r);
    if (!lcfg.drop_cl_masked && hb != kNoNode) views.push_back(hb);
    if (!lcfg.drop_cl_masked && hg != kNoNode) views.push_back(hg);
    if (views.empty()) continue;

    NodeId anchor = tape.gather_rows(z, entity_rows);
    for (NodeId view : views) {
      NodeId term = infonce(tape, anchor, tape.gather_rows(view, entity_rows), tau);
      total = total == kNoNode ? term : tape.add(total, term);
    }
  }
  return total;
}

// Squared Frobenius norms of the two parameter groups: initial embeddings
// and intent prototypes.
template <class S>
std::pair<NodeId, NodeId> l2_reg(Tape<S>& tape, const ForwardTrace& trace) {
  NodeId theta1 = tape.add(tape.sum_squares(trace.e0_user), tape.sum_squares(trace.e0_item));
  NodeId theta2 =
      tape.add(tape.sum_squares(trace.proto_user), tape.sum_squares(trace.proto_item));
  return {theta1, theta2};
}

// Node ids of every loss component plus the weighted total.
struct LossNodes {
  NodeId bpr = kNoNode;
  NodeId cl_user = kNoNode;  // kNoNode when no contrastive terms survive
  NodeId cl_item = kNoNode;
  NodeId reg_theta1 = kNoNode;
  NodeId reg_theta2 = kNoNode;
  NodeId total = kNoNode;
};

// total = bpr + lambda1 * (cl_user + cl_item) + lambda2 * reg1 + lambda3 * reg2,
// assembled in exactly that order.
template <class S>
NodeId total_loss(Tape<S>& tape, const LossNodes& parts, const LossConfig& lcfg) {
  NodeId total = parts.bpr;
  if (parts.cl_user != kNoNode || parts.cl_item != kNoNode) {
    NodeId cl = parts.cl_user;
    if (cl == kNoNode) {
      cl = parts.cl_item;
    } else if (parts.cl_item != kNoNode) {
      cl = tape.add(cl, parts.cl_item);
    }
    total = tape.add(total, tape.scale(cl, static_cast<S>(lcfg.lambda1)));
  }
  total = tape.add(total, tape.scale(parts.reg_theta1, static_cast<S>(lcfg.lambda2)));
  total = tape.add(total, tape.scale(parts.reg_theta2, static_cast<S>(lcfg.lambda3)));
  return total;
}

// Assembles the full objective over a completed forward trace: BPR on the
// batch's score pairs, the per-layer contrastive terms for batch users and
// batch items, and the L2 penalties.
template <class S>
LossNodes build_losses(Tape<S>& tape, const ForwardTrace& trace, const TrainBatch& batch,
                       const ModelConfig& mcfg, const LossConfig& lcfg) {
  lcfg.validate();
  LossNodes nodes;

  NodeId pos = tape.pair_dot(trace.final_user, trace.final_item, &batch.pos_pairs);
  NodeId neg = tape.pair_dot(trace.final_user, trace.final_item, &batch.neg_pairs);
  nodes.bpr = bpr_loss(tape, pos, neg);

  if (!trace.steps.empty()) {
    if (lcfg.cl_full_set) {
      std::vector<int> all_users(static_cast<std::size_t>(tape.rows(trace.e0_user)));
      std::iota(all_users.begin(), all_users.end(), 0);
      std::vector<int> all_items(static_cast<std::size_t>(tape.rows(trace.e0_item)));
      std::iota(all_items.begin(), all_items.end(), 0);
      nodes.cl_user = contrastive_side(tape, trace, true, all_users, mcfg.tau, lcfg);
      nodes.cl_item = contrastive_side(tape, trace, false, all_items, mcfg.tau, lcfg);
    } else {
      nodes.cl_user = contrastive_side(tape, trace, true, batch.users, mcfg.tau, lcfg);
      nodes.cl_item = contrastive_side(tape, trace, false, batch.distinct_items, mcfg.tau, lcfg);
    }
  }

  auto [reg1, reg2] = l2_reg(tape, trace);
  nodes.reg_theta1 = reg1;
  nodes.reg_theta2 = reg2;
  nodes.total = total_loss(tape, nodes, lcfg);
  return nodes;
}

template <class S>
LossBreakdown extract_breakdown(const Tape<S>& tape, const LossNodes& nodes) {
  LossBreakdown b;
  b.bpr = static_cast<double>(tape.value(nodes.bpr)[0]);
  b.cl_user = nodes.cl_user == kNoNode ? 0.0 : static_cast<double>(tape.value(nodes.cl_user)[0]);
  b.cl_item = nodes.cl_item == kNoNode ? 0.0 : static_cast<double>(tape.value(nodes.cl_item)[0]);
  b.reg_theta1 = static_cast<double>(tape.value(nodes.reg_theta1)[0]);
  b.reg_theta2 = static_cast<double>(tape.value(nodes.reg_theta2)[0]);
  b.total = static_cast<double>(tape.value(nodes.total)[0]);
  return b;
}

}  // namespace dccf
