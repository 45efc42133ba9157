#pragma once

#include <cstdint>
#include <vector>

#include "dccf/diffcore.hpp"
#include "dccf/interactions.hpp"
#include "dccf/model.hpp"
#include "dccf/objectives.hpp"
#include "dccf/rng.hpp"

namespace dccf {

// A small randomized instance (dataset, graph, params, one batch) on which
// the full objective's gradients are checked against finite differences.
// Double precision only: central differences are unreliable at f32.
struct ToyInstance {
  InteractionDataset ds;
  PropagationGraph<double> graph;
  ModelConfig model;
  LossConfig loss;
  ModelParams<double> params;
  TrainBatch batch;
};

struct ToyConfig {
  int users = 8;
  int items = 10;
  int d = 4;
  int K = 2;
  int L = 2;
  double tau = 0.2;
  double edge_prob = 0.35;
  std::uint64_t seed = 7;
};

inline ToyInstance make_toy_instance(const ToyConfig& tc = {}) {
  ToyInstance toy;
  toy.model.d = tc.d;
  toy.model.K = tc.K;
  toy.model.L = tc.L;
  toy.model.tau = tc.tau;

  Rng rng(mix_seed(tc.seed, 0x70f));
  EdgeList train, test;
  for (int u = 0; u < tc.users; ++u) {
    int degree = 0;
    for (int i = 0; i < tc.items; ++i) {
      if (rng.next_unit() < tc.edge_prob && degree + 1 < tc.items) {
        train.emplace_back(u, i);
        ++degree;
      }
    }
    if (degree == 0) train.emplace_back(u, static_cast<int>(rng.next_below(tc.items)));
  }
  // A small test split keeps evaluation paths exercisable on the same toy.
  for (int u = 0; u < tc.users; ++u) {
    test.emplace_back(u, static_cast<int>(rng.next_below(tc.items)));
  }
  toy.ds = build_dataset(std::move(train), std::move(test));
  toy.graph = build_propagation_graph<double>(toy.ds);
  toy.params = init_params<double>(toy.ds.num_users, toy.ds.num_items, toy.model, tc.seed);
  Rng batch_rng(mix_seed(tc.seed, 0xba7c4));
  toy.batch = sample_batch(toy.ds, toy.ds.num_users, toy.loss.s_per_user, batch_rng);
  return toy;
}

struct VerifyOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  bool detach_masks = false;
  // Negative control: deliberately corrupts one backward rule so the check
  // must fail. Exists to prove the checker can catch a broken derivative.
  bool inject_backward_bug = false;
};

// Finite-difference check of d(total loss)/d(params) on the toy instance.
inline GradCheckReport check_full_loss_gradients(ToyInstance& toy, const VerifyOptions& opts = {}) {
  ModelConfig mcfg = toy.model;
  mcfg.detach_masks = opts.detach_masks;
  const LossConfig& lcfg = toy.loss;
  const PropagationGraph<double>& graph = toy.graph;
  const TrainBatch& batch = toy.batch;
  const bool corrupt = opts.inject_backward_bug;

  LossBuilder build = [&mcfg, &lcfg, &graph, &batch, corrupt](Tape<double>& tape,
                                                              const std::vector<NodeId>& ids) {
    tape.corrupt_matmul_backward_for_tests = corrupt;
    ForwardTrace trace =
        forward_from_leaves(tape, ids[0], ids[1], ids[2], ids[3], mcfg, graph);
    LossNodes nodes = build_losses(tape, trace, batch, mcfg, lcfg);
    return nodes.total;
  };

  return grad_check(build,
                    {&toy.params.e0_user, &toy.params.e0_item, &toy.params.proto_user,
                     &toy.params.proto_item},
                    param_names(), opts.step, opts.tolerance);
}

}  // namespace dccf
