#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dccf/diffcore.hpp"
#include "dccf/evaluator.hpp"
#include "dccf/interactions.hpp"
#include "dccf/model.hpp"
#include "dccf/objectives.hpp"
#include "dccf/rng.hpp"

namespace dccf {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 10240;  // users per batch
  int eval_every = 5;      // epochs between evaluations
  int patience = 5;        // evaluations without improvement before stopping
  int selection_cutoff = 20;  // recall cutoff used for model selection
  std::uint64_t seed = 42;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (epochs < 0) throw std::runtime_error("train config: epochs must be >= 0");
    if (batch_size < 1) throw std::runtime_error("train config: batch_size must be >= 1");
    if (eval_every < 1) throw std::runtime_error("train config: eval_every must be >= 1");
    if (patience < 1) throw std::runtime_error("train config: patience must be >= 1");
    if (!(lr >= 0)) throw std::runtime_error("train config: lr must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
      throw std::runtime_error("train config: betas must lie in [0, 1)");
    }
    if (!(eps > 0)) throw std::runtime_error("train config: eps must be > 0");
  }
};

// Adam moments for the four trainable arrays, in the fixed parameter order.
template <class S>
struct AdamState {
  long t = 0;
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::array<std::vector<S>, 4> m;
  std::array<std::vector<S>, 4> v;
};

template <class S>
std::array<Matrix<S>*, 4> param_arrays(ModelParams<S>& p) {
  return {&p.e0_user, &p.e0_item, &p.proto_user, &p.proto_item};
}

template <class S>
std::array<const Matrix<S>*, 4> param_arrays(const ModelParams<S>& p) {
  return {&p.e0_user, &p.e0_item, &p.proto_user, &p.proto_item};
}

template <class S>
AdamState<S> init_adam(const ModelParams<S>& params, const TrainConfig& cfg) {
  AdamState<S> st;
  st.lr = cfg.lr;
  st.beta1 = cfg.beta1;
  st.beta2 = cfg.beta2;
  st.eps = cfg.eps;
  const auto arrays = param_arrays(params);
  for (int k = 0; k < 4; ++k) {
    st.m[k].assign(arrays[k]->size(), S(0));
    st.v[k].assign(arrays[k]->size(), S(0));
  }
  return st;
}

// One Adam update over all four parameter arrays. Moments are kept in the
// training precision; bias correction and the update itself are computed in
// double.
template <class S>
void adam_step(AdamState<S>& st, ModelParams<S>& params,
               const std::array<std::span<const S>, 4>& grads) {
  const auto arrays = param_arrays(params);
  for (int k = 0; k < 4; ++k) {
    if (grads[k].size() != arrays[k]->size()) {
      throw std::runtime_error("adam_step: gradient shape mismatch for " + param_names()[k]);
    }
    for (S g : grads[k]) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw std::runtime_error("adam_step: non-finite gradient in " + param_names()[k]);
      }
    }
  }
  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (int k = 0; k < 4; ++k) {
    Matrix<S>& p = *arrays[k];
    std::vector<S>& m = st.m[k];
    std::vector<S>& v = st.v[k];
    const std::span<const S>& g = grads[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = st.beta1 * static_cast<double>(m[i]) + (1.0 - st.beta1) * gi;
      const double vi = st.beta2 * static_cast<double>(v[i]) + (1.0 - st.beta2) * gi * gi;
      m[i] = static_cast<S>(mi);
      v[i] = static_cast<S>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      p.data[i] = static_cast<S>(static_cast<double>(p.data[i]) -
                                 st.lr * mhat / (std::sqrt(vhat) + st.eps));
    }
  }
}

struct EpochResult {
  LossBreakdown mean_loss;  // mean over the epoch's batches
  int batches = 0;
  long users_scheduled = 0;
  double seconds = 0.0;  // wall time; kept out of persisted history
};

// One pass over a shuffled permutation of all sampleable users, in batches:
// sample pairs, forward, loss, backward, Adam update.
template <class S>
EpochResult train_epoch(ModelParams<S>& params, AdamState<S>& adam, const InteractionDataset& ds,
                        const PropagationGraph<S>& graph, const ModelConfig& mcfg,
                        const LossConfig& lcfg, int batch_size, Rng& rng) {
  if (batch_size < 1) throw std::runtime_error("train_epoch: batch_size must be >= 1");
  const auto start = std::chrono::steady_clock::now();

  std::vector<int> schedule = eligible_users(ds);
  if (schedule.empty()) throw std::runtime_error("train_epoch: no sampleable users");
  rng.shuffle(schedule);

  EpochResult result;
  result.users_scheduled = static_cast<long>(schedule.size());
  LossBreakdown sums;
  for (std::size_t begin = 0; begin < schedule.size(); begin += batch_size) {
    const std::size_t end = std::min(schedule.size(), begin + batch_size);
    std::vector<int> users(schedule.begin() + begin, schedule.begin() + end);
    try {
      TrainBatch batch = fill_batch(ds, std::move(users), lcfg.s_per_user, rng);
      Tape<S> tape;
      ForwardTrace trace = forward(tape, params, mcfg, graph, /*trainable=*/true);
      LossNodes losses = build_losses(tape, trace, batch, mcfg, lcfg);
      tape.backward(losses.total);
      const std::array<std::span<const S>, 4> grads = {
          tape.gradient(trace.e0_user), tape.gradient(trace.e0_item),
          tape.gradient(trace.proto_user), tape.gradient(trace.proto_item)};
      adam_step(adam, params, grads);

      const LossBreakdown b = extract_breakdown(tape, losses);
      sums.bpr += b.bpr;
      sums.cl_user += b.cl_user;
      sums.cl_item += b.cl_item;
      sums.reg_theta1 += b.reg_theta1;
      sums.reg_theta2 += b.reg_theta2;
      sums.total += b.total;
      ++result.batches;
    } catch (const std::exception& e) {
      throw std::runtime_error("train_epoch: batch " + std::to_string(result.batches) + ": " +
                               e.what());
    }
  }
  const double n = static_cast<double>(result.batches);
  result.mean_loss = {sums.bpr / n,        sums.cl_user / n,    sums.cl_item / n,
                      sums.reg_theta1 / n, sums.reg_theta2 / n, sums.total / n};
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

template <class S>
struct Checkpoint {
  ModelParams<S> params;
  AdamState<S> adam;
  int epoch = 0;
  std::uint64_t config_fingerprint = 0;
};

struct HistoryEntry {
  int epoch = 0;
  bool has_loss = false;
  LossBreakdown loss;
  bool has_eval = false;
  EvalReport eval;
};

template <class S>
struct FitResult {
  Checkpoint<S> best;
  int best_epoch = 0;
  double best_metric = 0.0;  // recall at the selection cutoff
  std::vector<HistoryEntry> history;
  bool early_stopped = false;
  int epochs_run = 0;
};

// Trains with periodic test-set evaluation (always including the final
// epoch), keeps the checkpoint with the best selection-metric value, and
// stops early once `patience` evaluations pass without improvement. Epoch e
// draws its randomness from a stream derived from (seed, e), so resuming
// from a checkpoint reproduces the uninterrupted trajectory. epochs ==
// start_epoch degenerates to a single evaluation of the given parameters.
template <class S>
FitResult<S> fit(ModelParams<S> params, const InteractionDataset& ds, const ModelConfig& mcfg,
                 const LossConfig& lcfg, const TrainConfig& tcfg, const EvalOptions& eopt,
                 std::uint64_t config_fingerprint, const AdamState<S>* resume_adam = nullptr,
                 int start_epoch = 0, std::ostream* log = nullptr) {
  mcfg.validate();
  lcfg.validate();
  tcfg.validate();
  eopt.validate();
  if (start_epoch < 0 || start_epoch > tcfg.epochs) {
    throw std::runtime_error("fit: start_epoch must lie in [0, epochs]");
  }

  int sel = -1;
  for (std::size_t c = 0; c < eopt.cutoffs.size(); ++c) {
    if (eopt.cutoffs[c] == tcfg.selection_cutoff) sel = static_cast<int>(c);
  }
  if (sel < 0) {
    throw std::runtime_error("fit: selection cutoff " + std::to_string(tcfg.selection_cutoff) +
                             " is not in the cutoff list");
  }

  const PropagationGraph<S> graph = build_propagation_graph<S>(ds);
  AdamState<S> adam = resume_adam ? *resume_adam : init_adam(params, tcfg);

  auto evaluate_now = [&]() {
    Tape<S> tape;
    ForwardTrace trace = forward(tape, params, mcfg, graph, /*trainable=*/false);
    auto [user_emb, item_emb] = final_embeddings(tape, trace);
    return evaluate_all(user_emb, item_emb, ds, eopt);
  };

  FitResult<S> result;
  result.best.config_fingerprint = config_fingerprint;
  double best_metric = -1.0;
  int evals_since_best = 0;

  auto consider = [&](int epoch, const EvalReport& report) {
    const double metric = report.recall[sel];
    if (metric > best_metric) {
      best_metric = metric;
      result.best.params = params;
      result.best.adam = adam;
      result.best.epoch = epoch;
      result.best_epoch = epoch;
      result.best_metric = metric;
      evals_since_best = 0;
    } else {
      ++evals_since_best;
    }
  };

  if (tcfg.epochs == start_epoch) {
    HistoryEntry entry;
    entry.epoch = start_epoch;
    entry.has_eval = true;
    entry.eval = evaluate_now();
    consider(start_epoch, entry.eval);
    result.history.push_back(std::move(entry));
    result.epochs_run = start_epoch;
    return result;
  }

  for (int epoch = start_epoch + 1; epoch <= tcfg.epochs; ++epoch) {
    Rng rng(mix_seed(tcfg.seed, static_cast<std::uint64_t>(epoch)));
    const EpochResult er = train_epoch(params, adam, ds, graph, mcfg, lcfg, tcfg.batch_size, rng);
    result.epochs_run = epoch;

    HistoryEntry entry;
    entry.epoch = epoch;
    entry.has_loss = true;
    entry.loss = er.mean_loss;

    const bool eval_due = epoch % tcfg.eval_every == 0 || epoch == tcfg.epochs;
    if (eval_due) {
      entry.has_eval = true;
      entry.eval = evaluate_now();
      consider(epoch, entry.eval);
    }
    if (log) {
      *log << "epoch " << epoch << " loss " << er.mean_loss.total << " (" << er.seconds << "s)";
      if (entry.has_eval) {
        *log << " recall@" << tcfg.selection_cutoff << " " << entry.eval.recall[sel];
      }
      *log << "\n";
    }
    result.history.push_back(std::move(entry));
    if (eval_due && evals_since_best >= tcfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  return result;
}

}  // namespace dccf
