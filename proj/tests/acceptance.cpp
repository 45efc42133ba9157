// Acceptance gate: one self-contained check per release criterion. Each
// criterion prints exactly one [PASS]/[FAIL] line; the process exits nonzero
// if any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dccf/diffcore.hpp"
#include "dccf/evaluator.hpp"
#include "dccf/interactions.hpp"
#include "dccf/io.hpp"
#include "dccf/model.hpp"
#include "dccf/objectives.hpp"
#include "dccf/spgraph.hpp"
#include "dccf/trainer.hpp"
#include "dccf/verify.hpp"
#include "support/reference.hpp"

namespace {

namespace fs = std::filesystem;

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

// --- criterion 1: finite-difference check of the full objective ---------------

Outcome c1_gradients() {
  const double t0 = now_seconds();
  dccf::ToyInstance toy = dccf::make_toy_instance();
  const dccf::GradCheckReport report = dccf::check_full_loss_gradients(toy);
  const double secs = now_seconds() - t0;
  Outcome o;
  o.pass = report.pass && secs <= 30.0;
  o.detail = "max rel err " + fmt(report.max_rel_err) + " over " +
             std::to_string(report.entries_checked) + " entries in " + fmt(secs) + "s (cap 30s)";
  return o;
}

// --- criterion 2: forward pass vs dense reference across seeds ----------------

Outcome c2_dense_equivalence() {
  double max_diff = 0.0;
  int instances = 0;
  for (int seed = 0; seed < 55; ++seed) {
    std::mt19937_64 gen(1000 + seed);
    auto pick = [&gen](int lo, int hi) {
      return lo + static_cast<int>(gen() % static_cast<std::uint64_t>(hi - lo + 1));
    };
    const int I = pick(4, 16), J = pick(4, 16);
    dccf::ModelConfig cfg;
    cfg.d = pick(2, 6);
    cfg.K = pick(1, 4);
    cfg.L = pick(1, 3);
    cfg.disable_intents = (seed % 8) & 1;
    cfg.disable_local_mask = (seed % 8) & 2;
    cfg.disable_disen_mask = (seed % 8) & 4;

    const long nnz = pick(std::max(I, J), std::max(I, J) + I * J / 2 - std::max(I, J));
    const auto raw = refimpl::gen_bipartite(I, J, nnz, 90000 + seed);
    const dccf::EdgeList edges(raw.begin(), raw.end());
    const auto graph = dccf::build_propagation_graph<double>(edges, I, J);
    const auto params = dccf::init_params<double>(I, J, cfg, 2000 + seed);

    dccf::Tape<double> tape;
    const auto trace = dccf::forward(tape, params, cfg, graph, false);
    const auto [fu, fi] = dccf::final_embeddings(tape, trace);

    refimpl::ForwardFlags flags;
    flags.intents = cfg.use_intents();
    flags.local_mask = cfg.use_local_mask();
    flags.disen_mask = cfg.use_disen_mask();
    const auto ref = refimpl::dense_forward(
        I, J, cfg.L, raw, refimpl::from_matrix(params.e0_user),
        refimpl::from_matrix(params.e0_item), refimpl::from_matrix(params.proto_user),
        refimpl::from_matrix(params.proto_item), flags);

    for (int i = 0; i < I; ++i) {
      for (int k = 0; k < cfg.d; ++k) {
        max_diff = std::max(max_diff, std::abs(fu.at(i, k) - ref.final_user[i][k]));
      }
    }
    for (int j = 0; j < J; ++j) {
      for (int k = 0; k < cfg.d; ++k) {
        max_diff = std::max(max_diff, std::abs(fi.at(j, k) - ref.final_item[j][k]));
      }
    }
    ++instances;
  }
  Outcome o;
  o.pass = max_diff <= 1e-6;
  o.detail = std::to_string(instances) + " seeded instances, max abs diff " + fmt(max_diff) +
             " (tol 1e-6)";
  return o;
}

// --- criterion 3: every view ablated leaves plain propagation -----------------

Outcome c3_plain_propagation() {
  double max_diff = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const int I = 9, J = 11;
    dccf::ModelConfig cfg;
    cfg.d = 4;
    cfg.K = 3;
    cfg.L = 3;
    cfg.disable_intents = true;
    cfg.disable_local_mask = true;
    cfg.disable_disen_mask = true;

    const auto raw = refimpl::gen_bipartite(I, J, 28 + trial, 500 + trial);
    const dccf::EdgeList edges(raw.begin(), raw.end());
    const auto graph = dccf::build_propagation_graph<double>(edges, I, J);
    const auto params = dccf::init_params<double>(I, J, cfg, 600 + trial);

    dccf::Tape<double> tape;
    const auto trace = dccf::forward(tape, params, cfg, graph, false);

    // Independent closed form: e_next = e_prev + normalized-adjacency product.
    std::vector<double> du(I, 0.0), dv(J, 0.0);
    for (const auto& [u, i] : edges) {
      du[u] += 1.0;
      dv[i] += 1.0;
    }
    auto eu = refimpl::from_matrix(params.e0_user);
    auto ev = refimpl::from_matrix(params.e0_item);
    auto sum_u = eu, sum_v = ev;
    for (int l = 0; l < cfg.L; ++l) {
      auto zu = refimpl::zeros(I, cfg.d), zv = refimpl::zeros(J, cfg.d);
      for (const auto& [u, i] : edges) {
        const double w = 1.0 / std::sqrt(du[u] * dv[i]);
        for (int k = 0; k < cfg.d; ++k) {
          zu[u][k] += w * ev[i][k];
          zv[i][k] += w * eu[u][k];
        }
      }
      for (int u = 0; u < I; ++u) {
        for (int k = 0; k < cfg.d; ++k) eu[u][k] += zu[u][k];
      }
      for (int i = 0; i < J; ++i) {
        for (int k = 0; k < cfg.d; ++k) ev[i][k] += zv[i][k];
      }
      const auto step_u = tape.value_matrix(trace.steps[l].e_user);
      const auto step_v = tape.value_matrix(trace.steps[l].e_item);
      for (int u = 0; u < I; ++u) {
        for (int k = 0; k < cfg.d; ++k) {
          max_diff = std::max(max_diff, std::abs(step_u.at(u, k) - eu[u][k]));
          sum_u[u][k] += eu[u][k];
        }
      }
      for (int i = 0; i < J; ++i) {
        for (int k = 0; k < cfg.d; ++k) {
          max_diff = std::max(max_diff, std::abs(step_v.at(i, k) - ev[i][k]));
          sum_v[i][k] += ev[i][k];
        }
      }
    }
    const auto [fu, fi] = dccf::final_embeddings(tape, trace);
    for (int u = 0; u < I; ++u) {
      for (int k = 0; k < cfg.d; ++k) {
        max_diff = std::max(max_diff, std::abs(fu.at(u, k) - sum_u[u][k]));
      }
    }
    for (int i = 0; i < J; ++i) {
      for (int k = 0; k < cfg.d; ++k) {
        max_diff = std::max(max_diff, std::abs(fi.at(i, k) - sum_v[i][k]));
      }
    }
  }
  Outcome o;
  o.pass = max_diff <= 1e-7;
  o.detail = "max abs diff " + fmt(max_diff) + " vs closed-form propagation (tol 1e-7)";
  return o;
}

// --- criterion 4: ranking metrics vs independent reference --------------------

Outcome c4_metrics() {
  std::mt19937_64 gen(777);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double max_diff = 0.0;
  bool ranks_equal = true;
  for (int inst = 0; inst < 200; ++inst) {
    const int m = 20 + static_cast<int>(gen() % 41);
    std::vector<double> scores(m);
    for (auto& v : scores) v = unit(gen);
    if (inst % 4 == 0) {  // force score ties
      for (int j = 1; j < m; j += 2) scores[j] = scores[j - 1];
    }
    std::vector<int> excl, test;
    for (int j = 0; j < m; ++j) {
      if (unit(gen) < 0.15) excl.push_back(j);
      if (unit(gen) < 0.2) test.push_back(j);
    }
    if (test.empty()) test.push_back(static_cast<int>(gen() % m));
    const int n = 1 + static_cast<int>(gen() % 15);

    const auto top = dccf::rank_items(scores.data(), m, excl, n, true);
    if (top != refimpl::ref_rank(scores, excl, n)) ranks_equal = false;
    max_diff = std::max(
        max_diff, std::abs(dccf::recall_at_n(top, test) - refimpl::ref_recall(top, test)));
    max_diff = std::max(
        max_diff, std::abs(dccf::ndcg_at_n(top, test, n) - refimpl::ref_ndcg(top, test, n)));
  }
  const double hand = std::abs(dccf::ndcg_at_n({8, 9, 4}, {4}, 3) - 0.5);
  Outcome o;
  o.pass = ranks_equal && max_diff <= 1e-10 && hand <= 1e-12;
  o.detail = "200 instances, max metric diff " + fmt(max_diff) +
             " (tol 1e-10); single-hit-at-third-slot case off by " + fmt(hand);
  return o;
}

// --- criterion 5: contrastive gradients weight hard negatives -----------------

// With the softmax denominator held fixed, the gradient pushed onto a
// negative view row must scale as sqrt(1 - s^2) * exp(s / tau) in its cosine
// similarity s to the anchor.
Outcome c5_hard_negatives() {
  const double tau = 0.2;
  const int b = 8, d = 3;
  // Budget for exp(s/tau) + exp(c/tau) chosen so the compensator similarity
  // c stays inside [-1, 1] across the whole sweep of s.
  const double budget = std::exp(0.99 / tau) + std::exp(-1.0 / tau) + 0.01;

  std::vector<double> ratios;
  for (int inst = 0; inst < 20; ++inst) {
    const double s = -0.99 + 1.98 * static_cast<double>(inst) / 19.0;
    const double comp = tau * std::log(budget - std::exp(s / tau));

    dccf::Matrix<double> anchor(1, d);
    anchor.data = {1.0, 0.0, 0.0};
    dccf::Matrix<double> views(b, d);
    auto set_row = [&views](int r, double cos_to_anchor) {
      views.at(r, 0) = cos_to_anchor;
      views.at(r, 1) = std::sqrt(1.0 - cos_to_anchor * cos_to_anchor);
      views.at(r, 2) = 0.0;
    };
    set_row(0, 0.5);   // matching view
    set_row(1, comp);  // keeps the softmax denominator constant across instances
    for (int r = 2; r < b - 1; ++r) set_row(r, 0.0);
    set_row(b - 1, s);  // the probed negative

    dccf::Tape<double> tape;
    const auto a_id = tape.leaf(anchor, false);
    const auto v_id = tape.leaf(views, true);
    const auto logits = tape.scale(
        tape.matmul_nt(tape.row_l2_normalize(a_id), tape.row_l2_normalize(v_id)), 1.0 / tau);
    const auto loss = tape.logsumexp_rows(logits);
    tape.backward(loss);

    const auto g = tape.gradient(v_id);
    double norm_sq = 0.0;
    for (int k = 0; k < d; ++k) {
      const double gk = g[static_cast<std::size_t>(b - 1) * d + k];
      norm_sq += gk * gk;
    }
    ratios.push_back(std::sqrt(norm_sq) /
                     (std::sqrt(1.0 - s * s) * std::exp(s / tau)));
  }
  const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
  const double spread = (*hi - *lo) / ((*hi + *lo) / 2.0);
  Outcome o;
  o.pass = spread <= 0.01;
  o.detail = "20 instances at batch 8, ratio spread " + fmt(spread) + " (cap 1%)";
  return o;
}

// --- criterion 6: structural invariants ----------------------------------------

Outcome c6_invariants() {
  std::mt19937_64 gen(6001);
  std::uniform_real_distribution<double> wide(-3.0, 3.0);
  std::string fail;

  // (a) intent-relevance rows are probability simplices.
  for (int t = 0; t < 20 && fail.empty(); ++t) {
    dccf::Matrix<double> e(30, 5), c(7, 5);
    for (auto& v : e.data) v = wide(gen);
    for (auto& v : c.data) v = wide(gen);
    const auto p = dccf::intent_relevance(e, c);
    for (int i = 0; i < p.rows; ++i) {
      double sum = 0.0;
      for (int k = 0; k < p.cols; ++k) {
        if (p.at(i, k) < -1e-9 || p.at(i, k) > 1.0 + 1e-9) fail = "relevance entry outside [0,1]";
        sum += p.at(i, k);
      }
      if (std::abs(sum - 1.0) > 1e-6) fail = "relevance row sum off by > 1e-6";
    }
  }

  // (b) edge masks stay inside [0, 1].
  for (int t = 0; t < 20 && fail.empty(); ++t) {
    dccf::Matrix<double> u(12, 4), v(15, 4);
    for (auto& x : u.data) x = wide(gen);
    for (auto& x : v.data) x = wide(gen);
    for (int k = 0; k < 4; ++k) u.at(0, k) *= 1e-6;  // near-zero row
    dccf::EdgeList edges;
    for (int i = 0; i < 12; ++i) edges.emplace_back(i, static_cast<int>(gen() % 15));
    const auto m = dccf::edge_masks(u, v, edges);
    for (double x : m) {
      if (x < -1e-9 || x > 1.0 + 1e-6) fail = "edge mask outside [0, 1]";
    }
  }

  // (c) mask-weighted adjacency rows are normalized.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int t = 0; t < 20 && fail.empty(); ++t) {
    const auto raw = refimpl::gen_bipartite(10, 13, 40, 6100 + t);
    const dccf::EdgeList edges(raw.begin(), raw.end());
    std::vector<double> mask(edges.size());
    for (auto& x : mask) x = unit(gen) < 0.3 ? 0.0 : 0.1 + 0.9 * unit(gen);
    for (const auto side : {dccf::MaskSide::kUser, dccf::MaskSide::kItem}) {
      const auto m = dccf::masked_row_normalize<double>(edges, mask, 10, 13, side);
      for (int r = 0; r < m.num_rows; ++r) {
        double sum = 0.0;
        for (int e2 = m.row_ptr[r]; e2 < m.row_ptr[r + 1]; ++e2) sum += m.values[e2];
        if (sum != 0.0 && std::abs(sum - 1.0) > 1e-5) fail = "normalized row sum off by > 1e-5";
      }
    }
  }

  // (d) a single-row contrastive batch is exactly zero.
  if (fail.empty()) {
    dccf::Tape<double> td;
    dccf::Matrix<double> a(1, 4), v(1, 4);
    a.data = {0.3, -0.1, 0.7, 0.2};
    v.data = {1.0, 2.0, -0.5, 0.25};
    if (td.value(dccf::infonce(td, td.leaf(a, false), td.leaf(v, false), 0.2))[0] != 0.0) {
      fail = "single-row batch loss is not exactly zero";
    }
    dccf::Tape<float> tf;
    dccf::Matrix<float> af(1, 3), vf(1, 3);
    af.data = {0.5f, -1.0f, 2.0f};
    vf.data = {0.25f, 0.75f, -0.5f};
    if (tf.value(dccf::infonce(tf, tf.leaf(af, false), tf.leaf(vf, false), 0.2))[0] != 0.0f) {
      fail = "single-row batch loss is not exactly zero at f32";
    }
  }

  // (e) embedding spread matches the pairwise reference.
  double mad_diff = 0.0;
  for (int t = 0; t < 10 && fail.empty(); ++t) {
    const int n = 5 + t, dd = 3 + t % 3;
    dccf::Matrix<double> m(n, dd);
    refimpl::Mat r = refimpl::zeros(n, dd);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < dd; ++k) m.at(i, k) = r[i][k] = wide(gen);
    }
    mad_diff = std::max(mad_diff, std::abs(dccf::mad(m) - refimpl::ref_mad(r)));
    if (mad_diff > 1e-10) fail = "spread disagrees with reference by > 1e-10";
  }

  // (f) identical rows have zero spread.
  if (fail.empty()) {
    dccf::Matrix<double> m(8, 4);
    for (int i = 0; i < 8; ++i) {
      m.at(i, 0) = 1.2;
      m.at(i, 1) = -0.3;
      m.at(i, 2) = 0.0;
      m.at(i, 3) = 2.5;
    }
    if (std::abs(dccf::mad(m)) > 1e-12) fail = "identical rows have nonzero spread";
  }

  Outcome o;
  o.pass = fail.empty();
  o.detail = fail.empty()
                 ? "simplex, mask range, row sums, single-row zero, spread oracle, collapse"
                 : fail;
  return o;
}

// --- criterion 7: learning signal on a two-community dataset -------------------

Outcome c7_two_block() {
  dccf::TwoBlockConfig tb;  // 200 x 200, dense blocks, sparse cross edges
  const auto all = dccf::synthetic_two_block(tb, 4242);
  dccf::EdgeList train, test;
  dccf::per_user_holdout(all, 0.2, 4243, train, test);
  const auto ds = dccf::build_dataset(train, test);

  const dccf::ModelConfig mcfg;
  const dccf::LossConfig lcfg;
  dccf::TrainConfig tcfg;
  const dccf::EvalOptions eopt;
  const auto params = dccf::init_params<float>(ds.num_users, ds.num_items, mcfg, tcfg.seed);

  dccf::TrainConfig untrained_cfg = tcfg;
  untrained_cfg.epochs = 0;
  const auto base = dccf::fit<float>(params, ds, mcfg, lcfg, untrained_cfg, eopt, 0);
  const double untrained = base.best_metric;

  const double t0 = now_seconds();
  const auto fit = dccf::fit<float>(params, ds, mcfg, lcfg, tcfg, eopt, 0);
  const double secs = now_seconds() - t0;
  const double trained = fit.best_metric;

  // Context for the verdict: the best ranking available to any model on this
  // generator (rank the user's block first, popular items within it).
  std::vector<double> item_deg(ds.num_items, 0.0);
  for (const auto& [u, i] : ds.train_edges) item_deg[i] += 1.0;
  double oracle_sum = 0.0;
  int oracle_users = 0;
  std::vector<double> scores(ds.num_items);
  for (int u = 0; u < ds.num_users; ++u) {
    if (ds.test_items.at(u).empty()) continue;
    for (int i = 0; i < ds.num_items; ++i) {
      const bool same_block = (u < tb.users / 2) == (i < tb.items / 2);
      scores[i] = (same_block ? 1000.0 : 0.0) + item_deg[i];
    }
    const auto top = dccf::rank_items(scores.data(), ds.num_items, ds.train_items.at(u), 20, true);
    oracle_sum += dccf::recall_at_n(top, ds.test_items.at(u));
    ++oracle_users;
  }
  const double oracle = oracle_sum / oracle_users;

  Outcome o;
  o.pass = untrained > 0.0 ? trained >= 2.0 * untrained : trained > 0.0;
  o.pass = o.pass && secs <= 300.0;
  o.detail = "test recall@20 " + fmt(untrained) + " untrained vs " + fmt(trained) +
             " trained (need 2x) in " + fmt(secs) + "s (cap 300s); structure-oracle ceiling " +
             fmt(oracle);
  return o;
}

// --- criterion 8: epoch cost scales at most linearly in the edge count ---------

Outcome c8_scaling() {
  auto epoch_seconds = [](long nnz, std::uint64_t seed) {
    auto raw = refimpl::gen_bipartite(400, 400, nnz, seed);
    raw.emplace_back(0, 0);
    raw.emplace_back(399, 399);  // pin the index space to 400 x 400
    const auto ds = dccf::build_dataset(dccf::EdgeList(raw.begin(), raw.end()), {});
    dccf::ModelConfig mcfg;
    mcfg.d = 16;
    mcfg.K = 16;
    mcfg.L = 2;
    const dccf::LossConfig lcfg;
    dccf::TrainConfig tcfg;
    auto params = dccf::init_params<float>(ds.num_users, ds.num_items, mcfg, 5);
    auto adam = dccf::init_adam(params, tcfg);
    const auto graph = dccf::build_propagation_graph<float>(ds);

    double best = 1e100;
    for (int rep = 0; rep < 4; ++rep) {  // first pass is warmup
      dccf::Rng rng(dccf::mix_seed(9, static_cast<std::uint64_t>(rep)));
      const auto er = dccf::train_epoch(params, adam, ds, graph, mcfg, lcfg, 400, rng);
      if (rep > 0) best = std::min(best, er.seconds);
    }
    return best;
  };

  const double t_small = epoch_seconds(6000, 31337);
  const double t_large = epoch_seconds(12000, 31338);
  const double ratio = t_large / t_small;
  Outcome o;
  o.pass = ratio <= 2.5;
  o.detail = "per-epoch " + fmt(t_small) + "s at 6k edges vs " + fmt(t_large) +
             "s at 12k edges, ratio " + fmt(ratio) + " (cap 2.5)";
  return o;
}

// --- criterion 9: the README documents a full-scale run recipe -----------------

Outcome c9_readme() {
  const std::string path = std::string(DCCF_SOURCE_DIR) + "/README.md";
  std::ifstream f(path);
  Outcome o;
  if (!f) {
    o.detail = "cannot open " + path;
    return o;
  }
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line[0] == '#' && line.find("Full-scale") != std::string::npos) {
      o.pass = true;
      break;
    }
  }
  o.detail = o.pass ? "README has a Full-scale run recipe section"
                    : "no heading containing \"Full-scale\" in README.md";
  return o;
}

// --- criterion 10: identical reruns write identical artifacts ------------------

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

Outcome c10_reruns() {
  fs::create_directories("acc_out");
  dccf::TwoBlockConfig tb;
  tb.users = 40;
  tb.items = 40;
  tb.p_in = 0.3;
  tb.p_cross = 0.02;
  const auto all = dccf::synthetic_two_block(tb, 99);
  dccf::EdgeList train, test;
  dccf::per_user_holdout(all, 0.25, 100, train, test);
  dccf::write_adjacency_list("acc_out/train.txt", train);
  dccf::write_adjacency_list("acc_out/test.txt", test);

  auto run = [](const std::string& out) {
    const std::string cmd = std::string(DCCF_CLI_PATH) +
                            " train --train acc_out/train.txt --test acc_out/test.txt"
                            " --f64 --threads 1 --d 8 --intents 8 --layers 2 --epochs 3"
                            " --eval-every 2 --batch 256 --seed 77 --out " +
                            out + " > " + out + ".log 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) && WEXITSTATUS(status) == 0;
  };
  Outcome o;
  if (!run("acc_out/rerun_a") || !run("acc_out/rerun_b")) {
    o.detail = "training run failed; see acc_out/rerun_*.log";
    return o;
  }
  const std::string ha = slurp("acc_out/rerun_a/history.json");
  const std::string hb = slurp("acc_out/rerun_b/history.json");
  const bool ckpt_same =
      slurp("acc_out/rerun_a/checkpoint.bin") == slurp("acc_out/rerun_b/checkpoint.bin");
  o.pass = !ha.empty() && ha == hb;
  o.detail = std::string("history files ") + (o.pass ? "byte-identical" : "differ") +
             "; checkpoints " + (ckpt_same ? "byte-identical" : "differ");
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int number;
    const char* what;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "full-loss gradients match central finite differences", c1_gradients},
      {2, "forward propagation matches a dense reference across seeds", c2_dense_equivalence},
      {3, "all views ablated reduces to plain graph propagation", c3_plain_propagation},
      {4, "ranking metrics match an independent reference", c4_metrics},
      {5, "contrastive gradient magnitude follows the hard-negative law", c5_hard_negatives},
      {6, "structural invariants hold", c6_invariants},
      {7, "training lifts two-community test recall at least 2x", c7_two_block},
      {8, "per-epoch cost grows at most linearly with the edge count", c8_scaling},
      {9, "README documents a full-scale run recipe", c9_readme},
      {10, "identical seeded reruns produce byte-identical history files", c10_reruns},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    std::cout << (o.pass ? "[PASS]" : "[FAIL]") << " criterion " << c.number << ": " << c.what
              << " — " << o.detail << "\n";
    if (!o.pass) ++failures;
    if (c.number == 9) {
      std::cout << "       note: full-scale accuracy tables depend on external datasets and "
                   "hardware; the recipe is checked, the numbers are not gated\n";
    }
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed\n";
  return failures == 0 ? 0 : 1;
}
