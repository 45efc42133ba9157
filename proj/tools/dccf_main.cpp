#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dccf/evaluator.hpp"
#include "dccf/interactions.hpp"
#include "dccf/io.hpp"
#include "dccf/model.hpp"
#include "dccf/objectives.hpp"
#include "dccf/run_config.hpp"
#include "dccf/trainer.hpp"
#include "dccf/verify.hpp"

namespace {

using dccf::RunConfig;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Options shared by the commands that assemble a full run configuration.
struct CommonOpts {
  std::string config_path;
  std::optional<std::string> train_path, test_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, batch_size, eval_every, patience, layers, intents, dim, s_per_user;
  std::optional<double> lr, tau, lambda1, lambda2, lambda3;
  std::optional<std::vector<int>> cutoffs;
  std::optional<std::vector<long>> buckets;
  std::optional<int> threads, mad_cap;
  bool f64 = false;
  bool f32 = false;
  bool disable_intents = false;
  bool disable_local_mask = false;
  bool disable_disen_mask = false;
  bool detach_masks = false;
  bool cl_full_set = false;
  bool no_exclude_train = false;
  bool no_mad = false;
};

void add_common_options(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "JSON config file (defaults + overrides)");
  cmd->add_option("--train", o.train_path, "train adjacency-list file");
  cmd->add_option("--test", o.test_path, "test adjacency-list file");
  cmd->add_option("--out", o.out_dir, "output directory for artifacts");
  cmd->add_option("--seed", o.seed, "RNG seed");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--batch", o.batch_size, "users per batch");
  cmd->add_option("--eval-every", o.eval_every, "epochs between evaluations");
  cmd->add_option("--patience", o.patience, "evaluations without improvement before stopping");
  cmd->add_option("--d", o.dim, "embedding dimension");
  cmd->add_option("--intents", o.intents, "intent prototypes per side");
  cmd->add_option("--layers", o.layers, "propagation layers");
  cmd->add_option("--tau", o.tau, "contrastive temperature");
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--lambda1", o.lambda1, "contrastive loss weight");
  cmd->add_option("--lambda2", o.lambda2, "embedding L2 weight");
  cmd->add_option("--lambda3", o.lambda3, "prototype L2 weight");
  cmd->add_option("--s", o.s_per_user, "positive/negative pairs per batch user");
  cmd->add_option("--cutoffs", o.cutoffs, "ranking cutoffs, ascending")->delimiter(',');
  cmd->add_option("--buckets", o.buckets, "degree-bucket boundaries")->delimiter(',');
  cmd->add_option("--threads", o.threads, "evaluation worker threads");
  cmd->add_option("--mad-cap", o.mad_cap, "row-sample cap for the embedding-spread metric");
  cmd->add_flag("--f64", o.f64, "double-precision mode");
  cmd->add_flag("--f32", o.f32, "single-precision mode (default)");
  cmd->add_flag("--disable-intents", o.disable_intents, "remove the intent views");
  cmd->add_flag("--disable-local-mask", o.disable_local_mask, "remove the local-mask view");
  cmd->add_flag("--disable-disen-mask", o.disable_disen_mask, "remove the intent-mask view");
  cmd->add_flag("--detach-masks", o.detach_masks, "stop gradients at the edge masks");
  cmd->add_flag("--cl-full-set", o.cl_full_set, "contrast all entities instead of the batch");
  cmd->add_flag("--no-exclude-train", o.no_exclude_train, "rank train items too");
  cmd->add_flag("--no-mad", o.no_mad, "skip the embedding-spread metric");
}

RunConfig build_config(const CommonOpts& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) cfg = dccf::load_run_config(o.config_path);
  if (o.train_path) cfg.train_path = *o.train_path;
  if (o.test_path) cfg.test_path = *o.test_path;
  if (o.out_dir) cfg.out_dir = *o.out_dir;
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.batch_size) cfg.train.batch_size = *o.batch_size;
  if (o.eval_every) cfg.train.eval_every = *o.eval_every;
  if (o.patience) cfg.train.patience = *o.patience;
  if (o.dim) cfg.model.d = *o.dim;
  if (o.intents) cfg.model.K = *o.intents;
  if (o.layers) cfg.model.L = *o.layers;
  if (o.tau) cfg.model.tau = *o.tau;
  if (o.lr) cfg.train.lr = *o.lr;
  if (o.lambda1) cfg.loss.lambda1 = *o.lambda1;
  if (o.lambda2) cfg.loss.lambda2 = *o.lambda2;
  if (o.lambda3) cfg.loss.lambda3 = *o.lambda3;
  if (o.s_per_user) cfg.loss.s_per_user = *o.s_per_user;
  if (o.cutoffs) cfg.eval.cutoffs = *o.cutoffs;
  if (o.buckets) cfg.eval.bucket_boundaries = *o.buckets;
  if (o.threads) cfg.eval.num_threads = *o.threads;
  if (o.mad_cap) cfg.eval.mad_sample_cap = *o.mad_cap;
  if (o.f64 && o.f32) throw std::runtime_error("config: --f32 and --f64 are mutually exclusive");
  if (o.f64) cfg.precision = "f64";
  if (o.f32) cfg.precision = "f32";
  if (o.disable_intents) cfg.model.disable_intents = true;
  if (o.disable_local_mask) cfg.model.disable_local_mask = true;
  if (o.disable_disen_mask) cfg.model.disable_disen_mask = true;
  if (o.detach_masks) cfg.model.detach_masks = true;
  if (o.cl_full_set) cfg.loss.cl_full_set = true;
  if (o.no_exclude_train) cfg.eval.exclude_train_items = false;
  if (o.no_mad) cfg.eval.compute_mad = false;

  // DCCF_THREADS caps worker parallelism regardless of config.
  if (const char* env = std::getenv("DCCF_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end == nullptr || *end != '\0' || cap < 1) {
      throw std::runtime_error("config: DCCF_THREADS must be a positive integer");
    }
    cfg.eval.num_threads = static_cast<int>(std::min<long>(cfg.eval.num_threads, cap));
  }

  cfg.validate();
  return cfg;
}

dccf::InteractionDataset load_data(const RunConfig& cfg, bool need_test) {
  if (cfg.train_path.empty()) {
    throw std::runtime_error("config: a train file is required (--train or data.train)");
  }
  dccf::LoadResult train = dccf::load_adjacency_list(cfg.train_path, "train");
  dccf::EdgeList test_edges;
  if (!cfg.test_path.empty()) {
    test_edges = dccf::load_adjacency_list(cfg.test_path, "test").edges;
  } else if (need_test) {
    throw std::runtime_error("config: a test file is required (--test or data.test)");
  }
  return dccf::build_dataset(std::move(train.edges), std::move(test_edges));
}

void print_metric_table(std::ostream& os, const dccf::EvalReport& report) {
  for (std::size_t c = 0; c < report.cutoffs.size(); ++c) {
    os << (c == 0 ? "" : "\t") << "Recall@" << report.cutoffs[c] << "\tNDCG@" << report.cutoffs[c];
  }
  os << "\n";
  for (std::size_t c = 0; c < report.cutoffs.size(); ++c) {
    os << (c == 0 ? "" : "\t") << report.recall[c] << "\t" << report.ndcg[c];
  }
  os << "\n";
}

std::string artifact_path(const RunConfig& cfg, const std::string& name) {
  return (std::filesystem::path(cfg.out_dir) / name).string();
}

// --- train ------------------------------------------------------------------

struct TrainOpts {
  CommonOpts common;
  std::string resume_path;
};

template <class S>
int run_train(const RunConfig& cfg, const TrainOpts& o) {
  dccf::InteractionDataset ds;
  dccf::ModelParams<S> params;
  dccf::AdamState<S> adam;
  const dccf::AdamState<S>* resume_adam = nullptr;
  int start_epoch = 0;
  const std::uint64_t fingerprint = dccf::config_fingerprint(cfg);
  try {
    ds = load_data(cfg, /*need_test=*/true);
    std::filesystem::create_directories(cfg.out_dir);
    if (!o.resume_path.empty()) {
      dccf::Checkpoint<S> ckpt = dccf::load_checkpoint<S>(o.resume_path);
      if (ckpt.config_fingerprint != fingerprint) {
        throw std::runtime_error(
            "checkpoint: fingerprint mismatch on resume (the checkpoint was written under a "
            "different configuration): " +
            o.resume_path);
      }
      if (ckpt.params.e0_user.rows != ds.num_users || ckpt.params.e0_item.rows != ds.num_items) {
        throw std::runtime_error("checkpoint: dimensions do not match the dataset: " +
                                 o.resume_path);
      }
      params = std::move(ckpt.params);
      adam = std::move(ckpt.adam);
      resume_adam = &adam;
      start_epoch = ckpt.epoch;
    } else {
      params = dccf::init_params<S>(ds.num_users, ds.num_items, cfg.model, cfg.train.seed);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    dccf::FitResult<S> result = dccf::fit<S>(std::move(params), ds, cfg.model, cfg.loss,
                                             cfg.train, cfg.eval, fingerprint, resume_adam,
                                             start_epoch, &std::cerr);

    dccf::save_checkpoint(result.best, artifact_path(cfg, "checkpoint.bin"));

    dccf::HistoryMeta meta;
    meta.config_fingerprint = fingerprint;
    meta.seed = cfg.train.seed;
    meta.precision = cfg.precision;
    meta.selection_cutoff = cfg.train.selection_cutoff;
    meta.stats = dccf::compute_stats(ds);
    dccf::write_json_file(artifact_path(cfg, "history.json"),
                          dccf::history_to_json(result, meta));

    const dccf::EvalReport* best_eval = nullptr;
    for (const auto& entry : result.history) {
      if (entry.has_eval && entry.epoch == result.best_epoch) best_eval = &entry.eval;
    }
    if (best_eval) {
      dccf::json report = dccf::eval_report_to_json(*best_eval);
      report["config_fingerprint"] = dccf::fingerprint_hex(fingerprint);
      report["epoch"] = result.best_epoch;
      dccf::write_json_file(artifact_path(cfg, "report.json"), report);
      print_metric_table(std::cout, *best_eval);
    }
    std::cerr << "best epoch " << result.best_epoch << " recall@" << cfg.train.selection_cutoff
              << " " << result.best_metric << (result.early_stopped ? " (early stop)" : "")
              << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_train(const TrainOpts& o) {
  RunConfig cfg;
  try {
    cfg = build_config(o.common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return cfg.precision == "f64" ? run_train<double>(cfg, o) : run_train<float>(cfg, o);
}

// --- evaluate ----------------------------------------------------------------

struct EvaluateOpts {
  CommonOpts common;
  std::string checkpoint_path;
  std::string report_path;
};

template <class S>
int run_evaluate(RunConfig cfg, const EvaluateOpts& o) {
  dccf::InteractionDataset ds;
  dccf::Checkpoint<S> ckpt;
  try {
    ds = load_data(cfg, /*need_test=*/true);
    ckpt = dccf::load_checkpoint<S>(o.checkpoint_path);
    cfg.model.d = ckpt.params.e0_user.cols;
    cfg.model.K = ckpt.params.proto_user.rows;
    cfg.validate();
    if (ckpt.params.e0_user.rows != ds.num_users || ckpt.params.e0_item.rows != ds.num_items) {
      throw std::runtime_error(
          "evaluate: checkpoint dimensions (" + std::to_string(ckpt.params.e0_user.rows) +
          " users, " + std::to_string(ckpt.params.e0_item.rows) + " items) do not match dataset (" +
          std::to_string(ds.num_users) + " users, " + std::to_string(ds.num_items) + " items)");
    }
    if (ckpt.config_fingerprint != dccf::config_fingerprint(cfg)) {
      std::cerr << "warning: checkpoint fingerprint differs from the current configuration; "
                   "pass the training config to reproduce its semantics\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    const dccf::PropagationGraph<S> graph = dccf::build_propagation_graph<S>(ds);
    dccf::Tape<S> tape;
    dccf::ForwardTrace trace = dccf::forward(tape, ckpt.params, cfg.model, graph, false);
    auto [user_emb, item_emb] = dccf::final_embeddings(tape, trace);
    const dccf::EvalReport report = dccf::evaluate_all(user_emb, item_emb, ds, cfg.eval);

    print_metric_table(std::cout, report);
    dccf::json j = dccf::eval_report_to_json(report);
    j["config_fingerprint"] = dccf::fingerprint_hex(ckpt.config_fingerprint);
    j["epoch"] = ckpt.epoch;
    const std::string out = o.report_path.empty() ? artifact_path(cfg, "report.json")
                                                  : o.report_path;
    std::filesystem::create_directories(std::filesystem::path(out).parent_path().empty()
                                            ? "."
                                            : std::filesystem::path(out).parent_path().string());
    dccf::write_json_file(out, j);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_evaluate(const EvaluateOpts& o) {
  RunConfig cfg;
  int scalar = 0;
  try {
    cfg = build_config(o.common);
    scalar = dccf::peek_checkpoint_scalar_size(o.checkpoint_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return scalar == 8 ? run_evaluate<double>(cfg, o) : run_evaluate<float>(cfg, o);
}

// --- ablate -------------------------------------------------------------------

struct AblateOpts {
  CommonOpts common;
  std::vector<std::string> variants = {"full", "-Disen", "-LocalR", "-DisenR", "-DisenG",
                                       "-AllAda"};
};

void apply_variant_token(RunConfig& cfg, const std::string& token) {
  if (token == "full") return;
  if (token == "-Disen") {
    cfg.model.disable_intents = true;
  } else if (token == "-LocalR") {
    cfg.model.disable_local_mask = true;
  } else if (token == "-DisenR") {
    cfg.model.disable_disen_mask = true;
  } else if (token == "-DisenG") {
    cfg.loss.drop_cl_disen = true;
  } else if (token == "-AllAda") {
    cfg.loss.drop_cl_masked = true;
  } else {
    throw std::runtime_error("ablate: unknown variant \"" + token +
                             "\" (valid: full, -Disen, -LocalR, -DisenR, -DisenG, -AllAda; "
                             "combine with '+')");
  }
}

RunConfig variant_config(const RunConfig& base, const std::string& name) {
  RunConfig cfg = base;
  std::size_t start = 0;
  while (start <= name.size()) {
    const std::size_t plus = name.find('+', start);
    const std::string token =
        name.substr(start, plus == std::string::npos ? std::string::npos : plus - start);
    if (token.empty()) throw std::runtime_error("ablate: empty variant token in \"" + name + "\"");
    apply_variant_token(cfg, token);
    if (plus == std::string::npos) break;
    start = plus + 1;
  }
  return cfg;
}

template <class S>
int run_ablate(const RunConfig& base, const AblateOpts& o) {
  dccf::InteractionDataset ds;
  std::vector<RunConfig> configs;
  try {
    ds = load_data(base, /*need_test=*/true);
    std::filesystem::create_directories(base.out_dir);
    for (const std::string& name : o.variants) configs.push_back(variant_config(base, name));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    int sel = 0;
    for (std::size_t c = 0; c < base.eval.cutoffs.size(); ++c) {
      if (base.eval.cutoffs[c] == base.train.selection_cutoff) sel = static_cast<int>(c);
    }

    dccf::json rows = dccf::json::array();
    std::cout << "variant\tRecall@" << base.train.selection_cutoff << "\tNDCG@"
              << base.train.selection_cutoff << "\n";
    for (std::size_t i = 0; i < o.variants.size(); ++i) {
      const RunConfig& cfg = configs[i];
      const std::uint64_t fingerprint = dccf::config_fingerprint(cfg);
      dccf::ModelParams<S> params =
          dccf::init_params<S>(ds.num_users, ds.num_items, cfg.model, cfg.train.seed);
      dccf::FitResult<S> result = dccf::fit<S>(std::move(params), ds, cfg.model, cfg.loss,
                                               cfg.train, cfg.eval, fingerprint);
      const dccf::EvalReport* best_eval = nullptr;
      const dccf::LossBreakdown* last_loss = nullptr;
      for (const auto& entry : result.history) {
        if (entry.has_eval && entry.epoch == result.best_epoch) best_eval = &entry.eval;
        if (entry.has_loss) last_loss = &entry.loss;
      }
      const double recall = best_eval ? best_eval->recall[sel] : 0.0;
      const double ndcg = best_eval ? best_eval->ndcg[sel] : 0.0;
      std::cout << o.variants[i] << "\t" << recall << "\t" << ndcg << "\n";
      dccf::json row{{"variant", o.variants[i]},
                     {"recall", recall},
                     {"ndcg", ndcg},
                     {"best_epoch", result.best_epoch},
                     {"config_fingerprint", dccf::fingerprint_hex(fingerprint)}};
      if (last_loss) row["final_loss"] = dccf::loss_to_json(*last_loss);
      rows.push_back(std::move(row));
    }
    dccf::json out{{"selection_cutoff", base.train.selection_cutoff}, {"variants", rows}};
    dccf::write_json_file(artifact_path(base, "ablate.json"), out);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_ablate(const AblateOpts& o) {
  RunConfig cfg;
  try {
    cfg = build_config(o.common);
    for (const std::string& name : o.variants) (void)variant_config(cfg, name);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return cfg.precision == "f64" ? run_ablate<double>(cfg, o) : run_ablate<float>(cfg, o);
}

// --- grad-check ----------------------------------------------------------------

struct GradCheckOpts {
  dccf::ToyConfig toy;
  double step = 1e-5;
  double tolerance = 1e-4;
  bool detach_masks = false;
  bool inject_backward_bug = false;
};

int cmd_grad_check(const GradCheckOpts& o) {
  dccf::ToyInstance toy;
  try {
    if (o.toy.users > 16 || o.toy.items > 16) {
      throw std::runtime_error("grad-check: toy instance is capped at 16 users/items");
    }
    toy = dccf::make_toy_instance(o.toy);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    dccf::VerifyOptions vo;
    vo.step = o.step;
    vo.tolerance = o.tolerance;
    vo.detach_masks = o.detach_masks;
    vo.inject_backward_bug = o.inject_backward_bug;
    const dccf::GradCheckReport report = dccf::check_full_loss_gradients(toy, vo);
    std::cout << "parameter\tmax_rel_err\tentries\n";
    for (const auto& g : report.groups) {
      std::cout << g.name << "\t" << g.max_rel_err << "\t" << g.entries_checked << "\n";
    }
    if (report.pass) {
      std::cout << "PASS (max rel err " << report.max_rel_err << " <= " << report.tolerance
                << ")\n";
      return 0;
    }
    std::cout << "FAIL (max rel err " << report.max_rel_err << " > " << report.tolerance << ")\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

// --- stats ------------------------------------------------------------------------

struct StatsOpts {
  std::string train_path;
  std::string test_path;
  std::string out_path;
};

int cmd_stats(const StatsOpts& o) {
  try {
    dccf::LoadResult train = dccf::load_adjacency_list(o.train_path, "train");
    const long dups = train.duplicates_dropped;
    dccf::EdgeList test_edges;
    long test_dups = 0;
    if (!o.test_path.empty()) {
      dccf::LoadResult test = dccf::load_adjacency_list(o.test_path, "test");
      test_edges = std::move(test.edges);
      test_dups = test.duplicates_dropped;
    }
    const dccf::InteractionDataset ds =
        dccf::build_dataset(std::move(train.edges), std::move(test_edges));
    const dccf::DatasetStats stats = dccf::compute_stats(ds);
    std::cout << "users\t" << stats.num_users << "\n";
    std::cout << "items\t" << stats.num_items << "\n";
    std::cout << "interactions\t" << stats.num_interactions << "\n";
    std::cout << "density\t" << dccf::format_density(stats.density) << "\n";
    if (dups + test_dups > 0) std::cout << "duplicates_dropped\t" << (dups + test_dups) << "\n";
    if (ds.dropped_test_edges > 0) {
      std::cout << "test_edges_without_train_user\t" << ds.dropped_test_edges << "\n";
    }
    if (!o.out_path.empty()) {
      dccf::write_json_file(o.out_path, dccf::stats_to_json(stats));
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

// --- export-embeddings ----------------------------------------------------------

struct ExportOpts {
  CommonOpts common;
  std::string checkpoint_path;
  std::string prefix;
};

template <class S>
int run_export(RunConfig cfg, const ExportOpts& o) {
  dccf::InteractionDataset ds;
  dccf::Checkpoint<S> ckpt;
  std::string prefix;
  try {
    ds = load_data(cfg, /*need_test=*/false);
    ckpt = dccf::load_checkpoint<S>(o.checkpoint_path);
    cfg.model.d = ckpt.params.e0_user.cols;
    cfg.model.K = ckpt.params.proto_user.rows;
    cfg.validate();
    if (ckpt.params.e0_user.rows != ds.num_users || ckpt.params.e0_item.rows != ds.num_items) {
      throw std::runtime_error("export: checkpoint dimensions do not match the dataset: " +
                               o.checkpoint_path);
    }
    std::filesystem::create_directories(cfg.out_dir);
    prefix = o.prefix.empty() ? artifact_path(cfg, "export") : o.prefix;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    const dccf::PropagationGraph<S> graph = dccf::build_propagation_graph<S>(ds);
    dccf::Tape<S> tape;
    dccf::ForwardTrace trace = dccf::forward(tape, ckpt.params, cfg.model, graph, false);
    auto [user_emb, item_emb] = dccf::final_embeddings(tape, trace);
    dccf::save_embeddings(prefix + ".embeddings.bin", ckpt.params, &user_emb, &item_emb);
    std::cout << "wrote " << prefix << ".embeddings.bin\n";

    if (cfg.model.use_intents()) {
      dccf::Matrix<S> relevance;
      if (!trace.steps.empty()) {
        relevance = tape.value_matrix(trace.steps.back().p_user);
      } else {
        relevance = dccf::intent_relevance(ckpt.params.e0_user, ckpt.params.proto_user);
      }
      dccf::save_relevance(prefix + ".relevance.bin", relevance);
      std::cout << "wrote " << prefix << ".relevance.bin\n";
    } else {
      std::cerr << "note: intent views disabled; no relevance export\n";
    }

    const bool has_local = !trace.steps.empty() && trace.steps.back().local_mask != dccf::kNoNode;
    const bool has_intent =
        !trace.steps.empty() && trace.steps.back().intent_mask != dccf::kNoNode;
    if (has_local || has_intent) {
      std::vector<float> local_mask, intent_mask;
      if (has_local) {
        auto v = tape.value(trace.steps.back().local_mask);
        local_mask.assign(v.begin(), v.end());
      }
      if (has_intent) {
        auto v = tape.value(trace.steps.back().intent_mask);
        intent_mask.assign(v.begin(), v.end());
      }
      dccf::save_masks(prefix + ".masks.bin", graph.edges, has_local ? &local_mask : nullptr,
                       has_intent ? &intent_mask : nullptr);
      std::cout << "wrote " << prefix << ".masks.bin\n";
    } else {
      std::cerr << "note: no mask views at the final step; no mask export\n";
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_export(const ExportOpts& o) {
  RunConfig cfg;
  int scalar = 0;
  try {
    cfg = build_config(o.common);
    scalar = dccf::peek_checkpoint_scalar_size(o.checkpoint_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return scalar == 8 ? run_export<double>(cfg, o) : run_export<float>(cfg, o);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intent-aware graph collaborative filtering: training, evaluation, and "
               "verification tools"};
  app.require_subcommand(1);

  TrainOpts train_opts;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model and keep the best checkpoint");
  add_common_options(train_cmd, train_opts.common);
  train_cmd->add_option("--resume", train_opts.resume_path, "checkpoint to resume from");

  EvaluateOpts eval_opts;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on a test split");
  add_common_options(eval_cmd, eval_opts.common);
  eval_cmd->add_option("--checkpoint", eval_opts.checkpoint_path, "checkpoint file")->required();
  eval_cmd->add_option("--report", eval_opts.report_path, "report JSON path");

  AblateOpts ablate_opts;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "train and compare model variants");
  add_common_options(ablate_cmd, ablate_opts.common);
  ablate_cmd
      ->add_option("--variants", ablate_opts.variants,
                   "variants to run (full, -Disen, -LocalR, -DisenR, -DisenG, -AllAda; "
                   "'+' combines)")
      ->delimiter(',');

  GradCheckOpts gc_opts;
  CLI::App* gc_cmd = app.add_subcommand("grad-check",
                                        "finite-difference check of the full loss gradients");
  gc_cmd->add_option("--users", gc_opts.toy.users, "toy users (<= 16)");
  gc_cmd->add_option("--items", gc_opts.toy.items, "toy items (<= 16)");
  gc_cmd->add_option("--d", gc_opts.toy.d, "embedding dimension");
  gc_cmd->add_option("--intents", gc_opts.toy.K, "intent prototypes");
  gc_cmd->add_option("--layers", gc_opts.toy.L, "propagation layers");
  gc_cmd->add_option("--tau", gc_opts.toy.tau, "contrastive temperature");
  gc_cmd->add_option("--seed", gc_opts.toy.seed, "RNG seed");
  gc_cmd->add_option("--step", gc_opts.step, "finite-difference step");
  gc_cmd->add_option("--tolerance", gc_opts.tolerance, "max relative error allowed");
  gc_cmd->add_flag("--detach-masks", gc_opts.detach_masks, "stop gradients at the edge masks");
  gc_cmd->add_flag("--inject-backward-bug", gc_opts.inject_backward_bug)->group("");

  StatsOpts stats_opts;
  CLI::App* stats_cmd = app.add_subcommand("stats", "dataset statistics");
  stats_cmd->add_option("--train", stats_opts.train_path, "train adjacency-list file")->required();
  stats_cmd->add_option("--test", stats_opts.test_path, "test adjacency-list file");
  stats_cmd->add_option("--out", stats_opts.out_path, "stats JSON path");

  ExportOpts export_opts;
  CLI::App* export_cmd = app.add_subcommand(
      "export-embeddings", "export embeddings, intent relevance, and edge masks");
  add_common_options(export_cmd, export_opts.common);
  export_cmd->add_option("--checkpoint", export_opts.checkpoint_path, "checkpoint file")
      ->required();
  export_cmd->add_option("--prefix", export_opts.prefix, "output file prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (*train_cmd) return cmd_train(train_opts);
  if (*eval_cmd) return cmd_evaluate(eval_opts);
  if (*ablate_cmd) return cmd_ablate(ablate_opts);
  if (*gc_cmd) return cmd_grad_check(gc_opts);
  if (*stats_cmd) return cmd_stats(stats_opts);
  if (*export_cmd) return cmd_export(export_opts);
  return kExitUsage;
}
