#include "dccf/run_config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace dccf {

using json = nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& source, const std::string& msg) {
  throw std::runtime_error("config (" + source + "): " + msg);
}

void check_keys(const json& obj, const std::string& group,
                std::initializer_list<const char*> known, const std::string& source) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool ok = false;
    for (const char* k : known) {
      if (key == k) ok = true;
    }
    if (!ok) fail(source, "unknown key " + (group.empty() ? key : group + "." + key));
  }
}

template <class T>
void read_field(const json& obj, const char* key, T& out, const std::string& group,
                const std::string& source) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const std::exception&) {
    fail(source, "invalid value for " + (group.empty() ? std::string(key) : group + "." + key));
  }
}

}  // namespace

void RunConfig::validate() const {
  if (precision != "f32" && precision != "f64") {
    throw std::runtime_error("config: precision must be \"f32\" or \"f64\"");
  }
  model.validate();
  loss.validate();
  train.validate();
  eval.validate();
  bool found = false;
  for (int c : eval.cutoffs) {
    if (c == train.selection_cutoff) found = true;
  }
  if (!found) {
    throw std::runtime_error("config: selection cutoff " +
                             std::to_string(train.selection_cutoff) +
                             " must appear in eval.cutoffs");
  }
  for (long b : eval.bucket_boundaries) {
    if (b < 1) throw std::runtime_error("config: bucket boundaries must be >= 1");
  }
  for (std::size_t i = 1; i < eval.bucket_boundaries.size(); ++i) {
    if (eval.bucket_boundaries[i] <= eval.bucket_boundaries[i - 1]) {
      throw std::runtime_error("config: bucket boundaries must be strictly ascending");
    }
  }
}

void apply_config_json(RunConfig& cfg, const std::string& json_text, const std::string& source) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const std::exception& e) {
    fail(source, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(source, "top level must be an object");
  check_keys(j, "", {"data", "model", "loss", "train", "eval", "precision", "out_dir"}, source);

  read_field(j, "precision", cfg.precision, "", source);
  read_field(j, "out_dir", cfg.out_dir, "", source);

  if (j.contains("data")) {
    const json& d = j.at("data");
    check_keys(d, "data", {"train", "test"}, source);
    read_field(d, "train", cfg.train_path, "data", source);
    read_field(d, "test", cfg.test_path, "data", source);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model",
               {"d", "intents", "layers", "tau", "disable_intents", "disable_local_mask",
                "disable_disen_mask", "detach_masks"},
               source);
    read_field(m, "d", cfg.model.d, "model", source);
    read_field(m, "intents", cfg.model.K, "model", source);
    read_field(m, "layers", cfg.model.L, "model", source);
    read_field(m, "tau", cfg.model.tau, "model", source);
    read_field(m, "disable_intents", cfg.model.disable_intents, "model", source);
    read_field(m, "disable_local_mask", cfg.model.disable_local_mask, "model", source);
    read_field(m, "disable_disen_mask", cfg.model.disable_disen_mask, "model", source);
    read_field(m, "detach_masks", cfg.model.detach_masks, "model", source);
  }
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    check_keys(l, "loss",
               {"lambda1", "lambda2", "lambda3", "s_per_user", "cl_full_set", "drop_cl_disen",
                "drop_cl_masked"},
               source);
    read_field(l, "lambda1", cfg.loss.lambda1, "loss", source);
    read_field(l, "lambda2", cfg.loss.lambda2, "loss", source);
    read_field(l, "lambda3", cfg.loss.lambda3, "loss", source);
    read_field(l, "s_per_user", cfg.loss.s_per_user, "loss", source);
    read_field(l, "cl_full_set", cfg.loss.cl_full_set, "loss", source);
    read_field(l, "drop_cl_disen", cfg.loss.drop_cl_disen, "loss", source);
    read_field(l, "drop_cl_masked", cfg.loss.drop_cl_masked, "loss", source);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    check_keys(t, "train",
               {"epochs", "batch_size", "eval_every", "patience", "selection_cutoff", "seed",
                "lr", "beta1", "beta2", "eps"},
               source);
    read_field(t, "epochs", cfg.train.epochs, "train", source);
    read_field(t, "batch_size", cfg.train.batch_size, "train", source);
    read_field(t, "eval_every", cfg.train.eval_every, "train", source);
    read_field(t, "patience", cfg.train.patience, "train", source);
    read_field(t, "selection_cutoff", cfg.train.selection_cutoff, "train", source);
    read_field(t, "seed", cfg.train.seed, "train", source);
    read_field(t, "lr", cfg.train.lr, "train", source);
    read_field(t, "beta1", cfg.train.beta1, "train", source);
    read_field(t, "beta2", cfg.train.beta2, "train", source);
    read_field(t, "eps", cfg.train.eps, "train", source);
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, "eval",
               {"cutoffs", "exclude_train_items", "compute_mad", "mad_sample_cap",
                "bucket_boundaries", "threads"},
               source);
    read_field(e, "cutoffs", cfg.eval.cutoffs, "eval", source);
    read_field(e, "exclude_train_items", cfg.eval.exclude_train_items, "eval", source);
    read_field(e, "compute_mad", cfg.eval.compute_mad, "eval", source);
    read_field(e, "mad_sample_cap", cfg.eval.mad_sample_cap, "eval", source);
    read_field(e, "bucket_boundaries", cfg.eval.bucket_boundaries, "eval", source);
    read_field(e, "threads", cfg.eval.num_threads, "eval", source);
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  RunConfig cfg;
  apply_config_json(cfg, buf.str(), path);
  return cfg;
}

std::string canonical_config_json(const RunConfig& cfg) {
  json j;
  j["model"] = {{"d", cfg.model.d},
                {"intents", cfg.model.K},
                {"layers", cfg.model.L},
                {"tau", cfg.model.tau},
                {"disable_intents", cfg.model.disable_intents},
                {"disable_local_mask", cfg.model.disable_local_mask},
                {"disable_disen_mask", cfg.model.disable_disen_mask},
                {"detach_masks", cfg.model.detach_masks}};
  j["loss"] = {{"lambda1", cfg.loss.lambda1},
               {"lambda2", cfg.loss.lambda2},
               {"lambda3", cfg.loss.lambda3},
               {"s_per_user", cfg.loss.s_per_user},
               {"cl_full_set", cfg.loss.cl_full_set},
               {"drop_cl_disen", cfg.loss.drop_cl_disen},
               {"drop_cl_masked", cfg.loss.drop_cl_masked}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"eval_every", cfg.train.eval_every},
                {"patience", cfg.train.patience},
                {"selection_cutoff", cfg.train.selection_cutoff},
                {"seed", cfg.train.seed},
                {"lr", cfg.train.lr},
                {"beta1", cfg.train.beta1},
                {"beta2", cfg.train.beta2},
                {"eps", cfg.train.eps}};
  j["eval"] = {{"cutoffs", cfg.eval.cutoffs},
               {"exclude_train_items", cfg.eval.exclude_train_items},
               {"compute_mad", cfg.eval.compute_mad},
               {"mad_sample_cap", cfg.eval.mad_sample_cap},
               {"bucket_boundaries", cfg.eval.bucket_boundaries}};
  j["precision"] = cfg.precision;
  return j.dump();
}

std::uint64_t config_fingerprint(const RunConfig& cfg) {
  const std::string s = canonical_config_json(cfg);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace dccf
