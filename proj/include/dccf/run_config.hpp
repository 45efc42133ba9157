#pragma once

#include <cstdint>
#include <string>

#include "dccf/evaluator.hpp"
#include "dccf/model.hpp"
#include "dccf/objectives.hpp"
#include "dccf/trainer.hpp"

namespace dccf {

// Everything a run needs, assembled from defaults, an optional JSON config
// file, and command-line overrides (in that precedence order).
struct RunConfig {
  std::string train_path;
  std::string test_path;
  std::string out_dir = ".";
  std::string precision = "f32";  // "f32" or "f64"
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  EvalOptions eval;

  void validate() const;
};

// Parses a JSON config file over the defaults. Unknown keys are errors.
RunConfig load_run_config(const std::string& path);

// Applies one parsed JSON document onto an existing config (shared by file
// loading and tests). `source` names the origin for error messages.
void apply_config_json(RunConfig& cfg, const std::string& json_text, const std::string& source);

// Canonical semantic serialization: fixed key order, data/output paths
// excluded so runs on relocated files still fingerprint identically.
std::string canonical_config_json(const RunConfig& cfg);

// FNV-1a 64-bit hash of the canonical serialization; embedded in
// checkpoints and reports to tie artifacts to the config that made them.
std::uint64_t config_fingerprint(const RunConfig& cfg);

}  // namespace dccf
