#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dccf/evaluator.hpp"
#include "dccf/interactions.hpp"
#include "dccf/matrix.hpp"
#include "dccf/model.hpp"
#include "dccf/trainer.hpp"

namespace dccf {

// All binary formats are little-endian; this engine only targets such hosts.
static_assert(std::endian::native == std::endian::little,
              "binary file formats assume a little-endian host");

using json = nlohmann::json;

inline std::string fingerprint_hex(std::uint64_t fp) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fp;
  return os.str();
}

namespace bin {

class Writer {
 public:
  explicit Writer(const std::string& path, const std::string& what) : path_(path), what_(what) {
    f_.open(path, std::ios::binary | std::ios::trunc);
    if (!f_) throw std::runtime_error(what_ + ": cannot open for writing: " + path_);
  }

  void magic(const char m[4]) { raw(m, 4); }

  template <class T>
  void pod(T v) {
    raw(&v, sizeof(T));
  }

  template <class S>
  void array(const std::vector<S>& v) {
    if (!v.empty()) raw(v.data(), v.size() * sizeof(S));
  }

  void close() {
    f_.close();
    if (!f_) throw std::runtime_error(what_ + ": write failed: " + path_);
  }

 private:
  void raw(const void* p, std::size_t n) {
    f_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!f_) throw std::runtime_error(what_ + ": write failed: " + path_);
  }

  std::ofstream f_;
  std::string path_;
  std::string what_;
};

class Reader {
 public:
  explicit Reader(const std::string& path, const std::string& what) : path_(path), what_(what) {
    f_.open(path, std::ios::binary);
    if (!f_) throw std::runtime_error(what_ + ": cannot open: " + path_);
  }

  void expect_magic(const char m[4]) {
    char got[4];
    raw(got, 4);
    if (std::memcmp(got, m, 4) != 0) {
      throw std::runtime_error(what_ + ": bad magic (wrong file type): " + path_);
    }
  }

  template <class T>
  T pod() {
    T v;
    raw(&v, sizeof(T));
    return v;
  }

  template <class S>
  std::vector<S> array(std::size_t n) {
    std::vector<S> v(n);
    if (n > 0) raw(v.data(), n * sizeof(S));
    return v;
  }

  void expect_eof() {
    f_.peek();
    if (!f_.eof()) throw std::runtime_error(what_ + ": trailing bytes (corrupt file): " + path_);
  }

  const std::string& path() const { return path_; }

 private:
  void raw(void* p, std::size_t n) {
    f_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (f_.gcount() != static_cast<std::streamsize>(n)) {
      throw std::runtime_error(what_ + ": truncated or corrupt file: " + path_);
    }
  }

  std::ifstream f_;
  std::string path_;
  std::string what_;
};

}  // namespace bin

// --- checkpoints ("DCKP") ---------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'D', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class S>
void save_checkpoint(const Checkpoint<S>& ckpt, const std::string& path) {
  bin::Writer w(path, "checkpoint");
  w.magic(kCheckpointMagic);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.pod<std::uint32_t>(sizeof(S));
  w.pod<std::uint64_t>(ckpt.config_fingerprint);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.epoch));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.params.e0_user.rows));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.params.e0_item.rows));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.params.e0_user.cols));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(ckpt.params.proto_user.rows));
  const auto arrays = param_arrays(ckpt.params);
  for (const auto* a : arrays) w.array(a->data);
  w.pod<std::uint64_t>(static_cast<std::uint64_t>(ckpt.adam.t));
  w.pod<double>(ckpt.adam.lr);
  w.pod<double>(ckpt.adam.beta1);
  w.pod<double>(ckpt.adam.beta2);
  w.pod<double>(ckpt.adam.eps);
  for (int k = 0; k < 4; ++k) w.array(ckpt.adam.m[k]);
  for (int k = 0; k < 4; ++k) w.array(ckpt.adam.v[k]);
  w.close();
}

// Scalar width (4 or 8) stored in a checkpoint, without loading it.
inline int peek_checkpoint_scalar_size(const std::string& path) {
  bin::Reader r(path, "checkpoint");
  r.expect_magic(kCheckpointMagic);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) + ": " +
                             path);
  }
  const auto scalar = r.pod<std::uint32_t>();
  if (scalar != 4 && scalar != 8) {
    throw std::runtime_error("checkpoint: unknown scalar width: " + path);
  }
  return static_cast<int>(scalar);
}

template <class S>
Checkpoint<S> load_checkpoint(const std::string& path) {
  bin::Reader r(path, "checkpoint");
  r.expect_magic(kCheckpointMagic);
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) + ": " +
                             path);
  }
  const auto scalar = r.pod<std::uint32_t>();
  if (scalar != sizeof(S)) {
    throw std::runtime_error("checkpoint: precision mismatch: file stores " +
                             std::string(scalar == 4 ? "f32" : "f64") + ", run uses " +
                             std::string(sizeof(S) == 4 ? "f32" : "f64") + ": " + path);
  }
  Checkpoint<S> ckpt;
  ckpt.config_fingerprint = r.pod<std::uint64_t>();
  ckpt.epoch = static_cast<int>(r.pod<std::uint32_t>());
  const int I = static_cast<int>(r.pod<std::uint32_t>());
  const int J = static_cast<int>(r.pod<std::uint32_t>());
  const int d = static_cast<int>(r.pod<std::uint32_t>());
  const int K = static_cast<int>(r.pod<std::uint32_t>());
  if (I < 1 || J < 1 || d < 1 || K < 1) {
    throw std::runtime_error("checkpoint: invalid dimensions: " + path);
  }
  ckpt.params.e0_user = Matrix<S>(I, d);
  ckpt.params.e0_item = Matrix<S>(J, d);
  ckpt.params.proto_user = Matrix<S>(K, d);
  ckpt.params.proto_item = Matrix<S>(K, d);
  auto arrays = param_arrays(ckpt.params);
  for (auto* a : arrays) a->data = r.array<S>(a->size());
  ckpt.adam.t = static_cast<long>(r.pod<std::uint64_t>());
  ckpt.adam.lr = r.pod<double>();
  ckpt.adam.beta1 = r.pod<double>();
  ckpt.adam.beta2 = r.pod<double>();
  ckpt.adam.eps = r.pod<double>();
  for (int k = 0; k < 4; ++k) ckpt.adam.m[k] = r.array<S>(arrays[k]->size());
  for (int k = 0; k < 4; ++k) ckpt.adam.v[k] = r.array<S>(arrays[k]->size());
  r.expect_eof();
  return ckpt;
}

// --- embedding export ("DCCF") ----------------------------------------------

inline constexpr char kEmbeddingMagic[4] = {'D', 'C', 'C', 'F'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

struct EmbeddingExport {
  int num_users = 0, num_items = 0, d = 0, K = 0;
  Matrix<float> e0_user, e0_item, proto_user, proto_item;
  bool has_final = false;
  Matrix<float> final_user, final_item;
};

namespace detail {

template <class S>
std::vector<float> to_f32(const std::vector<S>& v) {
  return std::vector<float>(v.begin(), v.end());
}

}  // namespace detail

// Writes parameters (and optionally the aggregated final embeddings) as f32.
template <class S>
void save_embeddings(const std::string& path, const ModelParams<S>& params,
                     const Matrix<S>* final_user = nullptr, const Matrix<S>* final_item = nullptr) {
  if ((final_user == nullptr) != (final_item == nullptr)) {
    throw std::runtime_error("embedding export: need both final embeddings or neither");
  }
  bin::Writer w(path, "embedding export");
  w.magic(kEmbeddingMagic);
  w.pod<std::uint32_t>(kEmbeddingVersion);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.e0_user.rows));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.e0_item.rows));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.e0_user.cols));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(params.proto_user.rows));
  const auto arrays = param_arrays(params);
  for (const auto* a : arrays) w.array(detail::to_f32(a->data));
  w.pod<std::uint32_t>(final_user ? 1u : 0u);
  if (final_user) {
    w.array(detail::to_f32(final_user->data));
    w.array(detail::to_f32(final_item->data));
  }
  w.close();
}

inline EmbeddingExport load_embeddings(const std::string& path) {
  bin::Reader r(path, "embedding export");
  r.expect_magic(kEmbeddingMagic);
  const auto version = r.pod<std::uint32_t>();
  if (version != kEmbeddingVersion) {
    throw std::runtime_error("embedding export: unsupported version: " + path);
  }
  EmbeddingExport e;
  e.num_users = static_cast<int>(r.pod<std::uint32_t>());
  e.num_items = static_cast<int>(r.pod<std::uint32_t>());
  e.d = static_cast<int>(r.pod<std::uint32_t>());
  e.K = static_cast<int>(r.pod<std::uint32_t>());
  auto read_matrix = [&r](int rows, int cols) {
    Matrix<float> m(rows, cols);
    m.data = r.array<float>(m.size());
    return m;
  };
  e.e0_user = read_matrix(e.num_users, e.d);
  e.e0_item = read_matrix(e.num_items, e.d);
  e.proto_user = read_matrix(e.K, e.d);
  e.proto_item = read_matrix(e.K, e.d);
  e.has_final = r.pod<std::uint32_t>() != 0;
  if (e.has_final) {
    e.final_user = read_matrix(e.num_users, e.d);
    e.final_item = read_matrix(e.num_items, e.d);
  }
  r.expect_eof();
  return e;
}

// --- intent-relevance export ("DCFP") ----------------------------------------

inline constexpr char kRelevanceMagic[4] = {'D', 'C', 'F', 'P'};
inline constexpr std::uint32_t kRelevanceVersion = 1;

template <class S>
void save_relevance(const std::string& path, const Matrix<S>& p) {
  bin::Writer w(path, "relevance export");
  w.magic(kRelevanceMagic);
  w.pod<std::uint32_t>(kRelevanceVersion);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.rows));
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(p.cols));
  w.array(detail::to_f32(p.data));
  w.close();
}

inline Matrix<float> load_relevance(const std::string& path) {
  bin::Reader r(path, "relevance export");
  r.expect_magic(kRelevanceMagic);
  if (r.pod<std::uint32_t>() != kRelevanceVersion) {
    throw std::runtime_error("relevance export: unsupported version: " + path);
  }
  const int rows = static_cast<int>(r.pod<std::uint32_t>());
  const int cols = static_cast<int>(r.pod<std::uint32_t>());
  Matrix<float> m(rows, cols);
  m.data = r.array<float>(m.size());
  r.expect_eof();
  return m;
}

// --- edge-mask export ("DCFM") ------------------------------------------------

inline constexpr char kMaskMagic[4] = {'D', 'C', 'F', 'M'};
inline constexpr std::uint32_t kMaskVersion = 1;

struct MaskExport {
  EdgeList edges;
  bool has_local = false;
  bool has_intent = false;
  std::vector<float> local_mask;
  std::vector<float> intent_mask;
};

inline void save_masks(const std::string& path, const EdgeList& edges,
                       const std::vector<float>* local_mask,
                       const std::vector<float>* intent_mask) {
  if ((local_mask && local_mask->size() != edges.size()) ||
      (intent_mask && intent_mask->size() != edges.size())) {
    throw std::runtime_error("mask export: one value per edge required");
  }
  bin::Writer w(path, "mask export");
  w.magic(kMaskMagic);
  w.pod<std::uint32_t>(kMaskVersion);
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(edges.size()));
  w.pod<std::uint32_t>(local_mask ? 1u : 0u);
  w.pod<std::uint32_t>(intent_mask ? 1u : 0u);
  std::vector<std::uint32_t> us, is;
  us.reserve(edges.size());
  is.reserve(edges.size());
  for (const auto& [u, i] : edges) {
    us.push_back(static_cast<std::uint32_t>(u));
    is.push_back(static_cast<std::uint32_t>(i));
  }
  w.array(us);
  w.array(is);
  if (local_mask) w.array(*local_mask);
  if (intent_mask) w.array(*intent_mask);
  w.close();
}

inline MaskExport load_masks(const std::string& path) {
  bin::Reader r(path, "mask export");
  r.expect_magic(kMaskMagic);
  if (r.pod<std::uint32_t>() != kMaskVersion) {
    throw std::runtime_error("mask export: unsupported version: " + path);
  }
  const std::size_t nnz = r.pod<std::uint32_t>();
  MaskExport m;
  m.has_local = r.pod<std::uint32_t>() != 0;
  m.has_intent = r.pod<std::uint32_t>() != 0;
  const auto us = r.array<std::uint32_t>(nnz);
  const auto is = r.array<std::uint32_t>(nnz);
  m.edges.reserve(nnz);
  for (std::size_t e = 0; e < nnz; ++e) {
    m.edges.emplace_back(static_cast<int>(us[e]), static_cast<int>(is[e]));
  }
  if (m.has_local) m.local_mask = r.array<float>(nnz);
  if (m.has_intent) m.intent_mask = r.array<float>(nnz);
  r.expect_eof();
  return m;
}

// --- JSON reports --------------------------------------------------------------

inline json loss_to_json(const LossBreakdown& b) {
  return json{{"bpr", b.bpr},
              {"cl_user", b.cl_user},
              {"cl_item", b.cl_item},
              {"reg_theta1", b.reg_theta1},
              {"reg_theta2", b.reg_theta2},
              {"total", b.total}};
}

inline json bucket_to_json(const BucketReport& br) {
  return json{{"label", br.label},
              {"entity_count", br.entity_count},
              {"evaluated", br.evaluated},
              {"recall", br.recall},
              {"ndcg", br.ndcg}};
}

inline json eval_report_to_json(const EvalReport& r) {
  json j{{"cutoffs", r.cutoffs},
         {"recall", r.recall},
         {"ndcg", r.ndcg},
         {"evaluated_users", r.evaluated_users}};
  if (r.has_mad) {
    j["mad"] = json{{"user", r.mad_user}, {"item", r.mad_item}, {"sample_cap", r.mad_sample_cap}};
  }
  if (!r.user_buckets.empty()) {
    json ub = json::array(), ib = json::array();
    for (const auto& b : r.user_buckets) ub.push_back(bucket_to_json(b));
    for (const auto& b : r.item_buckets) ib.push_back(bucket_to_json(b));
    j["user_buckets"] = std::move(ub);
    j["item_buckets"] = std::move(ib);
  }
  return j;
}

inline json stats_to_json(const DatasetStats& s) {
  return json{{"users", s.num_users},
              {"items", s.num_items},
              {"interactions", s.num_interactions},
              {"density", format_density(s.density)}};
}

struct HistoryMeta {
  std::uint64_t config_fingerprint = 0;
  std::uint64_t seed = 0;
  std::string precision;  // "f32" / "f64"
  int selection_cutoff = 20;
  DatasetStats stats;
};

// History serialization. Deliberately contains no wall-clock timing: the
// file must be byte-identical across reruns with the same config and seed.
template <class S>
json history_to_json(const FitResult<S>& fit, const HistoryMeta& meta) {
  json entries = json::array();
  for (const HistoryEntry& e : fit.history) {
    json entry{{"epoch", e.epoch}};
    if (e.has_loss) entry["loss"] = loss_to_json(e.loss);
    if (e.has_eval) entry["eval"] = eval_report_to_json(e.eval);
    entries.push_back(std::move(entry));
  }
  return json{{"config_fingerprint", fingerprint_hex(meta.config_fingerprint)},
              {"seed", meta.seed},
              {"precision", meta.precision},
              {"selection_cutoff", meta.selection_cutoff},
              {"dataset", stats_to_json(meta.stats)},
              {"best_epoch", fit.best_epoch},
              {"best_metric", fit.best_metric},
              {"early_stopped", fit.early_stopped},
              {"epochs_run", fit.epochs_run},
              {"entries", std::move(entries)}};
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("report: cannot open for writing: " + path);
  f << j.dump(2) << "\n";
  if (!f) throw std::runtime_error("report: write failed: " + path);
}

inline json read_json_file(const std::string& path, const std::string& what) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(what + ": cannot open: " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(what + ": invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

}  // namespace dccf
