#pragma once

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rpt/corpus/synth.hpp"
#include "rpt/train/finetune.hpp"

namespace rpt::cli {

struct KeySpec {
  std::string key;
  std::string default_value;  // empty: unset
  std::string help;
};

// Every recognised key. Units are part of the help text.
inline const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> specs = {
      {"data.corpus", "", "corpus dump directory (from `ingest` or `synth`); empty = synthesize in memory"},
      {"synth.researchers", "200", "synthetic corpus size [researchers]"},
      {"synth.topics", "4", "planted topics [count]"},
      {"synth.seed", "1", "synthetic corpus seed"},
      {"ingest.covenue_cap", "100", "max CoVenue edges per researcher [edges]"},
      {"ingest.graph_year_max", "", "drop Collaborating edges after this year [year]; empty = keep all"},
      {"model.d", "64", "hidden size [units]"},
      {"model.heads", "8", "attention heads [count]"},
      {"model.ffn_hidden", "64", "feed-forward width [units]"},
      {"model.doc_layers", "3", "document transformer layers [count]"},
      {"model.researcher_layers", "3", "researcher transformer layers [count]"},
      {"model.gnn_layers", "2", "relational GNN layers [count]"},
      {"model.max_doc_len", "20", "tokens kept per document [tokens]"},
      {"model.max_docs", "10", "documents kept per researcher [documents]"},
      {"model.hops", "2", "community sampler depth h [hops]"},
      {"model.dropout_keep", "1.0", "keep probability inside encoder blocks during pre-training [probability]"},
      {"model.precision", "double", "scalar type: double | float"},
      {"train.batch_size", "64", "researchers per step [count]"},
      {"train.steps", "1000", "optimisation steps [steps]"},
      {"train.lr", "0.01", "Adam learning rate [1/step]"},
      {"train.beta1", "0.9", "Adam beta1"},
      {"train.beta2", "0.999", "Adam beta2"},
      {"train.weight_decay", "1e-7", "additive weight decay"},
      {"train.lambda1", "0.1", "HMLM loss weight"},
      {"train.lambda2", "0.1", "CRP loss weight"},
      {"train.temperature", "1.0", "contrastive temperature tau"},
      {"train.negatives", "3", "contrastive negatives k [count]"},
      {"train.neighbors", "8", "sampled links per hop n [links]"},
      {"train.checkpoint_every", "1000", "checkpoint period [steps]"},
      {"train.seed", "1", "pre-training seed"},
      {"finetune.task", "classification", "classification | link | retrieval"},
      {"finetune.mode", "fb", "fb | e2e"},
      {"finetune.batch_size", "", "items per step [count]; empty = task default"},
      {"finetune.epochs", "", "[epochs]; empty = task default"},
      {"finetune.lr", "", "[1/step]; empty = task default"},
      {"finetune.weight_decay", "", "empty = task default"},
      {"finetune.keep", "0.9", "dropout keep probability [probability]"},
      {"finetune.hidden", "64", "MLP head hidden width [units]"},
      {"finetune.early_stop", "false", "stop on validation plateau"},
      {"finetune.patience", "3", "early-stopping patience [epochs]"},
      {"finetune.seed", "1", "fine-tuning seed (head init, batches, dropout)"},
      {"split.train_fraction", "0.6", "classification/retrieval train share [fraction]"},
      {"split.valid_fraction", "0.0", "validation share [fraction]"},
      {"split.seed", "1", "random split seed"},
      {"split.train_end", "2015", "last year of link-prediction training pairs [year]"},
      {"split.valid_end", "2016", "last year of validation pairs [year]"},
      {"split.train_ids", "", "optional id list file overriding the random split"},
      {"split.valid_ids", "", "optional id list file"},
      {"split.test_ids", "", "optional id list file"},
      {"eval.export_seed", "7", "community sampling seed for exported representations"},
  };
  return specs;
}

/// Flat key = value configuration with defaults for every known key.
class Config {
 public:
  Config() {
    for (const auto& s : key_specs()) values_[s.key] = s.default_value;
  }

  static bool known(const std::string& key) {
    const auto& specs = key_specs();
    return std::any_of(specs.begin(), specs.end(), [&](const KeySpec& s) { return s.key == key; });
  }

  /// Parses `key = value` lines; '#' starts a comment. Any unknown key or
  /// malformed line aborts before values are applied.
  void merge_text(std::istream& in, const std::string& origin) {
    std::map<std::string, std::string> parsed;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string where = origin + ":" + std::to_string(lineno);
      if (trim(line).empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ValidationError(where + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      if (!known(key)) throw ValidationError(where + ": unknown config key '" + key + "'");
      parsed[key] = trim(line.substr(eq + 1));
    }
    for (auto& [k, v] : parsed) {
      values_[k] = v;
      explicit_.insert(k);
    }
  }

  void merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    merge_text(in, path.string());
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ValidationError("unknown config key '" + key + "'");
    values_[key] = value;
    explicit_.insert(key);
  }

  bool is_explicit(const std::string& key) const { return explicit_.contains(key); }
  const std::string& raw(const std::string& key) const { return values_.at(key); }
  bool empty(const std::string& key) const { return raw(key).empty(); }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  template <typename V>
  V get(const std::string& key) const {
    const std::string& s = raw(key);
    if constexpr (std::is_same_v<V, std::string>) {
      return s;
    } else if constexpr (std::is_same_v<V, bool>) {
      if (s == "true" || s == "1") return true;
      if (s == "false" || s == "0") return false;
      throw ValidationError("config key '" + key + "': expected true or false, got '" + s + "'");
    } else {
      V v{};
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
        throw ValidationError("config key '" + key + "': cannot parse '" + s + "'");
      return v;
    }
  }

  template <typename V>
  V positive(const std::string& key) const {
    const V v = get<V>(key);
    if (!(v > 0)) throw ValidationError("config key '" + key + "' must be positive");
    return v;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }

  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

using Notice = std::function<void(const std::string&)>;

inline SynthConfig synth_config(const Config& c) {
  SynthConfig s;
  s.n_researchers = c.positive<std::size_t>("synth.researchers");
  s.n_topics = c.positive<std::size_t>("synth.topics");
  s.seed = c.get<std::uint64_t>("synth.seed");
  return s;
}

inline IngestOptions ingest_options(const Config& c) {
  IngestOptions o;
  o.covenue_cap = c.get<std::size_t>("ingest.covenue_cap");
  if (!c.empty("ingest.graph_year_max")) o.graph_year_max = c.get<int>("ingest.graph_year_max");
  return o;
}

/// Model and pre-training settings. `vocab_size` comes from the corpus.
inline TrainConfig train_config(const Config& c, std::size_t vocab_size, const Notice& notice = {}) {
  for (const char* key : {"train.lambda1", "train.lambda2"})
    if (!c.is_explicit(key) && notice) notice(std::string(key) + " not set; using default " + c.raw(key));
  TrainConfig t;
  auto& m = t.model;
  m.d = c.positive<std::size_t>("model.d");
  m.heads = c.positive<std::size_t>("model.heads");
  m.ffn_hidden = c.positive<std::size_t>("model.ffn_hidden");
  m.doc_layers = c.positive<std::size_t>("model.doc_layers");
  m.researcher_layers = c.positive<std::size_t>("model.researcher_layers");
  m.gnn_layers = c.positive<std::size_t>("model.gnn_layers");
  m.max_doc_len = c.positive<std::size_t>("model.max_doc_len");
  m.max_docs = c.positive<std::size_t>("model.max_docs");
  m.hops = c.positive<std::size_t>("model.hops");
  m.dropout_keep = c.positive<double>("model.dropout_keep");
  m.vocab_size = vocab_size;
  if (m.d % m.heads != 0) throw ValidationError("config key 'model.heads' must divide model.d");
  if (m.dropout_keep > 1) throw ValidationError("config key 'model.dropout_keep' must be <= 1");
  const auto precision = c.get<std::string>("model.precision");
  if (precision != "double" && precision != "float")
    throw ValidationError("config key 'model.precision': expected double or float, got '" + precision + "'");
  t.batch_size = c.positive<std::size_t>("train.batch_size");
  t.steps = c.positive<std::size_t>("train.steps");
  t.adam.lr = c.positive<double>("train.lr");
  t.adam.beta1 = c.get<double>("train.beta1");
  t.adam.beta2 = c.get<double>("train.beta2");
  t.adam.weight_decay = c.get<double>("train.weight_decay");
  t.weights.lambda1 = c.get<double>("train.lambda1");
  t.weights.lambda2 = c.get<double>("train.lambda2");
  if (t.weights.lambda1 < 0) throw ValidationError("config key 'train.lambda1' must be >= 0");
  if (t.weights.lambda2 < 0) throw ValidationError("config key 'train.lambda2' must be >= 0");
  t.contrastive.temperature = c.positive<double>("train.temperature");
  t.contrastive.negatives = c.positive<std::size_t>("train.negatives");
  t.neighbors = c.positive<std::size_t>("train.neighbors");
  t.checkpoint_every = c.positive<std::size_t>("train.checkpoint_every");
  t.seed = c.get<std::uint64_t>("train.seed");
  return t;
}

inline FinetuneConfig finetune_config(const Config& c) {
  Task task;
  TransferMode mode;
  try {
    task = parse_task(c.get<std::string>("finetune.task"));
    mode = parse_mode(c.get<std::string>("finetune.mode"));
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("config key 'finetune.task' / 'finetune.mode': ") + e.what());
  }
  auto ft = FinetuneConfig::defaults(task, mode);
  if (!c.empty("finetune.batch_size")) ft.batch_size = c.positive<std::size_t>("finetune.batch_size");
  if (!c.empty("finetune.epochs")) ft.epochs = c.positive<std::size_t>("finetune.epochs");
  if (!c.empty("finetune.lr")) ft.adam.lr = c.positive<double>("finetune.lr");
  if (!c.empty("finetune.weight_decay")) ft.adam.weight_decay = c.get<double>("finetune.weight_decay");
  ft.keep = c.positive<double>("finetune.keep");
  ft.hidden = c.positive<std::size_t>("finetune.hidden");
  ft.early_stop = c.get<bool>("finetune.early_stop");
  ft.patience = c.positive<std::size_t>("finetune.patience");
  ft.seed = c.get<std::uint64_t>("finetune.seed");
  ft.validate();
  return ft;
}

}  // namespace rpt::cli
