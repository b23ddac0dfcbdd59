#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <set>

#include "rpt/corpus/ingest.hpp"
#include "rpt/train/metrics.hpp"
#include "rpt/train/pretrain.hpp"

namespace rpt {

enum class TransferMode { FeatureBased, EndToEnd };
enum class Task { Classification, LinkPrediction, Retrieval };

inline TransferMode parse_mode(const std::string& s) {
  if (s == "fb") return TransferMode::FeatureBased;
  if (s == "e2e") return TransferMode::EndToEnd;
  throw ValidationError("mode must be fb or e2e, got '" + s + "'");
}

inline const char* to_string(TransferMode m) { return m == TransferMode::FeatureBased ? "fb" : "e2e"; }

inline Task parse_task(const std::string& s) {
  if (s == "classification") return Task::Classification;
  if (s == "link") return Task::LinkPrediction;
  if (s == "retrieval") return Task::Retrieval;
  throw ValidationError("task must be classification, link or retrieval, got '" + s + "'");
}

inline const char* to_string(Task t) {
  switch (t) {
    case Task::Classification: return "classification";
    case Task::LinkPrediction: return "link";
    case Task::Retrieval: return "retrieval";
  }
  return "?";
}

struct FinetuneConfig {
  TransferMode mode = TransferMode::EndToEnd;
  Task task = Task::Classification;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  double keep = 0.9;  // dropout keep probability
  AdamConfig adam{.lr = 1e-2, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 1e-7};
  std::size_t hidden = 64;
  std::size_t negatives = 3;            // retrieval sampled softmax
  std::size_t link_negative_ratio = 3;  // negatives per true link
  bool early_stop = false;
  std::size_t patience = 3;
  std::uint64_t seed = 1;

  /// Per-task settings: batch, epochs, lr, weight decay.
  static FinetuneConfig defaults(Task task, TransferMode mode = TransferMode::EndToEnd) {
    FinetuneConfig c;
    c.task = task;
    c.mode = mode;
    switch (task) {
      case Task::Classification: c.batch_size = 64, c.epochs = 10, c.adam.lr = 1e-2, c.adam.weight_decay = 1e-7; break;
      case Task::LinkPrediction: c.batch_size = 256, c.epochs = 10, c.adam.lr = 1e-3, c.adam.weight_decay = 1e-7; break;
      case Task::Retrieval: c.batch_size = 64, c.epochs = 20, c.adam.lr = 1e-4, c.adam.weight_decay = 1e-4; break;
    }
    return c;
  }

  void validate() const {
    if (batch_size == 0) throw ValidationError("finetune config: batch_size must be positive");
    if (!(keep > 0 && keep <= 1)) throw ValidationError("finetune config: keep must lie in (0, 1]");
    if (hidden == 0) throw ValidationError("finetune config: hidden must be positive");
    if (negatives == 0 || link_negative_ratio == 0) throw ValidationError("finetune config: negative counts must be positive");
    if (!(adam.lr > 0)) throw ValidationError("finetune config: lr must be positive");
    if (early_stop && patience == 0) throw ValidationError("finetune config: patience must be positive");
  }
};

struct IdSplit {
  std::vector<std::size_t> train, valid, test;
};

using Pair = std::pair<std::size_t, std::size_t>;

struct PairSplit {
  std::vector<Pair> train, valid, test;
};

/// Everything a fine-tuning task may read; each task uses its own fields.
struct TaskData {
  IdSplit ids;                                  // classification items / retrieval queries
  PairSplit pairs;                              // link prediction positives
  std::vector<std::vector<std::size_t>> truth;  // retrieval ground truth per researcher
};

struct FinetuneResult {
  std::vector<MetricRow> curve;
  std::map<std::string, double> test;  // test metrics after the last epoch
  std::size_t epochs_run = 0;
};

// Splits and ground truth.

inline std::vector<std::size_t> labeled_indices(const ResearcherCorpus& corpus) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (corpus.researchers[i].label) out.push_back(i);
  return out;
}

inline IdSplit random_split(std::vector<std::size_t> ids, double train_frac, double valid_frac, std::uint64_t seed) {
  if (train_frac <= 0 || valid_frac < 0 || train_frac + valid_frac > 1) throw ValidationError("random_split: bad fractions");
  auto rng = rng_stream(seed, 0, stream::kShuffle);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * ids.size()));
  const auto n_valid = static_cast<std::size_t>(std::llround(valid_frac * ids.size()));
  IdSplit s;
  s.train.assign(ids.begin(), ids.begin() + n_train);
  s.valid.assign(ids.begin() + n_train, ids.begin() + std::min(ids.size(), n_train + n_valid));
  s.test.assign(ids.begin() + std::min(ids.size(), n_train + n_valid), ids.end());
  return s;
}

/// Unordered collaborating pairs by period: year <= train_end, <= valid_end,
/// later. A pair already seen in an earlier period is dropped from later ones.
inline PairSplit temporal_pair_split(std::span<const Collaboration> collabs, int train_end, int valid_end) {
  if (valid_end < train_end) throw ValidationError("temporal split: valid_end precedes train_end");
  std::vector<Collaboration> sorted(collabs.begin(), collabs.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& x, const auto& y) { return x.year < y.year; });
  std::set<Pair> seen;
  PairSplit s;
  for (const auto& c : sorted) {
    const Pair p = std::minmax(c.a, c.b);
    if (p.first == p.second || !seen.insert(p).second) continue;
    (c.year <= train_end ? s.train : c.year <= valid_end ? s.valid : s.test).push_back(p);
  }
  return s;
}

/// Coauthors of every researcher ordered by collaboration count, ties by index.
inline std::vector<std::vector<std::size_t>> coauthor_lists(std::span<const Collaboration> collabs, std::size_t n) {
  std::vector<std::map<std::size_t, std::size_t>> counts(n);
  for (const auto& c : collabs) {
    if (c.a >= n || c.b >= n) throw ValidationError("coauthor_lists: researcher index out of range");
    if (c.a == c.b) continue;
    ++counts[c.a][c.b];
    ++counts[c.b][c.a];
  }
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& [j, _] : counts[i]) out[i].push_back(j);
    std::stable_sort(out[i].begin(), out[i].end(),
                     [&](std::size_t x, std::size_t y) { return counts[i][x] > counts[i][y]; });
  }
  return out;
}

struct LabeledPairs {
  std::vector<Pair> pairs;
  std::vector<std::size_t> labels;  // 1 = collaborating
};

/// Adds ratio x |positives| distinct negative pairs drawn uniformly from pairs
/// outside `exclude`; the drawn pairs are added to `exclude`.
inline LabeledPairs with_negatives(std::span<const Pair> positives, std::size_t n, std::set<Pair>& exclude,
                                   std::size_t ratio, std::mt19937_64& rng) {
  LabeledPairs out;
  for (const auto& p : positives) {
    out.pairs.push_back(p);
    out.labels.push_back(1);
  }
  const std::size_t want = ratio * positives.size();
  if (n < 2 || n * (n - 1) / 2 < exclude.size() + want) throw ValidationError("not enough non-collaborating pairs");
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (std::size_t drawn = 0; drawn < want;) {
    const std::size_t a = pick(rng), b = pick(rng);
    if (a == b) continue;
    const Pair p = std::minmax(a, b);
    if (!exclude.insert(p).second) continue;
    ++drawn;
    out.pairs.push_back(p);
    out.labels.push_back(0);
  }
  return out;
}

inline void write_id_list(const std::filesystem::path& path, const ResearcherCorpus& corpus,
                          std::span<const std::size_t> ids) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t i : ids) out << corpus.researchers.at(i).id << '\n';
}

inline std::vector<std::size_t> read_id_list(const std::filesystem::path& path, const ResearcherCorpus& corpus) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::size_t> ids;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    if (!corpus.contains(line))
      throw ValidationError(path.string() + " line " + std::to_string(n) + ": unknown researcher " + line);
    ids.push_back(corpus.index_of(line));
  }
  return ids;
}

// Heads and features.

inline std::vector<std::string> mlp_head_names() { return {"ft.w1", "ft.b1", "ft.w2", "ft.b2"}; }

template <std::floating_point T>
ParameterStore<T> make_mlp_head(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed) {
  auto rng = rng_stream(seed, 0, stream::kHead);
  ParameterStore<T> head;
  head.add("ft.w1", xavier_tensor<T>(in, hidden, rng));
  head.add("ft.b1", Tensor<T>({hidden}));
  head.add("ft.w2", xavier_tensor<T>(hidden, out, rng));
  head.add("ft.b2", Tensor<T>({out}));
  return head;
}

template <std::floating_point T>
Var<T> mlp_head(Tape<T>& tape, ParameterStore<T>& head, Var<T> x, double keep, std::mt19937_64* rng, bool training) {
  const bool drop = training && keep < 1.0;
  if (drop) x = dropout(x, keep, *rng, true);
  auto h = relu(linear(x, tape.parameter(head.get("ft.w1")), tape.parameter(head.get("ft.b1"))));
  if (drop) h = dropout(h, keep, *rng, true);
  return linear(h, tape.parameter(head.get("ft.w2")), tape.parameter(head.get("ft.b2")));
}

template <std::floating_point T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& logits) {
  std::vector<std::size_t> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

template <std::floating_point T>
Tensor<T> select_rows(const Tensor<T>& Z, std::span<const std::size_t> ids) {
  Tensor<T> out({ids.size(), Z.cols()});
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy(Z.data() + ids[i] * Z.cols(), Z.data() + (ids[i] + 1) * Z.cols(), out.data() + i * Z.cols());
  return out;
}

/// Supplies researcher representations to a fine-tuning head. Feature-based
/// mode reads a fixed exported Z and never touches the encoder; end-to-end
/// mode encodes each batch on the tape and re-exports Z for evaluation.
template <std::floating_point T>
class Featurizer {
 public:
  Featurizer(ParameterStore<T>& encoder, const TrainConfig& pre, const ResearcherCorpus& corpus,
             const CommunityGraph& graph, const FinetuneConfig& ft)
      : enc_(encoder), cfg_(pre), corpus_(corpus), graph_(graph), ft_(ft) {
    cfg_.model.dropout_keep = ft.keep;
    if (ft.mode == TransferMode::EndToEnd) {
      for (const char* prefix : {"sem.", "gnn."})
        for (auto* p : enc_.with_prefix(prefix)) {
          p->adam_m.fill(T{0});
          p->adam_v.fill(T{0});
          p->step_count = 0;
          trainable_.push_back(p);
        }
    }
    refresh();
  }

  std::size_t width() const { return 2 * cfg_.model.d; }
  const std::vector<Parameter<T>*>& trainable() const { return trainable_; }
  const Tensor<T>& matrix() const { return Z_; }

  /// Eval-mode Z; a no-op after the first call in feature-based mode.
  void refresh() {
    if (ft_.mode == TransferMode::FeatureBased && Z_.size() > 0) return;
    Z_ = export_representations<T>(enc_, cfg_, corpus_, graph_, ft_.seed).Z;
  }

  /// Rows of Z for distinct researchers `ids`.
  Var<T> rows(Tape<T>& tape, std::span<const std::size_t> ids, std::uint64_t step, std::mt19937_64& rng) {
    if (ft_.mode == TransferMode::FeatureBased) {
      for (const char* prefix : {"sem.", "gnn."})
        for (auto* p : enc_.with_prefix(prefix)) tape.freeze(*p);
      return tape.constant(select_rows(Z_, ids));
    }
    EncodeContext<T> ctx{.training = true, .rng = &rng};
    return represent_batch<T>(tape, enc_, cfg_, corpus_, graph_, ids, ft_.seed, step, ctx);
  }

 private:
  ParameterStore<T>& enc_;
  TrainConfig cfg_;
  const ResearcherCorpus& corpus_;
  const CommunityGraph& graph_;
  FinetuneConfig ft_;
  Tensor<T> Z_;
  std::vector<Parameter<T>*> trainable_;
};

namespace detail {

/// Distinct ids of `items` plus each item's row in that list.
inline std::vector<std::size_t> intern_ids(std::span<const std::size_t> items, std::vector<std::size_t>& rows) {
  std::vector<std::size_t> unique;
  std::unordered_map<std::size_t, std::size_t> at;
  rows.clear();
  for (std::size_t id : items) {
    auto [it, inserted] = at.try_emplace(id, unique.size());
    if (inserted) unique.push_back(id);
    rows.push_back(it->second);
  }
  return unique;
}

template <std::floating_point T>
void optimise(Tape<T>& tape, Var<T> loss, ParameterStore<T>& head, const Featurizer<T>& feats,
              const FinetuneConfig& ft) {
  if (!std::isfinite(loss.value().item())) throw NumericalError("fine-tuning loss is not finite");
  tape.backward(loss);
  std::vector<Parameter<T>*> params = head.all();
  params.insert(params.end(), feats.trainable().begin(), feats.trainable().end());
  adam_step<T>(params, ft.adam);
}

// Tracks the validation metric for early stopping.
struct Stopper {
  double best = -1;
  std::size_t since = 0;
  bool update(const FinetuneConfig& ft, std::optional<double> valid) {
    if (!ft.early_stop || !valid) return false;
    if (*valid > best) {
      best = *valid;
      since = 0;
      return false;
    }
    return ++since >= ft.patience;
  }
};

}  // namespace detail

template <std::floating_point T>
FinetuneResult finetune_classification(ParameterStore<T>& encoder, const TrainConfig& pre,
                                       const ResearcherCorpus& corpus, const CommunityGraph& graph,
                                       const IdSplit& split, const FinetuneConfig& ft) {
  ft.validate();
  auto label = [&](std::size_t i) {
    const auto& l = corpus.researchers.at(i).label;
    if (!l) throw ValidationError("researcher " + corpus.researchers[i].id + " has no label");
    return *l;
  };
  std::size_t classes = 0;
  std::set<std::size_t> train_classes;
  for (const auto* part : {&split.train, &split.valid, &split.test})
    for (std::size_t i : *part) classes = std::max(classes, label(i) + 1);
  for (std::size_t i : split.train) train_classes.insert(label(i));
  if (train_classes.size() < 2) throw ValidationError("degenerate split: fewer than two classes in train");
  if (split.test.empty()) throw ValidationError("degenerate split: empty test split");

  Featurizer<T> feats(encoder, pre, corpus, graph, ft);
  auto head = make_mlp_head<T>(feats.width(), ft.hidden, classes, ft.seed);
  FinetuneResult result;
  detail::Stopper stopper;

  auto evaluate = [&](std::span<const std::size_t> ids) {
    Tape<T> tape;
    auto logits = mlp_head(tape, head, tape.constant(select_rows(feats.matrix(), ids)), 1.0, nullptr, false);
    std::vector<std::size_t> truth;
    for (std::size_t i : ids) truth.push_back(label(i));
    const auto pred = argmax_rows(logits.value());
    return classification_metrics(truth, pred, classes);
  };

  std::uint64_t step = 0;
  std::vector<std::size_t> order = split.train;
  for (std::size_t epoch = 1; epoch <= ft.epochs; ++epoch) {
    auto shuffle_rng = rng_stream(ft.seed, epoch, stream::kShuffle);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += ft.batch_size, ++step) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(ft.batch_size, order.size() - start));
      auto drop_rng = rng_stream(ft.seed, step, stream::kDropout);
      Tape<T> tape;
      auto logits = mlp_head(tape, head, feats.rows(tape, batch, step, drop_rng), ft.keep, &drop_rng, true);
      std::vector<std::size_t> targets;
      for (std::size_t i : batch) targets.push_back(label(i));
      detail::optimise(tape, mean(cross_entropy(softmax(logits, 1), std::span<const std::size_t>(targets))), head,
                       feats, ft);
    }
    feats.refresh();
    std::optional<double> valid;
    const std::pair<const char*, const std::vector<std::size_t>*> parts[] = {
        {"train", &split.train}, {"valid", &split.valid}, {"test", &split.test}};
    for (const auto& [name, ids] : parts) {
      if (ids->empty()) continue;
      const auto m = evaluate(*ids);
      result.curve.push_back({epoch, name, "accuracy", m.accuracy});
      result.curve.push_back({epoch, name, "micro_f1", m.micro_f1});
      result.curve.push_back({epoch, name, "macro_f1", m.macro_f1});
      if (std::string(name) == "valid") valid = m.micro_f1;
      if (std::string(name) == "test") result.test = {{"accuracy", m.accuracy}, {"micro_f1", m.micro_f1}, {"macro_f1", m.macro_f1}};
    }
    result.epochs_run = epoch;
    if (stopper.update(ft, valid)) break;
  }
  return result;
}

template <std::floating_point T>
FinetuneResult finetune_link_prediction(ParameterStore<T>& encoder, const TrainConfig& pre,
                                        const ResearcherCorpus& corpus, const CommunityGraph& graph,
                                        const PairSplit& split, const FinetuneConfig& ft) {
  ft.validate();
  if (split.train.empty() || split.test.empty()) throw ValidationError("link prediction: no positives in a split");
  std::set<Pair> used;  // positives of every period, then drawn negatives
  for (const auto* part : {&split.train, &split.valid, &split.test})
    for (const auto& p : *part) used.insert(std::minmax(p.first, p.second));
  auto neg_rng = rng_stream(ft.seed, 0, stream::kNegatives);
  const std::size_t N = corpus.size();
  const auto train = with_negatives(split.train, N, used, ft.link_negative_ratio, neg_rng);
  const auto valid = with_negatives(split.valid, N, used, ft.link_negative_ratio, neg_rng);
  const auto test = with_negatives(split.test, N, used, ft.link_negative_ratio, neg_rng);

  Featurizer<T> feats(encoder, pre, corpus, graph, ft);
  auto head = make_mlp_head<T>(feats.width(), ft.hidden, 2, ft.seed);
  FinetuneResult result;
  detail::Stopper stopper;

  auto pair_logits = [&](Tape<T>& tape, Var<T> rows, std::span<const std::size_t> a, std::span<const std::size_t> b,
                         double keep, std::mt19937_64* rng, bool training) {
    return mlp_head(tape, head, mul(gather_rows(rows, a), gather_rows(rows, b)), keep, rng, training);
  };
  auto evaluate = [&](const LabeledPairs& set) {
    std::vector<std::size_t> a, b;
    for (const auto& [x, y] : set.pairs) a.push_back(x), b.push_back(y);
    Tape<T> tape;
    const auto logits = pair_logits(tape, tape.constant(feats.matrix()), a, b, 1.0, nullptr, false);
    return binary_metrics(set.labels, argmax_rows(logits.value()));
  };

  std::vector<std::size_t> order(train.pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= ft.epochs; ++epoch) {
    auto shuffle_rng = rng_stream(ft.seed, epoch, stream::kShuffle);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size(); start += ft.batch_size, ++step) {
      const std::size_t end = std::min(order.size(), start + ft.batch_size);
      std::vector<std::size_t> ends, targets;
      for (std::size_t i = start; i < end; ++i) {
        ends.push_back(train.pairs[order[i]].first);
        ends.push_back(train.pairs[order[i]].second);
        targets.push_back(train.labels[order[i]]);
      }
      std::vector<std::size_t> rows;
      const auto unique = detail::intern_ids(ends, rows);
      std::vector<std::size_t> ra, rb;
      for (std::size_t i = 0; i < rows.size(); i += 2) ra.push_back(rows[i]), rb.push_back(rows[i + 1]);
      auto drop_rng = rng_stream(ft.seed, step, stream::kDropout);
      Tape<T> tape;
      auto logits = pair_logits(tape, feats.rows(tape, unique, step, drop_rng), ra, rb, ft.keep, &drop_rng, true);
      detail::optimise(tape, mean(cross_entropy(softmax(logits, 1), std::span<const std::size_t>(targets))), head,
                       feats, ft);
    }
    feats.refresh();
    std::optional<double> valid_f1;
    const std::pair<const char*, const LabeledPairs*> parts[] = {{"train", &train}, {"valid", &valid}, {"test", &test}};
    for (const auto& [name, set] : parts) {
      if (set->pairs.empty()) continue;
      const auto m = evaluate(*set);
      result.curve.push_back({epoch, name, "accuracy", m.accuracy});
      result.curve.push_back({epoch, name, "f1", m.f1});
      if (std::string(name) == "valid") valid_f1 = m.f1;
      if (std::string(name) == "test") result.test = {{"accuracy", m.accuracy}, {"f1", m.f1}};
    }
    result.epochs_run = epoch;
    if (stopper.update(ft, valid_f1)) break;
  }
  return result;
}

/// Mean Precision@K and Recall@K over queries with a non-empty truth list.
template <std::floating_point T>
std::map<std::string, double> retrieval_metrics(const Tensor<T>& Z, std::span<const std::size_t> queries,
                                                const std::vector<std::vector<std::size_t>>& truth,
                                                std::span<const std::size_t> ks) {
  std::map<std::string, double> out;
  std::size_t used = 0;
  for (std::size_t q : queries) {
    if (truth.at(q).empty()) continue;
    const auto ranking = rank_by_dot(Z, q);
    for (std::size_t K : ks) {
      const auto pr = precision_recall_at_k(ranking, truth[q], K);
      out["P@" + std::to_string(K)] += pr.precision;
      out["R@" + std::to_string(K)] += pr.recall;
    }
    ++used;
  }
  if (used == 0) throw ValidationError("retrieval: no query has ground truth");
  for (auto& [_, v] : out) v /= static_cast<double>(used);
  return out;
}

/// Sampled-softmax retrieval over dot products; no head parameters. In
/// feature-based mode Z is frozen, so only the evaluation is produced.
template <std::floating_point T>
FinetuneResult finetune_topk_retrieval(ParameterStore<T>& encoder, const TrainConfig& pre,
                                       const ResearcherCorpus& corpus, const CommunityGraph& graph,
                                       const IdSplit& queries, const std::vector<std::vector<std::size_t>>& truth,
                                       const FinetuneConfig& ft, std::span<const std::size_t> ks = default_retrieval_ks()) {
  ft.validate();
  const std::size_t N = corpus.size();
  if (truth.size() != N) throw ValidationError("retrieval: one truth list per researcher expected");
  for (std::size_t K : ks)
    if (K == 0 || K > N - 1)
      throw ValidationError("K=" + std::to_string(K) + " exceeds the " + std::to_string(N - 1) + " candidates");

  Featurizer<T> feats(encoder, pre, corpus, graph, ft);
  ParameterStore<T> no_head;
  FinetuneResult result;
  detail::Stopper stopper;

  auto record = [&](std::size_t epoch) {
    std::optional<double> valid;
    const std::pair<const char*, const std::vector<std::size_t>*> parts[] = {
        {"train", &queries.train}, {"valid", &queries.valid}, {"test", &queries.test}};
    for (const auto& [name, ids] : parts) {
      if (ids->empty()) continue;
      const auto m = retrieval_metrics(feats.matrix(), *ids, truth, ks);
      for (const auto& [metric, v] : m) result.curve.push_back({epoch, name, metric, v});
      if (std::string(name) == "valid") valid = m.at("R@" + std::to_string(ks.back()));
      if (std::string(name) == "test") result.test = m;
    }
    result.epochs_run = epoch;
    return stopper.update(ft, valid);
  };

  if (ft.mode == TransferMode::FeatureBased) {
    record(0);
    return result;
  }

  std::vector<Pair> items;  // (query, positive)
  for (std::size_t q : queries.train)
    for (std::size_t p : truth.at(q)) items.emplace_back(q, p);
  if (items.empty()) throw ValidationError("retrieval: no training query has ground truth");
  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= ft.epochs; ++epoch) {
    auto shuffle_rng = rng_stream(ft.seed, epoch, stream::kShuffle);
    std::shuffle(items.begin(), items.end(), shuffle_rng);
    for (std::size_t start = 0; start < items.size(); start += ft.batch_size, ++step) {
      const std::size_t end = std::min(items.size(), start + ft.batch_size);
      auto neg_rng = rng_stream(ft.seed, step, stream::kNegatives);
      std::vector<std::size_t> flat;  // query, positive, negatives...
      for (std::size_t i = start; i < end; ++i) {
        const auto [q, p] = items[i];
        flat.push_back(q);
        flat.push_back(p);
        std::vector<std::size_t> pool;
        for (std::size_t j = 0; j < N; ++j)
          if (j != q && std::find(truth[q].begin(), truth[q].end(), j) == truth[q].end()) pool.push_back(j);
        if (pool.size() < ft.negatives) throw ValidationError("retrieval: not enough negatives for a query");
        std::sample(pool.begin(), pool.end(), std::back_inserter(flat), ft.negatives, neg_rng);
      }
      std::vector<std::size_t> rows;
      const auto unique = detail::intern_ids(flat, rows);
      const std::size_t width = ft.negatives + 2;
      std::vector<std::size_t> qrows;
      std::vector<std::vector<std::size_t>> cands;
      for (std::size_t i = 0; i < rows.size(); i += width) {
        qrows.push_back(rows[i]);
        cands.emplace_back(rows.begin() + i + 1, rows.begin() + i + width);
      }
      auto drop_rng = rng_stream(ft.seed, step, stream::kDropout);
      Tape<T> tape;
      auto Zb = feats.rows(tape, unique, step, drop_rng);
      auto loss = contrastive_loss(gather_rows(Zb, std::span<const std::size_t>(qrows)), Zb, cands, 1.0);
      detail::optimise(tape, loss, no_head, feats, ft);
    }
    feats.refresh();
    if (record(epoch)) break;
  }
  return result;
}

template <std::floating_point T>
FinetuneResult run_finetune(ParameterStore<T>& encoder, const TrainConfig& pre, const ResearcherCorpus& corpus,
                            const CommunityGraph& graph, const TaskData& data, const FinetuneConfig& ft) {
  switch (ft.task) {
    case Task::Classification: return finetune_classification(encoder, pre, corpus, graph, data.ids, ft);
    case Task::LinkPrediction: return finetune_link_prediction(encoder, pre, corpus, graph, data.pairs, ft);
    case Task::Retrieval: return finetune_topk_retrieval(encoder, pre, corpus, graph, data.ids, data.truth, ft);
  }
  throw ValidationError("unknown task");
}

// Learning-curve helpers.

inline std::optional<double> best_metric(std::span<const MetricRow> curve, const std::string& split,
                                         const std::string& metric) {
  std::optional<double> best;
  for (const auto& r : curve)
    if (r.split == split && r.metric == metric && (!best || r.value > *best)) best = r.value;
  return best;
}

inline std::optional<std::size_t> epochs_to_reach(std::span<const MetricRow> curve, const std::string& split,
                                                  const std::string& metric, double target) {
  for (const auto& r : curve)
    if (r.split == split && r.metric == metric && r.value >= target) return r.epoch;
  return std::nullopt;
}

struct PretrainEffect {
  FinetuneResult pretrained, random;
};

/// The same fine-tuning run from the given encoder and from a fresh random
/// initialisation; neither input store is modified.
template <std::floating_point T>
PretrainEffect compare_pretrain_effect(const ParameterStore<T>& pretrained, const TrainConfig& pre,
                                       const ResearcherCorpus& corpus, const CommunityGraph& graph,
                                       const TaskData& data, const FinetuneConfig& ft, std::uint64_t random_init_seed) {
  PretrainEffect out;
  ParameterStore<T> a = pretrained;
  out.pretrained = run_finetune(a, pre, corpus, graph, data, ft);
  ParameterStore<T> b = init_parameters<T>(pre.model, random_init_seed);
  out.random = run_finetune(b, pre, corpus, graph, data, ft);
  return out;
}

enum class Ablation { Full, M, MH, MC };

inline Ablation parse_ablation(const std::string& s) {
  if (s == "full") return Ablation::Full;
  if (s == "M") return Ablation::M;
  if (s == "M+H") return Ablation::MH;
  if (s == "M+C") return Ablation::MC;
  throw ValidationError("ablation must be full, M, M+H or M+C, got '" + s + "'");
}

inline const char* to_string(Ablation a) {
  switch (a) {
    case Ablation::Full: return "full";
    case Ablation::M: return "M";
    case Ablation::MH: return "M+H";
    case Ablation::MC: return "M+C";
  }
  return "?";
}

/// Zeroes the weights of the objectives a variant leaves out.
inline LossWeights ablation_weights(Ablation a, LossWeights full) {
  if (a == Ablation::M || a == Ablation::MC) full.lambda1 = 0;
  if (a == Ablation::M || a == Ablation::MH) full.lambda2 = 0;
  return full;
}

}  // namespace rpt
