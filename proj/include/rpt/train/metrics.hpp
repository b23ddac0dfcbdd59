#pragma once

#include <algorithm>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "rpt/core/error.hpp"
#include "rpt/core/tensor.hpp"

namespace rpt {

struct ClassificationMetrics {
  double accuracy = 0, micro_f1 = 0, macro_f1 = 0;
  std::vector<double> per_class_f1;
};

/// confusion[truth][pred] counts.
inline std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::size_t> truth,
                                                              std::span<const std::size_t> pred,
                                                              std::size_t classes) {
  if (truth.size() != pred.size()) throw ValidationError("confusion_matrix: size mismatch");
  std::vector<std::vector<std::size_t>> m(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || pred[i] >= classes) throw ValidationError("confusion_matrix: label out of range");
    ++m[truth[i]][pred[i]];
  }
  return m;
}

// Macro F1 averages over classes that occur in the truth or the predictions.
inline ClassificationMetrics metrics_from_confusion(const std::vector<std::vector<std::size_t>>& m) {
  const std::size_t C = m.size();
  std::size_t total = 0, correct = 0, tp_sum = 0, fp_sum = 0, fn_sum = 0;
  ClassificationMetrics out;
  out.per_class_f1.assign(C, 0.0);
  double macro = 0;
  std::size_t active = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t tp = m[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < C; ++o) {
      total += m[c][o];
      if (o == c) continue;
      fn += m[c][o];
      fp += m[o][c];
    }
    correct += tp;
    tp_sum += tp;
    fp_sum += fp;
    fn_sum += fn;
    if (tp + fp + fn == 0) continue;
    out.per_class_f1[c] = 2.0 * tp / (2.0 * tp + fp + fn);
    macro += out.per_class_f1[c];
    ++active;
  }
  if (total == 0) throw ValidationError("classification metrics: no predictions");
  out.accuracy = static_cast<double>(correct) / total;
  out.micro_f1 = tp_sum == 0 ? 0.0 : 2.0 * tp_sum / (2.0 * tp_sum + fp_sum + fn_sum);
  out.macro_f1 = active ? macro / active : 0.0;
  return out;
}

inline ClassificationMetrics classification_metrics(std::span<const std::size_t> truth,
                                                    std::span<const std::size_t> pred, std::size_t classes) {
  return metrics_from_confusion(confusion_matrix(truth, pred, classes));
}

struct BinaryMetrics {
  double accuracy = 0, f1 = 0;  // f1 of the positive class
};

inline BinaryMetrics binary_metrics(std::span<const std::size_t> truth, std::span<const std::size_t> pred) {
  const auto m = confusion_matrix(truth, pred, 2);
  const std::size_t tp = m[1][1], fp = m[0][1], fn = m[1][0], tn = m[0][0];
  const std::size_t total = tp + fp + fn + tn;
  if (total == 0) throw ValidationError("binary metrics: no predictions");
  return {static_cast<double>(tp + tn) / total, tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn)};
}

/// Candidates other than `query` ordered by descending score, ties by index.
template <std::floating_point T>
std::vector<std::size_t> rank_by_dot(const Tensor<T>& Z, std::size_t query) {
  const std::size_t N = Z.rows(), D = Z.cols();
  std::vector<double> score(N, 0.0);
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t k = 0; k < D; ++k) score[j] += static_cast<double>(Z(query, k)) * Z(j, k);
  std::vector<std::size_t> order;
  for (std::size_t j = 0; j < N; ++j)
    if (j != query) order.push_back(j);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  return order;
}

struct PrecisionRecall {
  double precision = 0, recall = 0;
};

inline PrecisionRecall precision_recall_at_k(std::span<const std::size_t> ranking, std::span<const std::size_t> truth,
                                             std::size_t K) {
  if (K == 0 || K > ranking.size())
    throw ValidationError("K=" + std::to_string(K) + " exceeds the " + std::to_string(ranking.size()) + " candidates");
  if (truth.empty()) throw ValidationError("retrieval: empty ground truth");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < K; ++i)
    if (std::find(truth.begin(), truth.end(), ranking[i]) != truth.end()) ++hits;
  return {static_cast<double>(hits) / K, static_cast<double>(hits) / truth.size()};
}

inline const std::vector<std::size_t>& default_retrieval_ks() {
  static const std::vector<std::size_t> ks = {1, 5, 10, 15, 20};
  return ks;
}

struct MetricRow {
  std::size_t epoch;
  std::string split, metric;
  double value;
};

inline void write_metrics_csv(std::ostream& out, std::span<const MetricRow> rows) {
  out << "epoch,split,metric,value\n";
  for (const auto& r : rows) out << r.epoch << ',' << r.split << ',' << r.metric << ',' << r.value << '\n';
}

}  // namespace rpt
