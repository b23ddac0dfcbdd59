#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "rpt/core/ops.hpp"
#include "rpt/model/community.hpp"
#include "rpt/model/semantic.hpp"

namespace rpt {

struct ContrastiveConfig {
  double temperature = 1.0;
  std::size_t negatives = 3;
};

struct LossWeights {
  double lambda1 = 0.1;  // HMLM
  double lambda2 = 0.1;  // CRP
};

/// InfoNCE over rows: for pair i the candidates are candidates[i] (the
/// positive first, then negatives), all rows of `u`. Returns the batch mean of
///   -log softmax(c_i . u_cand / tau)[0].
template <std::floating_point T>
Var<T> contrastive_loss(Var<T> c, Var<T> u, const std::vector<std::vector<std::size_t>>& candidates,
                        double temperature) {
  if (!(temperature > 0.0)) throw ValidationError("contrastive_loss: temperature must be positive");
  const std::size_t B = c.value().rows();
  if (candidates.size() != B) throw DimensionError("contrastive_loss: one candidate list per community expected");
  const std::size_t width = candidates.empty() ? 0 : candidates[0].size();
  if (width < 2) throw ValidationError("contrastive_loss: need at least one negative");
  std::vector<std::size_t> c_rows, u_rows;
  for (std::size_t i = 0; i < B; ++i) {
    if (candidates[i].size() != width) throw ValidationError("contrastive_loss: ragged negative lists");
    for (std::size_t r : candidates[i]) {
      c_rows.push_back(i);
      u_rows.push_back(r);
    }
  }
  auto scores = row_sum(mul(gather_rows(c, std::span<const std::size_t>(c_rows)),
                            gather_rows(u, std::span<const std::size_t>(u_rows))));
  auto logits = scale(reshape(scores, {B, width}), static_cast<T>(1.0 / temperature));
  const std::vector<std::size_t> targets(B, 0);
  return mean(cross_entropy(softmax(logits, 1), std::span<const std::size_t>(targets)));
}

/// Single-pair form: c, u_pos and each negative are length-d vectors.
template <std::floating_point T>
Var<T> contrastive_loss(Var<T> c, Var<T> u_pos, const std::vector<Var<T>>& u_negs, double temperature) {
  std::vector<Var<T>> rows = {u_pos};
  rows.insert(rows.end(), u_negs.begin(), u_negs.end());
  const std::size_t d = c.value().size();
  for (auto& r : rows) r = reshape(r, {1, d});
  std::vector<std::size_t> cand(rows.size());
  std::iota(cand.begin(), cand.end(), std::size_t{0});
  return contrastive_loss(reshape(c, {1, d}), concat(rows, 0), {cand}, temperature);
}

/// ceil(0.15 * len) masked tokens per document, chosen uniformly without
/// replacement; all replaced by [MASK].
inline MaskPlan make_mask_plan(const Researcher& r, std::mt19937_64& rng) {
  MaskPlan plan;
  for (const auto& doc : r.documents) {
    const std::size_t len = doc.token_ids.size();
    const std::size_t k = (15 * len + 99) / 100;
    std::vector<std::size_t> idx(len);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<std::size_t> pos;
    std::sample(idx.begin(), idx.end(), std::back_inserter(pos), k, rng);
    std::vector<std::size_t> tgt;
    for (std::size_t p : pos) tgt.push_back(doc.token_ids[p]);
    plan.positions.push_back(std::move(pos));
    plan.targets.push_back(std::move(tgt));
  }
  return plan;
}

/// Masked tokens of the researchers encoded in `enc`; plans[i] may be null.
template <std::floating_point T>
Var<T> hmlm_loss(ParameterStore<T>& store, const SemanticOutput<T>& enc,
                 std::span<const MaskPlan* const> plans) {
  Tape<T>& tape = *enc.u.tape;
  std::vector<std::size_t> tok_rows, doc_rows, targets;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    if (!plans[i]) continue;
    const MaskPlan& p = *plans[i];
    if (i + 1 < enc.doc_offset.size() && enc.doc_offset[i] + p.positions.size() != enc.doc_offset[i + 1])
      throw ValidationError("hmlm_loss: plan/document mismatch");
    for (std::size_t j = 0; j < p.positions.size(); ++j) {
      if (p.targets[j].size() != p.positions[j].size()) throw ValidationError("hmlm_loss: plan targets mismatch");
      for (std::size_t m = 0; m < p.positions[j].size(); ++m) {
        tok_rows.push_back(enc.token_row(i, j, p.positions[j][m]));
        doc_rows.push_back(enc.doc_row(i, j));
        targets.push_back(p.targets[j][m]);
      }
    }
  }
  if (targets.empty()) return tape.constant(Tensor<T>::scalar(T{0}));
  auto feats = add(gather_rows(enc.token_states, std::span<const std::size_t>(tok_rows)),
                   gather_rows(enc.doc_states, std::span<const std::size_t>(doc_rows)));
  auto logits = linear(feats, tape.parameter(store.get(pname::kHmlmW)), tape.parameter(store.get(pname::kHmlmB)));
  return mean(cross_entropy(softmax(logits, 1), std::span<const std::size_t>(targets)));
}

/// One CRP training link: center-to-node path inside a community.
struct CrpLink {
  std::size_t node;       // local index in the community (never the center)
  std::size_t link_type;  // compose_path_type of the path
  std::size_t hop;        // 1..H
};

/// max(1, ceil(0.15 * paths)) center-rooted paths chosen uniformly; empty
/// for a center-only community.
inline std::vector<CrpLink> select_crp_links(const LocalCommunity& com, std::size_t num_relations,
                                             std::size_t max_hops, std::mt19937_64& rng) {
  const std::size_t paths = com.nodes.size() - 1;
  if (paths == 0) return {};
  const std::size_t k = std::max<std::size_t>(1, (15 * paths + 99) / 100);
  std::vector<std::size_t> idx(paths);
  std::iota(idx.begin(), idx.end(), std::size_t{1});
  std::vector<std::size_t> pick;
  std::sample(idx.begin(), idx.end(), std::back_inserter(pick), k, rng);
  std::vector<CrpLink> out;
  for (std::size_t i : pick) {
    out.push_back({i, compose_path_type(com.path[i], num_relations, max_hops), com.hop[i]});
  }
  return out;
}

/// Mean over links of CE(type) + CE(hop), features h_center * h_node.
template <std::floating_point T>
Var<T> crp_loss(ParameterStore<T>& store, const CommunityOutput<T>& enc,
                const std::vector<std::vector<CrpLink>>& links, std::size_t max_hops) {
  Tape<T>& tape = *enc.c.tape;
  std::vector<std::size_t> a_rows, b_rows, types, hops;
  if (links.size() > enc.node_offset.size()) throw ValidationError("crp_loss: more link lists than communities");
  for (std::size_t k = 0; k < links.size(); ++k)
    for (const auto& l : links[k]) {
      if (l.hop == 0 || l.hop > max_hops) throw ValidationError("crp_loss: hop outside [1, H]");
      a_rows.push_back(enc.node_row(k, 0));
      b_rows.push_back(enc.node_row(k, l.node));
      types.push_back(l.link_type);
      hops.push_back(l.hop - 1);
    }
  if (types.empty()) return tape.constant(Tensor<T>::scalar(T{0}));
  auto feats = mul(gather_rows(enc.node_states, std::span<const std::size_t>(a_rows)),
                   gather_rows(enc.node_states, std::span<const std::size_t>(b_rows)));
  auto type_p = softmax(linear(feats, tape.parameter(store.get(pname::kCrpTypeW)),
                               tape.parameter(store.get(pname::kCrpTypeB))), 1);
  auto hop_p = softmax(linear(feats, tape.parameter(store.get(pname::kCrpHopW)),
                              tape.parameter(store.get(pname::kCrpHopB))), 1);
  return mean(add(cross_entropy(type_p, std::span<const std::size_t>(types)),
                  cross_entropy(hop_p, std::span<const std::size_t>(hops))));
}

template <std::floating_point T>
Var<T> total_loss(Var<T> main, Var<T> hmlm, Var<T> crp, const LossWeights& w) {
  if (w.lambda1 < 0 || w.lambda2 < 0) throw ValidationError("loss weights must be non-negative");
  for (Var<T> v : {main, hmlm, crp})
    if (!v.value().all_finite()) throw NumericalError("non-finite loss component");
  return add(add(main, scale(hmlm, static_cast<T>(w.lambda1))), scale(crp, static_cast<T>(w.lambda2)));
}

/// Loss components of one pre-training step.
struct LossRecord {
  std::uint64_t step = 0;
  double main = 0, hmlm = 0, crp = 0, total = 0;
};

inline void write_loss_csv_header(std::ostream& out) { out << "step,L_main,L_HMLM,L_CRP,total\n"; }

inline void write_loss_csv_row(std::ostream& out, const LossRecord& r) {
  out << r.step << ',' << r.main << ',' << r.hmlm << ',' << r.crp << ',' << r.total << '\n';
}

}  // namespace rpt
