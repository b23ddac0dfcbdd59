#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <random>
#include <unordered_map>

#include "rpt/core/adam.hpp"
#include "rpt/core/checkpoint.hpp"
#include "rpt/corpus/corpus.hpp"
#include "rpt/model/objectives.hpp"

namespace rpt {

/// Deterministic per-purpose random stream derived from (seed, step, id).
inline std::mt19937_64 rng_stream(std::uint64_t seed, std::uint64_t step, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                    static_cast<std::uint32_t>(id),   static_cast<std::uint32_t>(id >> 32)};
  return std::mt19937_64(seq);
}

namespace stream {
inline constexpr std::uint64_t kBatch = ~0ULL;
inline constexpr std::uint64_t kNegatives = ~0ULL - 1;
inline constexpr std::uint64_t kDropout = ~0ULL - 2;
inline constexpr std::uint64_t kShuffle = ~0ULL - 3;
inline constexpr std::uint64_t kHead = ~0ULL - 4;
}  // namespace stream

struct TrainConfig {
  ModelConfig model;
  std::size_t neighbors = 8;  // per-hop sample size n; hops come from model.hops
  ContrastiveConfig contrastive;
  LossWeights weights;
  AdamConfig adam;
  std::size_t batch_size = 64;
  std::size_t steps = 64000;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 1000;

  SamplerConfig sampler() const { return {model.hops, neighbors}; }

  void validate() const {
    model.validate();
    if (neighbors == 0) throw ValidationError("train config: neighbors must be positive");
    if (!(contrastive.temperature > 0)) throw ValidationError("train config: temperature must be positive");
    if (contrastive.negatives == 0) throw ValidationError("train config: negatives must be positive");
    if (weights.lambda1 < 0 || weights.lambda2 < 0) throw ValidationError("train config: loss weights must be >= 0");
    if (batch_size == 0 || steps == 0) throw ValidationError("train config: batch_size and steps must be positive");
    if (!(adam.lr > 0)) throw ValidationError("train config: lr must be positive");
  }
};

/// Host-side random choices of one pre-training step.
struct PretrainPlan {
  std::vector<std::size_t> centers;
  std::vector<LocalCommunity> communities;
  std::vector<MaskPlan> masks;                  // empty when HMLM is off
  std::vector<std::vector<CrpLink>> crp;        // empty when CRP is off
  std::vector<std::vector<std::size_t>> negatives;  // indices into `centers`
};

inline std::vector<std::size_t> sample_centers(std::size_t n, std::size_t batch, std::uint64_t seed, std::uint64_t step) {
  auto rng = rng_stream(seed, step, stream::kBatch);
  std::vector<std::size_t> all(n), out;
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::sample(all.begin(), all.end(), std::back_inserter(out), std::min(n, batch), rng);
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

/// Communities, mask plans, CRP links and negatives for the given centers.
/// Each center draws from its own stream so results do not depend on batch order.
inline PretrainPlan plan_for_centers(const ResearcherCorpus& corpus, const CommunityGraph& graph,
                                     const TrainConfig& cfg, std::uint64_t step, std::vector<std::size_t> centers) {
  PretrainPlan plan;
  plan.centers = std::move(centers);
  const std::size_t B = plan.centers.size(), k = cfg.contrastive.negatives;
  if (B < k + 1)
    throw ValidationError("pre-training batch of " + std::to_string(B) + " cannot supply " + std::to_string(k) +
                          " negatives");
  for (std::size_t c : plan.centers) {
    auto rng = rng_stream(cfg.seed, step, c);
    plan.communities.push_back(sample_local_community(graph, c, cfg.sampler(), rng));
    if (cfg.weights.lambda1 > 0) plan.masks.push_back(make_mask_plan(corpus.researchers[c], rng));
    if (cfg.weights.lambda2 > 0)
      plan.crp.push_back(select_crp_links(plan.communities.back(), cfg.model.num_relations, cfg.model.hops, rng));
  }
  for (std::size_t i = 0; i < B; ++i) {
    auto rng = rng_stream(cfg.seed, step, stream::kNegatives ^ plan.centers[i]);
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < B; ++j)
      if (j != i) others.push_back(j);
    std::vector<std::size_t> neg;
    std::sample(others.begin(), others.end(), std::back_inserter(neg), k, rng);
    plan.negatives.push_back(std::move(neg));
  }
  return plan;
}

inline PretrainPlan plan_pretrain_batch(const ResearcherCorpus& corpus, const CommunityGraph& graph,
                                        const TrainConfig& cfg, std::uint64_t step) {
  return plan_for_centers(corpus, graph, cfg, step, sample_centers(corpus.size(), cfg.batch_size, cfg.seed, step));
}

/// Semantic and community encodings of a batch. The unique researcher list
/// starts with the centers, so row i of `sem.u` belongs to centers[i].
template <std::floating_point T>
struct JointEncoding {
  std::vector<std::size_t> unique;
  SemanticOutput<T> sem;
  CommunityOutput<T> com;
};

template <std::floating_point T>
JointEncoding<T> encode_joint(Tape<T>& tape, ParameterStore<T>& store, const ModelConfig& cfg,
                              const ResearcherCorpus& corpus, std::span<const std::size_t> centers,
                              std::span<const LocalCommunity> communities, std::span<const MaskPlan> masks,
                              EncodeContext<T>& ctx) {
  JointEncoding<T> out;
  std::unordered_map<std::size_t, std::size_t> row;
  auto intern = [&](std::size_t id) {
    auto [it, inserted] = row.try_emplace(id, out.unique.size());
    if (inserted) out.unique.push_back(id);
    return it->second;
  };
  for (std::size_t c : centers) {
    if (row.contains(c)) throw ValidationError("encode_joint: duplicate center " + std::to_string(c));
    intern(c);
  }
  std::vector<std::vector<std::size_t>> feature_rows;
  for (const auto& com : communities) {
    std::vector<std::size_t> rows;
    for (std::size_t node : com.nodes) rows.push_back(intern(node));
    feature_rows.push_back(std::move(rows));
  }
  std::vector<const Researcher*> rs;
  for (std::size_t id : out.unique) {
    if (id >= corpus.size()) throw ValidationError("encode_joint: researcher index out of range");
    rs.push_back(&corpus.researchers[id]);
  }
  std::vector<const MaskPlan*> plan_ptrs;
  if (!masks.empty()) {
    plan_ptrs.assign(rs.size(), nullptr);
    for (std::size_t i = 0; i < masks.size(); ++i) plan_ptrs[i] = &masks[i];
  }
  out.sem = encode_researchers<T>(tape, store, cfg, rs, plan_ptrs, ctx);
  out.com = encode_communities<T>(store, cfg, communities, out.sem.u, feature_rows);
  return out;
}

template <std::floating_point T>
struct PretrainForward {
  Var<T> main, hmlm, crp, total;
};

/// Builds L_main + l1 * L_HMLM + l2 * L_CRP for one planned batch.
template <std::floating_point T>
PretrainForward<T> pretrain_forward(Tape<T>& tape, ParameterStore<T>& store, const TrainConfig& cfg,
                                    const ResearcherCorpus& corpus, const PretrainPlan& plan, EncodeContext<T>& ctx) {
  const auto enc = encode_joint<T>(tape, store, cfg.model, corpus, plan.centers, plan.communities, plan.masks, ctx);
  std::vector<std::vector<std::size_t>> candidates;
  for (std::size_t i = 0; i < plan.centers.size(); ++i) {
    std::vector<std::size_t> cand = {i};
    cand.insert(cand.end(), plan.negatives[i].begin(), plan.negatives[i].end());
    candidates.push_back(std::move(cand));
  }
  PretrainForward<T> f;
  f.main = contrastive_loss(enc.com.c, enc.sem.u, candidates, cfg.contrastive.temperature);
  if (plan.masks.empty()) {
    f.hmlm = tape.constant(Tensor<T>::scalar(T{0}));
  } else {
    std::vector<const MaskPlan*> ptrs;
    for (const auto& m : plan.masks) ptrs.push_back(&m);
    f.hmlm = hmlm_loss<T>(store, enc.sem, ptrs);
  }
  f.crp = plan.crp.empty() ? tape.constant(Tensor<T>::scalar(T{0})) : crp_loss<T>(store, enc.com, plan.crp, cfg.model.hops);
  f.total = total_loss(f.main, f.hmlm, f.crp, cfg.weights);
  return f;
}

struct PretrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::function<void(const LossRecord&)> on_step;
};

/// Runs cfg.steps optimisation steps. Writes loss.csv and checkpoint.ckpt
/// (every checkpoint_every steps and at the end) into out_dir. On a
/// non-finite loss the pre-step parameters are saved as last_good.ckpt and
/// the NumericalError is rethrown.
template <std::floating_point T>
std::vector<LossRecord> pretrain(ParameterStore<T>& store, const ResearcherCorpus& corpus,
                                 const CommunityGraph& graph, const TrainConfig& cfg, const PretrainOptions& opt = {}) {
  cfg.validate();
  if (graph.num_nodes() != corpus.size())
    throw ValidationError("corpus has " + std::to_string(corpus.size()) + " researchers but graph has " +
                          std::to_string(graph.num_nodes()) + " nodes");
  if (graph.num_relations() != cfg.model.num_relations)
    throw ValidationError("graph relation count does not match model config");
  if (corpus.vocab.size() != cfg.model.vocab_size) throw ValidationError("vocabulary size does not match model config");

  const bool files = !opt.out_dir.empty();
  std::ofstream csv;
  if (files) {
    std::filesystem::create_directories(opt.out_dir);
    csv.open(opt.out_dir / "loss.csv");
    if (!csv) throw IoError("cannot write " + (opt.out_dir / "loss.csv").string());
    csv << std::setprecision(10);
    write_loss_csv_header(csv);
  }
  const CheckpointHeader header{cfg.model.hash(), 0};
  std::vector<LossRecord> history;
  auto params = store.all();
  for (std::uint64_t step = 0; step < cfg.steps; ++step) {
    LossRecord rec{step};
    try {
      const auto plan = plan_pretrain_batch(corpus, graph, cfg, step);
      auto drop_rng = rng_stream(cfg.seed, step, stream::kDropout);
      EncodeContext<T> ctx{.training = true, .rng = &drop_rng};
      Tape<T> tape;
      const auto f = pretrain_forward<T>(tape, store, cfg, corpus, plan, ctx);
      rec.main = f.main.value().item();
      rec.hmlm = f.hmlm.value().item();
      rec.crp = f.crp.value().item();
      rec.total = f.total.value().item();
      if (!std::isfinite(rec.total)) throw NumericalError("non-finite total loss");
      tape.backward(f.total);
      for (auto* p : params)
        if (!p->grad.all_finite()) throw NumericalError("non-finite gradient");
      adam_step<T>(params, cfg.adam);
    } catch (const NumericalError& e) {
      store.zero_grad();
      if (files) save_checkpoint(opt.out_dir / "last_good.ckpt", store, {header.config_hash, step});
      throw NumericalError("step " + std::to_string(step) + ": " + e.what());
    }
    history.push_back(rec);
    if (opt.on_step) opt.on_step(rec);
    if (files) {
      write_loss_csv_row(csv, rec);
      if ((step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.steps)
        save_checkpoint(opt.out_dir / "checkpoint.ckpt", store, {header.config_hash, step + 1});
    }
  }
  return history;
}

/// Eval-mode matrices: U (semantic), X (community), Z = [U | X].
template <std::floating_point T>
struct RepresentationMatrix {
  Tensor<T> U, X, Z;
};

/// Encodes every researcher without dropout or masking; communities come from
/// streams keyed by `export_seed` so repeated exports agree exactly.
template <std::floating_point T>
RepresentationMatrix<T> export_representations(ParameterStore<T>& store, const TrainConfig& cfg,
                                               const ResearcherCorpus& corpus, const CommunityGraph& graph,
                                               std::uint64_t export_seed, std::size_t chunk = 128) {
  if (graph.num_nodes() != corpus.size()) throw ValidationError("export: corpus and graph disagree");
  const std::size_t N = corpus.size(), d = cfg.model.d;
  RepresentationMatrix<T> out;
  out.U = semantic_matrix<T>(store, cfg.model, corpus.researchers);
  out.X = Tensor<T>({N, d});
  for (std::size_t start = 0; start < N; start += chunk) {
    const std::size_t end = std::min(N, start + chunk);
    std::vector<LocalCommunity> coms;
    std::vector<std::vector<std::size_t>> rows;
    for (std::size_t i = start; i < end; ++i) {
      auto rng = rng_stream(export_seed, 0, i);
      coms.push_back(sample_local_community(graph, i, cfg.sampler(), rng));
      rows.push_back(coms.back().nodes);
    }
    Tape<T> tape;
    const auto enc = encode_communities<T>(store, cfg.model, coms, tape.constant(out.U), rows);
    const Tensor<T>& c = enc.c.value();
    std::copy(c.data(), c.data() + c.size(), out.X.data() + start * d);
  }
  out.Z = Tensor<T>({N, 2 * d});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      out.Z(i, k) = out.U(i, k);
      out.Z(i, d + k) = out.X(i, k);
    }
  return out;
}

/// Differentiable Z rows ([u | c]) for distinct researchers `ids`; communities
/// are drawn from streams keyed by (seed, step).
template <std::floating_point T>
Var<T> represent_batch(Tape<T>& tape, ParameterStore<T>& store, const TrainConfig& cfg,
                       const ResearcherCorpus& corpus, const CommunityGraph& graph, std::span<const std::size_t> ids,
                       std::uint64_t seed, std::uint64_t step, EncodeContext<T>& ctx) {
  std::vector<LocalCommunity> coms;
  for (std::size_t id : ids) {
    auto rng = rng_stream(seed, step, id);
    coms.push_back(sample_local_community(graph, id, cfg.sampler(), rng));
  }
  const auto enc = encode_joint<T>(tape, store, cfg.model, corpus, ids, coms, {}, ctx);
  std::vector<std::size_t> first(ids.size());
  std::iota(first.begin(), first.end(), std::size_t{0});
  return concat<T>({gather_rows(enc.sem.u, std::span<const std::size_t>(first)), enc.com.c}, 1);
}

}  // namespace rpt
