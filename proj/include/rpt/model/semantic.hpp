#pragma once

#include <algorithm>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rpt/core/ops.hpp"
#include "rpt/corpus/corpus.hpp"
#include "rpt/model/params.hpp"

namespace rpt {

/// Masked token positions for one researcher: per document, 0-based token
/// indices (the prepended [SOD] is not counted) and the original ids.
struct MaskPlan {
  std::vector<std::vector<std::size_t>> positions;
  std::vector<std::vector<std::size_t>> targets;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : positions) n += p.size();
    return n;
  }
};

/// Attention weights captured from every block call, in call order.
template <std::floating_point T>
struct AttentionTrace {
  struct Entry {
    std::string block;
    AttentionLayout layout;
    std::vector<std::uint8_t> key_mask;
    Tensor<T> probs;  // [batch][head][query][key]
  };
  std::vector<Entry> entries;
};

/// Forward-pass switches shared by all encoders.
template <std::floating_point T>
struct EncodeContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // required when training with dropout_keep < 1
  AttentionTrace<T>* trace = nullptr;
};

/// Post-norm block: H = LN(X + MHA(X)), out = LN(H + MLP(H)).
template <std::floating_point T>
Var<T> transformer_block(Var<T> x, ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg,
                         const AttentionLayout& layout, std::span<const std::uint8_t> key_mask,
                         EncodeContext<T>& ctx) {
  Tape<T>& tape = *x.tape;
  auto P = [&](const char* name) { return tape.parameter(store.get(prefix + name)); };
  if (x.value().rank() != 2 || x.value().cols() != cfg.d) {
    throw DimensionError("transformer_block: expected rows x " + std::to_string(cfg.d) + ", got " +
                         shape_string(x.shape()));
  }
  const T eps = static_cast<T>(cfg.layer_norm_eps);
  const bool drop = ctx.training && cfg.dropout_keep < 1.0;
  if (drop && !ctx.rng) throw ValidationError("transformer_block: dropout needs an rng");

  Tensor<T> probs;
  auto q = matmul(x, P("attn.wq"));
  auto k = matmul(x, P("attn.wk"));
  auto v = matmul(x, P("attn.wv"));
  auto a = matmul(attention(q, k, v, layout, key_mask, ctx.trace ? &probs : nullptr), P("attn.wo"));
  if (ctx.trace) {
    ctx.trace->entries.push_back({prefix, layout, std::vector<std::uint8_t>(key_mask.begin(), key_mask.end()),
                                  std::move(probs)});
  }
  if (drop) a = dropout(a, cfg.dropout_keep, *ctx.rng, true);
  auto h = layer_norm(add(x, a), P("ln1.gain"), P("ln1.bias"), eps);
  auto f = linear(relu(linear(h, P("ffn.w1"), P("ffn.b1"))), P("ffn.w2"), P("ffn.b2"));
  if (drop) f = dropout(f, cfg.dropout_keep, *ctx.rng, true);
  return layer_norm(add(h, f), P("ln2.gain"), P("ln2.bias"), eps);
}

/// Encoded batch of researchers. Documents of all researchers are packed in
/// order; each occupies `seq_len` token rows, row 0 being [SOD].
template <std::floating_point T>
struct SemanticOutput {
  Var<T> u;             // researchers x d
  Var<T> doc_reps;      // packed documents x d, document-level [SOD] outputs
  Var<T> doc_states;    // packed documents x d, researcher-level outputs
  Var<T> token_states;  // (packed documents * seq_len) x d
  std::size_t seq_len = 0;
  std::vector<std::size_t> doc_offset;  // first packed document of each researcher

  std::size_t doc_row(std::size_t researcher, std::size_t doc) const { return doc_offset[researcher] + doc; }
  std::size_t token_row(std::size_t researcher, std::size_t doc, std::size_t token) const {
    return doc_row(researcher, doc) * seq_len + 1 + token;
  }
};

namespace detail {

inline void validate_researcher(const Researcher& r, const ModelConfig& cfg) {
  if (r.documents.empty()) throw ValidationError("researcher " + r.id + " has an empty document set");
  if (r.documents.size() > cfg.max_docs)
    throw ValidationError("researcher " + r.id + " exceeds max_docs; truncate first");
  for (const auto& d : r.documents) {
    if (d.token_ids.empty()) throw ValidationError("researcher " + r.id + " has an empty document");
    if (d.token_ids.size() > cfg.max_doc_len)
      throw ValidationError("researcher " + r.id + " has a document longer than max_doc_len; truncate first");
    for (std::size_t t : d.token_ids)
      if (t + 3 >= cfg.vocab_size)
        throw ValidationError("researcher " + r.id + ": unknown or reserved token id " + std::to_string(t));
  }
}

}  // namespace detail

/// Encodes researchers through the Document Transformer, the Researcher
/// Transformer (no document positions) and masked mean pooling. When `masks`
/// is non-empty, masks[i] (may be null) replaces planned tokens of researcher
/// i with [MASK].
template <std::floating_point T>
SemanticOutput<T> encode_researchers(Tape<T>& tape, ParameterStore<T>& store, const ModelConfig& cfg,
                                     std::span<const Researcher* const> researchers,
                                     std::span<const MaskPlan* const> masks, EncodeContext<T>& ctx) {
  if (researchers.empty()) throw ValidationError("encode_researchers: empty batch");
  if (!masks.empty() && masks.size() != researchers.size())
    throw ValidationError("encode_researchers: one mask plan per researcher expected");

  SemanticOutput<T> out;
  std::size_t n_docs = 0, max_len = 0, max_docs = 0;
  for (const Researcher* r : researchers) {
    detail::validate_researcher(*r, cfg);
    out.doc_offset.push_back(n_docs);
    n_docs += r->documents.size();
    max_docs = std::max(max_docs, r->documents.size());
    for (const auto& d : r->documents) max_len = std::max(max_len, d.token_ids.size());
  }
  const std::size_t S = max_len + 1;
  out.seq_len = S;
  const std::size_t mask_id = cfg.vocab_size - 2;

  // Document level: token + position embeddings, [SOD] at position 0.
  std::vector<std::size_t> tok_idx(n_docs * S, kNoRow), pos_idx(n_docs * S, kNoRow), sod_idx(n_docs * S, kNoRow);
  std::vector<std::uint8_t> tok_mask(n_docs * S, 0);
  for (std::size_t i = 0; i < researchers.size(); ++i) {
    const Researcher& r = *researchers[i];
    const MaskPlan* plan = masks.empty() ? nullptr : masks[i];
    if (plan && plan->positions.size() != r.documents.size())
      throw ValidationError("mask plan does not match researcher " + r.id);
    for (std::size_t j = 0; j < r.documents.size(); ++j) {
      const auto& toks = r.documents[j].token_ids;
      const std::size_t base = out.doc_row(i, j) * S;
      sod_idx[base] = 0;
      pos_idx[base] = 0;
      tok_mask[base] = 1;
      for (std::size_t t = 0; t < toks.size(); ++t) {
        tok_idx[base + 1 + t] = toks[t];
        pos_idx[base + 1 + t] = t + 1;
        tok_mask[base + 1 + t] = 1;
      }
      if (plan) {
        for (std::size_t p : plan->positions[j]) {
          if (p >= toks.size()) throw ValidationError("mask position out of range for researcher " + r.id);
          tok_idx[base + 1 + p] = mask_id;
        }
      }
    }
  }
  auto x = add(add(gather_rows(tape.parameter(store.get(pname::kTokenEmbedding)), std::span<const std::size_t>(tok_idx)),
                   gather_rows(tape.parameter(store.get(pname::kPositionEmbedding)), std::span<const std::size_t>(pos_idx))),
               gather_rows(tape.parameter(store.get(pname::kSodEmbedding)), std::span<const std::size_t>(sod_idx)));
  const AttentionLayout doc_layout{n_docs, S, cfg.heads};
  for (std::size_t l = 0; l < cfg.doc_layers; ++l)
    x = transformer_block(x, store, pname::layer(pname::kDocStack, l), cfg, doc_layout, tok_mask, ctx);
  out.token_states = x;

  std::vector<std::size_t> sod_rows(n_docs);
  for (std::size_t k = 0; k < n_docs; ++k) sod_rows[k] = k * S;
  out.doc_reps = gather_rows(x, std::span<const std::size_t>(sod_rows));

  // Researcher level over padded document slots.
  const std::size_t R = researchers.size();
  std::vector<std::size_t> slot_idx(R * max_docs, kNoRow), valid_rows;
  std::vector<std::uint8_t> slot_mask(R * max_docs, 0);
  std::vector<SparseEntry<T>> pool;
  for (std::size_t i = 0; i < R; ++i) {
    const std::size_t nd = researchers[i]->documents.size();
    for (std::size_t j = 0; j < nd; ++j) {
      slot_idx[i * max_docs + j] = out.doc_row(i, j);
      slot_mask[i * max_docs + j] = 1;
      valid_rows.push_back(i * max_docs + j);
      pool.push_back({i, i * max_docs + j, T{1} / static_cast<T>(nd)});
    }
  }
  auto y = gather_rows(out.doc_reps, std::span<const std::size_t>(slot_idx));
  const AttentionLayout res_layout{R, max_docs, cfg.heads};
  for (std::size_t l = 0; l < cfg.researcher_layers; ++l)
    y = transformer_block(y, store, pname::layer(pname::kResearcherStack, l), cfg, res_layout, slot_mask, ctx);
  out.doc_states = gather_rows(y, std::span<const std::size_t>(valid_rows));
  out.u = sparse_combine(y, R, std::move(pool));
  return out;
}

/// Convenience overload for a single unmasked researcher.
template <std::floating_point T>
SemanticOutput<T> encode_researcher(Tape<T>& tape, ParameterStore<T>& store, const ModelConfig& cfg,
                                    const Researcher& r, EncodeContext<T>& ctx) {
  const Researcher* one[] = {&r};
  return encode_researchers<T>(tape, store, cfg, one, {}, ctx);
}

/// Eval-mode semantic representations U (N x d) for a whole corpus, encoded
/// in chunks on throwaway tapes.
template <std::floating_point T>
Tensor<T> semantic_matrix(ParameterStore<T>& store, const ModelConfig& cfg, const std::vector<Researcher>& rs,
                          std::size_t chunk = 64) {
  Tensor<T> U({rs.size(), cfg.d});
  for (std::size_t start = 0; start < rs.size(); start += chunk) {
    const std::size_t end = std::min(rs.size(), start + chunk);
    std::vector<const Researcher*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&rs[i]);
    Tape<T> tape;
    EncodeContext<T> ctx;
    const auto enc = encode_researchers<T>(tape, store, cfg, batch, {}, ctx);
    const Tensor<T>& u = enc.u.value();
    std::copy(u.data(), u.data() + u.size(), U.data() + start * cfg.d);
  }
  return U;
}

}  // namespace rpt
