#pragma once

#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "rpt/core/parameter.hpp"
#include "rpt/model/config.hpp"

namespace rpt {

/// Parameter names. Layer indices are zero-padded so lexicographic order of
/// the store matches layer order.
namespace pname {

inline std::string layer(const std::string& stack, std::size_t l) {
  char buf[16];
  std::snprintf(buf, sizeof buf, ".l%02zu.", l);
  return stack + buf;
}

inline const std::string kTokenEmbedding = "sem.embed.token";
inline const std::string kPositionEmbedding = "sem.embed.position";
inline const std::string kSodEmbedding = "sem.embed.sod";
inline const std::string kDocStack = "sem.doc";
inline const std::string kResearcherStack = "sem.res";
inline const std::string kGnn = "gnn";
inline const std::string kHmlmW = "head.hmlm.w";
inline const std::string kHmlmB = "head.hmlm.b";
inline const std::string kCrpTypeW = "head.crp_type.w";
inline const std::string kCrpTypeB = "head.crp_type.b";
inline const std::string kCrpHopW = "head.crp_hop.w";
inline const std::string kCrpHopB = "head.crp_hop.b";

inline std::string gnn_self(std::size_t l) { return layer(kGnn, l) + "self"; }
inline std::string gnn_rel(std::size_t l, std::size_t r) { return layer(kGnn, l) + "rel" + std::to_string(r); }

}  // namespace pname

/// Prefixes that group parameters for gradient checks and freezing.
inline const std::vector<std::string> kEncoderPrefixes = {"sem.", "gnn."};

template <std::floating_point T>
void add_block_parameters(ParameterStore<T>& store, const std::string& prefix, const ModelConfig& cfg,
                          std::mt19937_64& rng) {
  const std::size_t d = cfg.d, f = cfg.ffn_hidden;
  for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) store.add(prefix + w, xavier_tensor<T>(d, d, rng));
  store.add(prefix + "ffn.w1", xavier_tensor<T>(d, f, rng));
  store.add(prefix + "ffn.b1", Tensor<T>({f}));
  store.add(prefix + "ffn.w2", xavier_tensor<T>(f, d, rng));
  store.add(prefix + "ffn.b2", Tensor<T>({d}));
  for (const char* ln : {"ln1", "ln2"}) {
    store.add(prefix + ln + ".gain", Tensor<T>({d}, T{1}));
    store.add(prefix + ln + ".bias", Tensor<T>({d}));
  }
}

/// Creates every pre-training parameter with a deterministic initialization.
template <std::floating_point T>
ParameterStore<T> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParameterStore<T> store;
  const std::size_t d = cfg.d;
  store.add(pname::kTokenEmbedding, normal_tensor<T>({cfg.vocab_size, d}, cfg.token_init_std, rng));
  store.add(pname::kPositionEmbedding, normal_tensor<T>({cfg.max_doc_len + 1, d}, cfg.position_init_std, rng));
  store.add(pname::kSodEmbedding, normal_tensor<T>({1, d}, cfg.position_init_std, rng));
  for (std::size_t l = 0; l < cfg.doc_layers; ++l)
    add_block_parameters(store, pname::layer(pname::kDocStack, l), cfg, rng);
  for (std::size_t l = 0; l < cfg.researcher_layers; ++l)
    add_block_parameters(store, pname::layer(pname::kResearcherStack, l), cfg, rng);
  for (std::size_t l = 0; l < cfg.gnn_layers; ++l) {
    const bool last = l + 1 == cfg.gnn_layers;
    auto weight = [&] { return last ? normal_tensor<T>({d, d}, cfg.gnn_out_init_std, rng) : xavier_tensor<T>(d, d, rng); };
    store.add(pname::gnn_self(l), weight());
    for (std::size_t r = 0; r < cfg.num_relations; ++r) store.add(pname::gnn_rel(l, r), weight());
  }
  store.add(pname::kHmlmW, normal_tensor<T>({d, cfg.vocab_size}, cfg.head_init_std, rng));
  store.add(pname::kHmlmB, Tensor<T>({cfg.vocab_size}));
  store.add(pname::kCrpTypeW, normal_tensor<T>({d, cfg.num_link_types()}, cfg.head_init_std, rng));
  store.add(pname::kCrpTypeB, Tensor<T>({cfg.num_link_types()}));
  store.add(pname::kCrpHopW, normal_tensor<T>({d, cfg.hops}, cfg.head_init_std, rng));
  store.add(pname::kCrpHopB, Tensor<T>({cfg.hops}));
  return store;
}

}  // namespace rpt
