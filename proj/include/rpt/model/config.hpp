#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "rpt/core/error.hpp"

namespace rpt {

/// Architecture hyper-parameters shared by the semantic encoder, the
/// community encoder and the pre-training heads.
struct ModelConfig {
  std::size_t d = 64;
  std::size_t heads = 8;
  std::size_t ffn_hidden = 64;
  std::size_t doc_layers = 3;
  std::size_t researcher_layers = 3;
  std::size_t gnn_layers = 2;
  std::size_t max_doc_len = 20;
  std::size_t max_docs = 10;
  std::size_t vocab_size = 0;  // includes the three reserved tokens
  std::size_t num_relations = 3;
  std::size_t hops = 2;        // sampler depth h; also the CRP hop classes H
  double layer_norm_eps = 1e-5;
  double dropout_keep = 1.0;   // keep probability inside encoder blocks
  /// Std of the last GNN layer and of the HMLM/CRP heads. Small values keep
  /// every objective near its uniform-prediction loss at initialization.
  double head_init_std = 0.01;
  double gnn_out_init_std = 0.002;
  /// Token embeddings start well above the shared position/[SOD] rows so
  /// that documents (and researchers) are distinguishable at initialization.
  double token_init_std = 1.0;
  double position_init_std = 0.02;

  /// Number of composite relation types over paths of length 1..hops.
  std::size_t num_link_types() const {
    std::size_t total = 0, power = 1;
    for (std::size_t m = 1; m <= hops; ++m) {
      power *= num_relations;
      total += power;
    }
    return total;
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw ValidationError(std::string("model config: ") + name + " must be positive");
    };
    positive(d, "d");
    positive(heads, "heads");
    positive(ffn_hidden, "ffn_hidden");
    positive(doc_layers, "doc_layers");
    positive(researcher_layers, "researcher_layers");
    positive(gnn_layers, "gnn_layers");
    positive(max_doc_len, "max_doc_len");
    positive(max_docs, "max_docs");
    positive(num_relations, "num_relations");
    positive(hops, "hops");
    if (vocab_size < 4) throw ValidationError("model config: vocab_size must include at least one ordinary token");
    if (d % heads != 0) throw ValidationError("model config: d must be divisible by heads");
    if (!(dropout_keep > 0.0 && dropout_keep <= 1.0)) throw ValidationError("model config: dropout_keep must be in (0,1]");
    if (!(layer_norm_eps > 0.0)) throw ValidationError("model config: layer_norm_eps must be positive");
  }

  /// Stable hash of the architecture, stored in checkpoint headers.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t v : {d, heads, ffn_hidden, doc_layers, researcher_layers, gnn_layers, max_doc_len, max_docs,
                          vocab_size, num_relations, hops}) {
      h ^= static_cast<std::uint64_t>(v);
      h *= 1099511628211ULL;
    }
    return h;
  }
};

}  // namespace rpt
