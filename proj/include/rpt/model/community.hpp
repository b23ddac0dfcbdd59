#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "rpt/core/ops.hpp"
#include "rpt/corpus/graph.hpp"
#include "rpt/model/params.hpp"

namespace rpt {

struct SamplerConfig {
  std::size_t hops = 2;
  std::size_t per_hop = 8;
};

/// Sampled neighbourhood of one researcher. nodes[0] is the center; hop and
/// path are fixed when a node is first inserted. Each sampled link is a
/// directed edge leaving the node that was expanded.
struct LocalCommunity {
  std::size_t center = 0;
  std::vector<std::size_t> nodes;
  std::vector<std::size_t> hop;
  std::vector<std::vector<std::size_t>> path;  // relation sequence from the center
  std::vector<Edge> links;                     // global node ids
  bool isolated = false;

  std::size_t local_index(std::size_t global) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i] == global) return i;
    throw ValidationError("node " + std::to_string(global) + " not in community");
  }
};

/// Linear random sampling: hop 1 expands the center; hop s+1 expands one
/// uniformly chosen node of hop s. Each expansion draws min(n, degree)
/// incident edges without replacement, so at most hops * per_hop links.
inline LocalCommunity sample_local_community(const CommunityGraph& graph, std::size_t center,
                                             const SamplerConfig& cfg, std::mt19937_64& rng) {
  if (cfg.hops == 0 || cfg.per_hop == 0) throw ValidationError("sampler: hops and per_hop must be positive");
  if (center >= graph.num_nodes()) throw ValidationError("sampler: center " + std::to_string(center) + " not in graph");
  LocalCommunity c;
  c.center = center;
  c.nodes = {center};
  c.hop = {0};
  c.path = {{}};
  c.isolated = graph.degree(center) == 0;
  std::unordered_map<std::size_t, std::size_t> local{{center, 0}};

  std::vector<std::size_t> picked;
  for (std::size_t s = 0; s < cfg.hops; ++s) {
    std::vector<std::size_t> frontier;
    for (std::size_t i = 0; i < c.nodes.size(); ++i)
      if (c.hop[i] == s) frontier.push_back(i);
    if (frontier.empty()) break;
    const std::size_t x = frontier[std::uniform_int_distribution<std::size_t>(0, frontier.size() - 1)(rng)];
    const auto incident = graph.incident(c.nodes[x]);
    picked.clear();
    std::sample(incident.begin(), incident.end(), std::back_inserter(picked), cfg.per_hop, rng);
    for (std::size_t e : picked) {
      const Edge& edge = graph.edge(e);
      c.links.push_back(edge);
      if (local.contains(edge.dst)) continue;
      local.emplace(edge.dst, c.nodes.size());
      c.nodes.push_back(edge.dst);
      c.hop.push_back(c.hop[x] + 1);
      auto p = c.path[x];
      p.push_back(edge.relation);
      c.path.push_back(std::move(p));
    }
  }
  return c;
}

/// Index of the composite relation r_1 o ... o r_m among all sequences of
/// length 1..max_len: shorter sequences first, then base-|R| order.
inline std::size_t compose_path_type(std::span<const std::size_t> path, std::size_t num_relations,
                                     std::size_t max_len) {
  if (path.empty() || path.size() > max_len)
    throw ValidationError("compose_path_type: path length " + std::to_string(path.size()) + " outside [1, " +
                          std::to_string(max_len) + "]");
  std::size_t offset = 0, power = 1;
  for (std::size_t m = 1; m < path.size(); ++m) {
    power *= num_relations;
    offset += power;
  }
  std::size_t code = 0;
  for (std::size_t r : path) {
    if (r >= num_relations) throw ValidationError("compose_path_type: relation index out of range");
    code = code * num_relations + r;
  }
  return offset + code;
}

/// Node states of a batch of communities stacked in order.
template <std::floating_point T>
struct CommunityOutput {
  Var<T> c;            // communities x d
  Var<T> node_states;  // total nodes x d
  std::vector<std::size_t> node_offset;

  std::size_t node_row(std::size_t community, std::size_t local) const { return node_offset[community] + local; }
};

/// Relational GNN over sampled communities. Each sampled link passes a
/// message in both directions. Per layer, for node i:
///   h_i' = h_i W_self + sum_r mean_{j in N_r(i)} h_j W_r
/// with ReLU between layers, no bias, and c = mean of final node states.
/// `feature_rows[k][i]` is the row of `features` holding node i of community k.
template <std::floating_point T>
CommunityOutput<T> encode_communities(ParameterStore<T>& store, const ModelConfig& cfg,
                                      std::span<const LocalCommunity> communities, Var<T> features,
                                      const std::vector<std::vector<std::size_t>>& feature_rows) {
  if (communities.empty()) throw ValidationError("encode_communities: empty batch");
  if (feature_rows.size() != communities.size())
    throw ValidationError("encode_communities: feature rows missing for some community");
  Tape<T>& tape = *features.tape;
  const std::size_t K = cfg.num_relations, blocks = K + 1;

  CommunityOutput<T> out;
  std::vector<std::size_t> gather;
  std::vector<SparseEntry<T>> agg, readout;
  for (std::size_t k = 0; k < communities.size(); ++k) {
    const LocalCommunity& com = communities[k];
    if (feature_rows[k].size() != com.nodes.size())
      throw ValidationError("encode_communities: features missing for community of " + std::to_string(com.center));
    const std::size_t base = gather.size();
    out.node_offset.push_back(base);
    gather.insert(gather.end(), feature_rows[k].begin(), feature_rows[k].end());

    std::unordered_map<std::size_t, std::size_t> local;
    for (std::size_t i = 0; i < com.nodes.size(); ++i) local.emplace(com.nodes[i], i);
    // Messages (dst, relation, src) in local ids, both directions per link.
    std::vector<std::array<std::size_t, 3>> msgs;
    for (const Edge& e : com.links) {
      if (e.relation >= K) throw ValidationError("encode_communities: relation index out of range");
      const std::size_t a = local.at(e.src), b = local.at(e.dst);
      msgs.push_back({b, e.relation, a});
      msgs.push_back({a, e.relation, b});
    }
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> count;
    for (const auto& m : msgs) ++count[{m[0], m[1]}];
    for (std::size_t i = 0; i < com.nodes.size(); ++i) {
      agg.push_back({base + i, (base + i) * blocks, T{1}});
      readout.push_back({k, base + i, T{1} / static_cast<T>(com.nodes.size())});
    }
    for (const auto& m : msgs) {
      const T coef = T{1} / static_cast<T>(count[{m[0], m[1]}]);
      agg.push_back({base + m[0], (base + m[2]) * blocks + 1 + m[1], coef});
    }
  }
  const std::size_t n = gather.size();
  Var<T> h = gather_rows(features, std::span<const std::size_t>(gather));
  for (std::size_t l = 0; l < cfg.gnn_layers; ++l) {
    std::vector<Var<T>> ws = {tape.parameter(store.get(pname::gnn_self(l)))};
    for (std::size_t r = 0; r < K; ++r) ws.push_back(tape.parameter(store.get(pname::gnn_rel(l, r))));
    // One wide product, viewed as (n * blocks) x d rows [self, rel0, rel1, ...] per node.
    auto transformed = reshape(matmul(h, concat(ws, 1)), {n * blocks, cfg.d});
    h = sparse_combine(transformed, n, agg);
    if (l + 1 < cfg.gnn_layers) h = relu(h);
  }
  out.node_states = h;
  out.c = sparse_combine(h, communities.size(), std::move(readout));
  return out;
}

}  // namespace rpt
