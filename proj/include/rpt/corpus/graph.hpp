#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rpt/core/error.hpp"

namespace rpt {

/// Relation indices used by publication ingestion.
enum class Relation : std::size_t { Collaborating = 0, Colleague = 1, CoVenue = 2 };

inline std::vector<std::string> default_relation_names() {
  return {"Collaborating", "Colleague", "CoVenue"};
}

/// One directed half of a relation instance.
struct Edge {
  std::size_t src;
  std::size_t relation;
  std::size_t dst;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Typed multigraph over researchers. Each relation instance is undirected and
/// stored as two directed edges at indices 2k and 2k+1; parallel edges of the
/// same type are kept.
class CommunityGraph {
 public:
  CommunityGraph() = default;
  CommunityGraph(std::size_t num_nodes, std::vector<std::string> relation_names)
      : relation_names_(std::move(relation_names)), adjacency_(num_nodes) {
    if (relation_names_.empty()) throw ValidationError("community graph needs at least one relation");
    for (std::size_t i = 0; i < relation_names_.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (relation_names_[i] == relation_names_[j]) {
          throw ValidationError("duplicate relation name: " + relation_names_[i]);
        }
  }

  void add_edge(std::size_t a, std::size_t relation, std::size_t b) {
    if (a >= num_nodes() || b >= num_nodes()) throw ValidationError("edge endpoint out of range");
    if (relation >= num_relations()) throw ValidationError("relation index out of range");
    if (a == b) throw ValidationError("self-loop edges are not allowed");
    adjacency_[a].push_back(edges_.size());
    edges_.push_back({a, relation, b});
    adjacency_[b].push_back(edges_.size());
    edges_.push_back({b, relation, a});
  }

  void add_edge(std::size_t a, Relation r, std::size_t b) { add_edge(a, static_cast<std::size_t>(r), b); }

  std::size_t num_nodes() const noexcept { return adjacency_.size(); }
  std::size_t num_relations() const noexcept { return relation_names_.size(); }
  std::size_t num_edges() const noexcept { return edges_.size() / 2; }
  const std::vector<Edge>& directed_edges() const noexcept { return edges_; }
  const Edge& edge(std::size_t directed_index) const { return edges_.at(directed_index); }

  /// Indices of directed edges leaving `node`.
  std::span<const std::size_t> incident(std::size_t node) const { return adjacency_.at(node); }
  std::size_t degree(std::size_t node) const { return adjacency_.at(node).size(); }

  std::size_t degree(std::size_t node, std::size_t relation) const {
    std::size_t n = 0;
    for (std::size_t e : incident(node)) n += edges_[e].relation == relation;
    return n;
  }

  const std::vector<std::string>& relation_names() const noexcept { return relation_names_; }
  const std::string& relation_name(std::size_t r) const { return relation_names_.at(r); }

  std::size_t relation_index(const std::string& name) const {
    for (std::size_t i = 0; i < relation_names_.size(); ++i)
      if (relation_names_[i] == name) return i;
    throw ValidationError("unknown relation: " + name);
  }

 private:
  std::vector<std::string> relation_names_;
  std::vector<std::vector<std::size_t>> adjacency_;
  std::vector<Edge> edges_;
};

}  // namespace rpt
