#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "rpt/core/gradcheck.hpp"
#include "rpt/model/community.hpp"

namespace {

using rpt::CommunityGraph;
using rpt::Edge;
using rpt::LocalCommunity;
using rpt::Tensor;
using T = double;
using Matrix = std::vector<std::vector<double>>;

// Ring lattice: node i links to i+1..i+k (mod n) with relation (offset % 3).
CommunityGraph lattice(std::size_t n, std::size_t k) {
  CommunityGraph g(n, rpt::default_relation_names());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 1; o <= k; ++o) g.add_edge(i, o % 3, (i + o) % n);
  return g;
}

rpt::ModelConfig gnn_config() {
  rpt::ModelConfig cfg;
  cfg.d = 6;
  cfg.heads = 2;
  cfg.ffn_hidden = 6;
  cfg.doc_layers = 1;
  cfg.researcher_layers = 1;
  cfg.vocab_size = 8;
  return cfg;
}

// Makes every weight of the store O(1) so the dense comparison is not dominated by tiny values.
void rescale_gnn(rpt::ParameterStore<T>& store, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& [name, p] : store)
    if (name.starts_with("gnn.")) p.value = rpt::normal_tensor<T>(p.value.shape(), 0.5, rng);
}

TEST(Sampler, DegreeBelowBudgetTakesAllEdgesOnce) {
  CommunityGraph g(6, rpt::default_relation_names());
  for (std::size_t j = 1; j <= 5; ++j) g.add_edge(0, j % 3, j);
  std::mt19937_64 rng(1);
  const auto c = rpt::sample_local_community(g, 0, {.hops = 1, .per_hop = 8}, rng);
  EXPECT_EQ(c.links.size(), 5u);
  std::set<std::size_t> dst;
  for (const auto& e : c.links) dst.insert(e.dst);
  EXPECT_EQ(dst.size(), 5u);
  EXPECT_EQ(c.nodes.size(), 6u);
}

TEST(Sampler, LinearBudgetIsExactWhenDegreesSuffice) {
  const auto g = lattice(40, 5);  // every degree is 10
  std::mt19937_64 rng(2);
  for (int t = 0; t < 1000; ++t) {
    const auto c = rpt::sample_local_community(g, t % 40, {.hops = 2, .per_hop = 8}, rng);
    ASSERT_EQ(c.links.size(), 16u);
  }
}

TEST(Sampler, StructuralInvariants) {
  const auto g = lattice(25, 3);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 500; ++t) {
    const auto c = rpt::sample_local_community(g, t % 25, {.hops = 3, .per_hop = 4}, rng);
    EXPECT_LE(c.links.size(), 12u);
    EXPECT_EQ(c.hop[0], 0u);
    std::set<std::size_t> members(c.nodes.begin(), c.nodes.end());
    EXPECT_EQ(members.size(), c.nodes.size());
    for (std::size_t i = 1; i < c.nodes.size(); ++i) {
      EXPECT_GE(c.hop[i], 1u);
      EXPECT_LE(c.hop[i], 3u);
      EXPECT_EQ(c.path[i].size(), c.hop[i]);
    }
    for (const auto& e : c.links) {
      EXPECT_TRUE(members.contains(e.src));
      EXPECT_TRUE(members.contains(e.dst));
    }
  }
}

TEST(Sampler, PathGraphReachesEveryDepth) {
  CommunityGraph g(6, rpt::default_relation_names());
  for (std::size_t i = 0; i + 1 < 6; ++i) g.add_edge(i, 0, i + 1);
  std::mt19937_64 rng(4);
  const auto c = rpt::sample_local_community(g, 0, {.hops = 3, .per_hop = 4}, rng);
  // hop 1: 0-1; hop 2 expands 1: 1-0, 1-2; hop 3 expands 2: 2-1, 2-3.
  EXPECT_EQ(c.nodes, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(c.hop, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(c.links.size(), 5u);
  EXPECT_LE(c.links.size(), 12u);
}

TEST(Sampler, EveryIncidentEdgeEventuallyAppears) {
  const auto g = lattice(50, 10);  // center degree 20 > n
  std::mt19937_64 rng(5);
  std::set<std::size_t> seen;
  std::set<std::size_t> incident;
  for (std::size_t e : g.incident(7)) incident.insert(e);
  for (int t = 0; t < 10000; ++t) {
    const auto c = rpt::sample_local_community(g, 7, {.hops = 2, .per_hop = 8}, rng);
    for (std::size_t e : g.incident(7))
      for (const auto& l : c.links)
        if (l == g.edge(e)) seen.insert(e);
  }
  EXPECT_EQ(seen, incident);
}

TEST(Sampler, IsolatedCenterYieldsSelfOnlyCommunity) {
  CommunityGraph g(3, rpt::default_relation_names());
  g.add_edge(1, 0, 2);
  std::mt19937_64 rng(6);
  const auto c = rpt::sample_local_community(g, 0, {}, rng);
  EXPECT_TRUE(c.isolated);
  EXPECT_EQ(c.nodes, (std::vector<std::size_t>{0}));
  EXPECT_TRUE(c.links.empty());
  EXPECT_THROW(rpt::sample_local_community(g, 9, {}, rng), rpt::ValidationError);
}

TEST(Sampler, DeterministicUnderSeed) {
  const auto g = lattice(30, 6);
  std::mt19937_64 a(7), b(7);
  const auto x = rpt::sample_local_community(g, 3, {}, a);
  const auto y = rpt::sample_local_community(g, 3, {}, b);
  EXPECT_EQ(x.nodes, y.nodes);
  EXPECT_EQ(x.links, y.links);
}

TEST(PathType, CountAndBijection) {
  rpt::ModelConfig cfg;
  EXPECT_EQ(cfg.num_link_types(), 12u);
  std::set<std::size_t> seen;
  for (std::size_t a = 0; a < 3; ++a) {
    const std::size_t one[] = {a};
    EXPECT_EQ(rpt::compose_path_type(one, 3, 2), a);
    seen.insert(a);
    for (std::size_t b = 0; b < 3; ++b) {
      const std::size_t two[] = {a, b};
      seen.insert(rpt::compose_path_type(two, 3, 2));
    }
  }
  EXPECT_EQ(seen.size(), 12u);
  EXPECT_EQ(*seen.rbegin(), 11u);
  const std::size_t ab[] = {0, 1}, ba[] = {1, 0}, abc[] = {0, 1, 2};
  EXPECT_NE(rpt::compose_path_type(ab, 3, 2), rpt::compose_path_type(ba, 3, 2));
  EXPECT_THROW(rpt::compose_path_type(abc, 3, 2), rpt::ValidationError);
  EXPECT_THROW(rpt::compose_path_type({}, 3, 2), rpt::ValidationError);
}

// Dense brute-force propagation: explicit adjacency counts per relation.
struct DenseResult {
  Matrix states;
  std::vector<double> c;
};

Matrix matmul(const Matrix& a, const Tensor<T>& w) {
  Matrix out(a.size(), std::vector<double>(w.cols(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < w.rows(); ++k)
      for (std::size_t j = 0; j < w.cols(); ++j) out[i][j] += a[i][k] * w(k, j);
  return out;
}

DenseResult dense_oracle(const LocalCommunity& com, const Matrix& features, rpt::ParameterStore<T>& store,
                         const rpt::ModelConfig& cfg, bool untyped_weights = false) {
  const std::size_t n = com.nodes.size(), R = cfg.num_relations;
  std::vector<Matrix> adj(R, Matrix(n, std::vector<double>(n, 0.0)));
  for (const Edge& e : com.links) {
    const std::size_t a = com.local_index(e.src), b = com.local_index(e.dst);
    adj[e.relation][a][b] += 1;
    adj[e.relation][b][a] += 1;
  }
  Matrix h = features;
  for (std::size_t l = 0; l < cfg.gnn_layers; ++l) {
    Matrix next = matmul(h, store.get(rpt::pname::gnn_self(l)).value);
    for (std::size_t r = 0; r < R; ++r) {
      const Matrix hw = matmul(h, store.get(rpt::pname::gnn_rel(l, untyped_weights ? 0 : r)).value);
      for (std::size_t i = 0; i < n; ++i) {
        const double deg = std::accumulate(adj[r][i].begin(), adj[r][i].end(), 0.0);
        if (deg == 0) continue;
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t c = 0; c < cfg.d; ++c) next[i][c] += adj[r][i][j] / deg * hw[j][c];
      }
    }
    if (l + 1 < cfg.gnn_layers)
      for (auto& row : next)
        for (auto& v : row) v = std::max(v, 0.0);
    h = next;
  }
  std::vector<double> c(cfg.d, 0.0);
  for (const auto& row : h)
    for (std::size_t k = 0; k < cfg.d; ++k) c[k] += row[k] / n;
  return {h, c};
}

LocalCommunity community(std::vector<std::size_t> nodes, std::vector<Edge> links) {
  LocalCommunity c;
  c.center = nodes[0];
  c.nodes = std::move(nodes);
  c.links = std::move(links);
  c.hop.assign(c.nodes.size(), 1);
  c.hop[0] = 0;
  c.path.assign(c.nodes.size(), {0});
  c.path[0].clear();
  return c;
}

struct Encoded {
  Tensor<T> c;
  Tensor<T> states;
  std::vector<std::size_t> offsets;
};

Encoded run_gnn(rpt::ParameterStore<T>& store, const rpt::ModelConfig& cfg, const std::vector<LocalCommunity>& coms,
                const Tensor<T>& features) {
  rpt::Tape<T> tape;
  std::vector<std::vector<std::size_t>> rows;
  for (const auto& c : coms) rows.push_back(c.nodes);  // features indexed by global id
  auto out = rpt::encode_communities<T>(store, cfg, coms, tape.constant(features), rows);
  return {out.c.value(), out.node_states.value(), out.node_offset};
}

class GnnOracle : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg = gnn_config();
    store = rpt::init_parameters<T>(cfg, 11);
    rescale_gnn(store, 12);
    std::mt19937_64 rng(13);
    features = rpt::normal_tensor<T>({6, cfg.d}, 1.0, rng);
    for (std::size_t i = 0; i < 6; ++i) {
      std::vector<double> row(cfg.d);
      for (std::size_t k = 0; k < cfg.d; ++k) row[k] = features(i, k);
      dense.push_back(row);
    }
  }
  Matrix rows_of(const std::vector<std::size_t>& ids) const {
    Matrix m;
    for (std::size_t i : ids) m.push_back(dense[i]);
    return m;
  }
  rpt::ModelConfig cfg;
  rpt::ParameterStore<T> store;
  Tensor<T> features;
  Matrix dense;
};

TEST_F(GnnOracle, MatchesDensePropagationOnSmallSubgraphs) {
  const std::vector<LocalCommunity> coms = {
      community({2}, {}),
      community({0, 1}, {{0, 0, 1}}),
      community({3, 4, 5}, {{3, 1, 4}, {4, 2, 5}, {3, 1, 5}}),
      community({1, 2, 3, 0}, {{1, 0, 2}, {1, 0, 2}, {2, 1, 3}, {1, 2, 0}, {0, 0, 3}}),
  };
  const auto got = run_gnn(store, cfg, coms, features);
  for (std::size_t k = 0; k < coms.size(); ++k) {
    const auto want = dense_oracle(coms[k], rows_of(coms[k].nodes), store, cfg);
    for (std::size_t c = 0; c < cfg.d; ++c) EXPECT_NEAR(got.c(k, c), want.c[c], 1e-10);
    for (std::size_t i = 0; i < coms[k].nodes.size(); ++i)
      for (std::size_t c = 0; c < cfg.d; ++c) EXPECT_NEAR(got.states(got.offsets[k] + i, c), want.states[i][c], 1e-10);
  }
}

TEST_F(GnnOracle, SingleNodeUsesSelfPathOnly) {
  const auto got = run_gnn(store, cfg, {community({4}, {})}, features);
  Matrix h = {dense[4]};
  h = matmul(h, store.get(rpt::pname::gnn_self(0)).value);
  for (auto& v : h[0]) v = std::max(v, 0.0);
  h = matmul(h, store.get(rpt::pname::gnn_self(1)).value);
  for (std::size_t c = 0; c < cfg.d; ++c) EXPECT_NEAR(got.c(0, c), h[0][c], 1e-12);
}

TEST_F(GnnOracle, ParallelEdgesEachContribute) {
  const auto base = run_gnn(store, cfg, {community({0, 1, 2}, {{0, 0, 1}, {0, 0, 2}})}, features);
  const auto dup = run_gnn(store, cfg, {community({0, 1, 2}, {{0, 0, 1}, {0, 0, 2}, {0, 0, 1}})}, features);
  double diff = 0;
  for (std::size_t c = 0; c < cfg.d; ++c) diff = std::max(diff, std::abs(base.c(0, c) - dup.c(0, c)));
  EXPECT_GT(diff, 1e-6);
}

TEST_F(GnnOracle, EqualRelationWeightsReduceToUntypedReference) {
  for (std::size_t l = 0; l < cfg.gnn_layers; ++l)
    for (std::size_t r = 1; r < cfg.num_relations; ++r)
      store.get(rpt::pname::gnn_rel(l, r)).value = store.get(rpt::pname::gnn_rel(l, 0)).value;
  const auto com = community({1, 2, 3, 0}, {{1, 0, 2}, {2, 1, 3}, {1, 2, 0}, {0, 0, 3}});
  const auto got = run_gnn(store, cfg, {com}, features);
  const auto want = dense_oracle(com, rows_of(com.nodes), store, cfg, /*untyped_weights=*/true);
  for (std::size_t c = 0; c < cfg.d; ++c) EXPECT_NEAR(got.c(0, c), want.c[c], 1e-10);

  // Where every node hears a single relation, per-relation means are plain
  // neighbour means, so an untyped mean-aggregation GNN agrees exactly.
  const auto star = community({0, 1, 2, 3}, {{0, 1, 1}, {0, 1, 2}, {0, 1, 3}});
  const auto typed = run_gnn(store, cfg, {star}, features);
  auto relabelled = star;
  for (auto& e : relabelled.links) e.relation = 0;
  const auto untyped = dense_oracle(relabelled, rows_of(star.nodes), store, cfg, true);
  for (std::size_t c = 0; c < cfg.d; ++c) EXPECT_NEAR(typed.c(0, c), untyped.c[c], 1e-10);
}

TEST_F(GnnOracle, InvariantToNodeAndLinkOrder) {
  const auto a = community({1, 2, 3, 0}, {{1, 0, 2}, {2, 1, 3}, {1, 2, 0}, {0, 0, 3}});
  const auto b = community({1, 0, 3, 2}, {{0, 0, 3}, {1, 2, 0}, {2, 1, 3}, {1, 0, 2}});
  const auto got = run_gnn(store, cfg, {a, b}, features);
  for (std::size_t c = 0; c < cfg.d; ++c) EXPECT_NEAR(got.c(0, c), got.c(1, c), 1e-12);
}

TEST_F(GnnOracle, GradientsMatchFiniteDifferences) {
  const std::vector<LocalCommunity> coms = {community({0, 1, 2}, {{0, 0, 1}, {1, 2, 2}, {0, 1, 2}}),
                                            community({3, 4}, {{3, 2, 4}})};
  std::mt19937_64 rng(14);
  const Tensor<T> w = rpt::normal_tensor<T>({2, cfg.d}, 1.0, rng);
  auto loss = [&](rpt::Tape<T>& tape) {
    std::vector<std::vector<std::size_t>> rows = {coms[0].nodes, coms[1].nodes};
    auto out = rpt::encode_communities<T>(store, cfg, coms, tape.constant(features), rows);
    return rpt::sum(rpt::mul(out.c, tape.constant(w)));
  };
  for (const auto& rep : rpt::gradcheck<T>(store, {{"gnn", {"gnn."}}}, loss)) {
    EXPECT_TRUE(rep.passed) << rep.max_rel_error;
  }
}

TEST_F(GnnOracle, MissingFeaturesAreRejected) {
  rpt::Tape<T> tape;
  const std::vector<LocalCommunity> coms = {community({0, 1}, {{0, 0, 1}})};
  EXPECT_THROW(rpt::encode_communities<T>(store, cfg, coms, tape.constant(features), {{0}}), rpt::ValidationError);
}

}  // namespace
