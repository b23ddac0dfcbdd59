#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rpt/core/gradcheck.hpp"
#include "rpt/model/semantic.hpp"

namespace {

using rpt::Document;
using rpt::Researcher;
using rpt::Tensor;
using T = double;

rpt::ModelConfig small_config() {
  rpt::ModelConfig cfg;
  cfg.d = 8;
  cfg.heads = 2;
  cfg.ffn_hidden = 8;
  cfg.doc_layers = 2;
  cfg.researcher_layers = 2;
  cfg.max_doc_len = 6;
  cfg.max_docs = 5;
  cfg.vocab_size = 10 + 3;
  return cfg;
}

Researcher make_researcher(std::vector<std::vector<std::size_t>> docs) {
  Researcher r{"r", {}, std::nullopt};
  for (auto& d : docs) r.documents.push_back({std::move(d), 2015});
  return r;
}

rpt::SemanticOutput<T> encode(rpt::Tape<T>& tape, rpt::ParameterStore<T>& store, const rpt::ModelConfig& cfg,
                              std::vector<const Researcher*> rs, rpt::AttentionTrace<T>* trace = nullptr) {
  rpt::EncodeContext<T> ctx{.trace = trace};
  return rpt::encode_researchers<T>(tape, store, cfg, rs, {}, ctx);
}

double max_diff_rows(const Tensor<T>& a, std::size_t ra, const Tensor<T>& b, std::size_t rb) {
  double m = 0;
  for (std::size_t c = 0; c < a.cols(); ++c) m = std::max(m, std::abs(a(ra, c) - b(rb, c)));
  return m;
}

TEST(HierTransformer, OutputShapes) {
  rpt::ModelConfig cfg;  // d = 64, 8 heads
  cfg.vocab_size = 20;
  auto store = rpt::init_parameters<T>(cfg, 1);
  const auto r = make_researcher({{1, 2, 3, 4, 5}});
  rpt::Tape<T> tape;
  auto out = encode(tape, store, cfg, {&r});
  EXPECT_EQ(out.u.shape(), (rpt::Shape{1, 64}));
  EXPECT_EQ(out.doc_reps.shape(), (rpt::Shape{1, 64}));
  EXPECT_EQ(out.token_states.shape(), (rpt::Shape{6, 64}));
}

TEST(HierTransformer, IdenticalDocumentsGiveIdenticalReps) {
  const auto cfg = small_config();
  auto store = rpt::init_parameters<T>(cfg, 2);
  const auto r = make_researcher({{1, 4, 2}, {1, 4, 2}});
  rpt::Tape<T> tape;
  auto out = encode(tape, store, cfg, {&r});
  EXPECT_EQ(max_diff_rows(out.doc_reps.value(), 0, out.doc_reps.value(), 1), 0.0);
}

TEST(HierTransformer, TokenOrderMattersThroughPositions) {
  const auto cfg = small_config();
  auto store = rpt::init_parameters<T>(cfg, 3);
  const auto a = make_researcher({{1, 4, 2}});
  const auto b = make_researcher({{2, 1, 4}});
  rpt::Tape<T> tape;
  auto out = encode(tape, store, cfg, {&a, &b});
  EXPECT_GT(max_diff_rows(out.doc_reps.value(), 0, out.doc_reps.value(), 1), 1e-6);
}

TEST(HierTransformer, SingleDocumentMeanIsItsRow) {
  const auto cfg = small_config();
  auto store = rpt::init_parameters<T>(cfg, 4);
  const auto r = make_researcher({{3, 3, 7}});
  rpt::Tape<T> tape;
  auto out = encode(tape, store, cfg, {&r});
  EXPECT_LT(max_diff_rows(out.u.value(), 0, out.doc_states.value(), 0), 1e-15);
}

TEST(HierTransformer, DocumentSetPermutationInvariance) {
  const auto cfg = small_config();
  auto store = rpt::init_parameters<T>(cfg, 5);
  const auto a = make_researcher({{1, 2}, {3, 4, 5, 6}, {7}, {8, 9, 0}});
  const auto b = make_researcher({{7}, {8, 9, 0}, {1, 2}, {3, 4, 5, 6}});
  rpt::Tape<T> tape;
  auto out = encode(tape, store, cfg, {&a, &b});
  EXPECT_LT(max_diff_rows(out.u.value(), 0, out.u.value(), 1), 1e-9);
}

TEST(HierTransformer, DuplicatedDocumentMatchesSingle) {
  const auto cfg = small_config();
  auto store = rpt::init_parameters<T>(cfg, 6);
  const auto one = make_researcher({{5, 1, 2}});
  const auto three = make_researcher({{5, 1, 2}, {5, 1, 2}, {5, 1, 2}});
  rpt::Tape<T> tape;
  auto out = encode(tape, store, cfg, {&one, &three});
  EXPECT_LT(max_diff_rows(out.u.value(), 0, out.u.value(), 1), 1e-12);
}

TEST(HierTransformer, BatchingAndPaddingDoNotLeak) {
  const auto cfg = small_config();
  auto store = rpt::init_parameters<T>(cfg, 7);
  const auto a = make_researcher({{1}, {2, 3}});
  const auto b = make_researcher({{4, 5, 6, 7, 8, 9}, {1, 2, 3}, {0}, {5}});
  rpt::Tape<T> tape;
  auto batch = encode(tape, store, cfg, {&a, &b});
  auto alone_a = encode(tape, store, cfg, {&a});
  auto alone_b = encode(tape, store, cfg, {&b});
  EXPECT_LT(max_diff_rows(batch.u.value(), 0, alone_a.u.value(), 0), 1e-12);
  EXPECT_LT(max_diff_rows(batch.u.value(), 1, alone_b.u.value(), 0), 1e-12);
}

TEST(HierTransformer, AttentionRowsSumToOneWithZeroMaskedMass) {
  const auto cfg = small_config();
  auto store = rpt::init_parameters<T>(cfg, 8);
  const auto a = make_researcher({{1}, {2, 3, 4, 5}});
  const auto b = make_researcher({{6, 7}});
  rpt::AttentionTrace<T> trace;
  rpt::Tape<T> tape;
  encode(tape, store, cfg, {&a, &b}, &trace);
  ASSERT_EQ(trace.entries.size(), cfg.doc_layers + cfg.researcher_layers);
  for (const auto& e : trace.entries) {
    const std::size_t s = e.layout.seq_len;
    for (std::size_t b = 0; b < e.layout.batch; ++b)
      for (std::size_t h = 0; h < e.layout.heads; ++h)
        for (std::size_t i = 0; i < s; ++i) {
          double row = 0;
          for (std::size_t j = 0; j < s; ++j) {
            const double p = e.probs[((b * e.layout.heads + h) * s + i) * s + j];
            if (!e.key_mask[b * s + j]) {
              EXPECT_EQ(p, 0.0);
            }
            row += p;
          }
          EXPECT_NEAR(row, 1.0, 1e-9);
        }
  }
}

// Explicit-loop evaluation of softmax(q k^T / sqrt(dh)) for one block's first call.
TEST(HierTransformer, AttentionMatchesLoopOracle) {
  auto cfg = small_config();
  cfg.doc_layers = 1;
  cfg.researcher_layers = 1;
  auto store = rpt::init_parameters<T>(cfg, 9);
  const auto r = make_researcher({{3, 8}});  // [SOD] + 2 tokens = 3 positions
  rpt::AttentionTrace<T> trace;
  rpt::Tape<T> tape;
  encode(tape, store, cfg, {&r}, &trace);

  // Rebuild the block input by hand.
  const auto& tok = store.get(rpt::pname::kTokenEmbedding).value;
  const auto& pos = store.get(rpt::pname::kPositionEmbedding).value;
  const auto& sod = store.get(rpt::pname::kSodEmbedding).value;
  const std::size_t d = cfg.d, dh = d / cfg.heads;
  std::vector<std::vector<double>> x(3, std::vector<double>(d));
  for (std::size_t c = 0; c < d; ++c) {
    x[0][c] = sod(0, c) + pos(0, c);
    x[1][c] = tok(3, c) + pos(1, c);
    x[2][c] = tok(8, c) + pos(2, c);
  }
  const std::string pre = rpt::pname::layer(rpt::pname::kDocStack, 0);
  const auto& wq = store.get(pre + "attn.wq").value;
  const auto& wk = store.get(pre + "attn.wk").value;
  auto project = [&](const Tensor<T>& w, std::size_t i, std::size_t col) {
    double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += x[i][k] * w(k, col);
    return s;
  };
  const auto& probs = trace.entries[0].probs;
  for (std::size_t h = 0; h < cfg.heads; ++h)
    for (std::size_t i = 0; i < 3; ++i) {
      double logits[3], mx = -1e300, z = 0;
      for (std::size_t j = 0; j < 3; ++j) {
        double dot = 0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += project(wq, i, c) * project(wk, j, c);
        logits[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, logits[j]);
      }
      for (double l : logits) z += std::exp(l - mx);
      for (std::size_t j = 0; j < 3; ++j)
        EXPECT_NEAR(probs[(h * 3 + i) * 3 + j], std::exp(logits[j] - mx) / z, 1e-10);
    }
}

TEST(HierTransformer, SingletonAndEqualRowAttention) {
  auto cfg = small_config();
  auto store = rpt::init_parameters<T>(cfg, 10);
  rpt::AttentionTrace<T> trace;
  rpt::EncodeContext<T> ctx{.trace = &trace};
  rpt::Tape<T> tape;
  const std::vector<std::uint8_t> one = {1};
  rpt::transformer_block(tape.constant(Tensor<T>({1, cfg.d}, 0.5)), store, rpt::pname::layer(rpt::pname::kDocStack, 0),
                         cfg, {1, 1, cfg.heads}, one, ctx);
  for (std::size_t h = 0; h < cfg.heads; ++h) EXPECT_EQ(trace.entries[0].probs[h], 1.0);

  std::mt19937_64 rng(1);
  Tensor<T> row = rpt::normal_tensor<T>({1, cfg.d}, 1.0, rng);
  Tensor<T> two({2, cfg.d});
  for (std::size_t c = 0; c < cfg.d; ++c) two(0, c) = two(1, c) = row(0, c);
  const std::vector<std::uint8_t> both = {1, 1};
  rpt::transformer_block(tape.constant(two), store, rpt::pname::layer(rpt::pname::kDocStack, 0), cfg,
                         {1, 2, cfg.heads}, both, ctx);
  for (double p : trace.entries[1].probs.values()) EXPECT_DOUBLE_EQ(p, 0.5);
}

TEST(HierTransformer, PostNormRowsHaveUnitVariance) {
  const auto cfg = small_config();
  auto store = rpt::init_parameters<T>(cfg, 11);
  const auto r = make_researcher({{1, 2, 3}, {4}});
  rpt::Tape<T> tape;
  auto out = encode(tape, store, cfg, {&r});
  const auto& u = out.doc_states.value();
  for (std::size_t i = 0; i < u.rows(); ++i) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < u.cols(); ++c) m += u(i, c) / u.cols();
    for (std::size_t c = 0; c < u.cols(); ++c) v += (u(i, c) - m) * (u(i, c) - m) / u.cols();
    EXPECT_NEAR(m, 0.0, 1e-9);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
}

TEST(HierTransformer, GradientsMatchFiniteDifferences) {
  const auto cfg = small_config();
  auto store = rpt::init_parameters<T>(cfg, 12);
  const auto r = make_researcher({{1, 2, 3}, {4, 5, 6}});
  std::mt19937_64 rng(13);
  const Tensor<T> w = rpt::normal_tensor<T>({1, cfg.d}, 1.0, rng);
  auto loss = [&](rpt::Tape<T>& tape) {
    auto out = encode(tape, store, cfg, {&r});
    return rpt::sum(rpt::mul(out.u, tape.constant(w)));
  };
  const std::vector<rpt::ParameterGroup> groups = {
      {"embeddings", {"sem.embed."}}, {"document stack", {"sem.doc."}}, {"researcher stack", {"sem.res."}}};
  for (const auto& rep : rpt::gradcheck<T>(store, groups, loss)) {
    EXPECT_TRUE(rep.passed) << rep.group << " max rel err " << rep.max_rel_error;
    EXPECT_GT(rep.max_abs_grad, 0.0) << rep.group;
  }
}

TEST(HierTransformer, InvalidInputsAreRejected) {
  const auto cfg = small_config();
  auto store = rpt::init_parameters<T>(cfg, 14);
  rpt::Tape<T> tape;
  const auto empty = make_researcher({});
  EXPECT_THROW(encode(tape, store, cfg, {&empty}), rpt::ValidationError);
  const auto reserved = make_researcher({{10}});
  EXPECT_THROW(encode(tape, store, cfg, {&reserved}), rpt::ValidationError);
  const auto too_long = make_researcher({{1, 1, 1, 1, 1, 1, 1}});
  EXPECT_THROW(encode(tape, store, cfg, {&too_long}), rpt::ValidationError);
}

}  // namespace
