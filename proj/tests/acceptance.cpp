// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Optional arguments select criteria by number.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "rpt/core/gradcheck.hpp"
#include "rpt/corpus/synth.hpp"
#include "rpt/train/finetune.hpp"
#include "toy_fixture.hpp"

namespace {

using namespace rpt;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Shared desk-scale experiment: 160 researchers, 4 planted topics.

constexpr std::size_t kSteps = 300;
const std::uint64_t kSeeds[] = {1, 2, 3};

struct Experiment {
  IngestResult data;
  TrainConfig cfg;
  IdSplit split;
};

Experiment make_experiment(std::uint64_t seed) {
  SynthConfig sc;
  sc.seed = seed;
  sc.n_researchers = 160;
  auto synth = synth_corpus(sc);
  Experiment ex;
  ex.data = ingest_publications(synth.records, {.seed = seed});
  assign_labels(ex.data.corpus, synth.labels);
  auto& m = ex.cfg.model;
  m.d = 32;
  m.heads = 4;
  m.doc_layers = 1;
  m.researcher_layers = 1;
  m.max_docs = 6;
  m.max_doc_len = 12;
  m.vocab_size = ex.data.corpus.vocab.size();
  ex.data.corpus = truncate_corpus(ex.data.corpus, m.max_docs, m.max_doc_len);
  ex.cfg.adam.lr = 1e-3;
  ex.cfg.steps = kSteps;
  ex.cfg.seed = seed;
  ex.split = random_split(labeled_indices(ex.data.corpus), 0.6, 0.0, seed);
  return ex;
}

struct Pretrained {
  ParameterStore<float> store;
  std::vector<LossRecord> history;
  double seconds;
};

// Pretrained encoders keyed by (seed, variant), shared between criteria.
std::map<std::pair<std::uint64_t, Ablation>, Pretrained> g_cache;
std::map<std::uint64_t, Experiment> g_experiments;

const Experiment& experiment(std::uint64_t seed) {
  if (!g_experiments.contains(seed)) g_experiments.emplace(seed, make_experiment(seed));
  return g_experiments.at(seed);
}

const Pretrained& pretrained(std::uint64_t seed, Ablation variant) {
  const auto key = std::make_pair(seed, variant);
  if (auto it = g_cache.find(key); it != g_cache.end()) return it->second;
  const auto& ex = experiment(seed);
  auto cfg = ex.cfg;
  cfg.weights = ablation_weights(variant, cfg.weights);
  const auto t0 = Clock::now();
  Pretrained p{init_parameters<float>(cfg.model, seed), {}, 0};
  p.history = pretrain(p.store, ex.data.corpus, ex.data.graph, cfg);
  p.seconds = seconds_since(t0);
  std::cerr << "  pretrained seed " << seed << " variant " << to_string(variant) << " in " << fmt(p.seconds, 3)
            << " s\n";
  return g_cache.emplace(key, std::move(p)).first->second;
}

FinetuneConfig classification_config(std::uint64_t seed, TransferMode mode) {
  auto ft = FinetuneConfig::defaults(Task::Classification, mode);
  ft.seed = seed;
  return ft;
}

fs::path out_dir() {
  const fs::path dir = "acceptance_out";
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// 1. Gradient correctness.

Verdict gradient_correctness() {
  const auto t0 = Clock::now();
  auto toy = testing::make_toy(16, 21);
  auto store = init_parameters<double>(toy.cfg.model, 21);
  // Larger head weights so every group carries a non-trivial gradient.
  std::mt19937_64 rng(22);
  for (const std::string& name : {pname::kHmlmW, pname::kCrpTypeW, pname::kCrpHopW})
    store.get(name).value = normal_tensor<double>(store.get(name).value.shape(), 0.5, rng);
  const auto plan = plan_pretrain_batch(toy.data.corpus, toy.data.graph, toy.cfg, 0);
  const std::vector<ParameterGroup> groups = {
      {"token embedding", {pname::kTokenEmbedding}},
      {"position embedding", {pname::kPositionEmbedding}},
      {"[SOD] embedding", {pname::kSodEmbedding}},
      {"document transformer", {"sem.doc."}},
      {"researcher transformer", {"sem.res."}},
      {"relational gnn", {"gnn."}},
      {"hmlm decoder", {"head.hmlm."}},
      {"crp type head", {"head.crp_type."}},
      {"crp hop head", {"head.crp_hop."}},
  };
  auto loss = [&](Tape<double>& tape) {
    EncodeContext<double> ctx;
    return pretrain_forward<double>(tape, store, toy.cfg, toy.data.corpus, plan, ctx).total;
  };
  GradcheckOptions opt;
  opt.tolerance = 1e-4;
  const auto reports = gradcheck<double>(store, groups, loss, opt);
  bool ok = true;
  double worst = 0;
  std::size_t coords = 0;
  for (const auto& r : reports) {
    ok = ok && r.passed && r.max_abs_grad > 0;
    worst = std::max(worst, r.max_rel_error);
    coords += r.coordinates;
    std::cerr << "  " << r.group << ": coords " << r.coordinates << " max rel " << r.max_rel_error << "\n";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 60;
  return {ok, std::to_string(reports.size()) + " groups, " + std::to_string(coords) + " coords, max rel err " +
                  fmt(worst, 3) + " (< 1e-4), " + fmt(secs, 3) + " s (< 60)"};
}

// ---------------------------------------------------------------------------
// 2. Loss anchors at initialization.

Verdict loss_anchors() {
  const auto& ex = experiment(1);
  auto store = init_parameters<double>(ex.cfg.model, 1);
  const auto plan = plan_pretrain_batch(ex.data.corpus, ex.data.graph, ex.cfg, 0);
  Tape<double> tape;
  EncodeContext<double> ctx;
  const auto f = pretrain_forward<double>(tape, store, ex.cfg, ex.data.corpus, plan, ctx);
  const double k = static_cast<double>(ex.cfg.contrastive.negatives);
  const double V = static_cast<double>(ex.cfg.model.vocab_size);
  const double Tt = static_cast<double>(ex.cfg.model.num_link_types()), H = static_cast<double>(ex.cfg.model.hops);
  const double want[] = {std::log(1 + k), std::log(V), std::log(Tt) + std::log(H)};
  const double got[] = {f.main.value().item(), f.hmlm.value().item(), f.crp.value().item()};
  const char* names[] = {"L_main", "L_HMLM", "L_CRP"};
  bool ok = true;
  std::string detail;
  for (int i = 0; i < 3; ++i) {
    const double rel = std::abs(got[i] - want[i]) / want[i];
    ok = ok && rel < 0.10;
    detail += std::string(i ? ", " : "") + names[i] + " " + fmt(got[i]) + " vs " + fmt(want[i]) + " (" +
              fmt(100 * rel, 2) + "%)";
  }
  return {ok, detail + "; tolerance 10%"};
}

// ---------------------------------------------------------------------------
// 3. Attention rows and permutation invariance.

Verdict attention_invariants() {
  const auto& ex = experiment(1);
  auto store = init_parameters<double>(ex.cfg.model, 3);
  std::vector<const Researcher*> rs;
  for (std::size_t i = 0; i < 24; ++i) rs.push_back(&ex.data.corpus.researchers[i]);
  AttentionTrace<double> trace;
  EncodeContext<double> ctx{.trace = &trace};
  Tape<double> tape;
  encode_researchers<double>(tape, store, ex.cfg.model, rs, {}, ctx);
  double worst_sum = 0, worst_masked = 0;
  std::size_t rows = 0;
  for (const auto& e : trace.entries) {
    const std::size_t s = e.layout.seq_len;
    for (std::size_t b = 0; b < e.layout.batch; ++b)
      for (std::size_t h = 0; h < e.layout.heads; ++h)
        for (std::size_t i = 0; i < s; ++i) {
          const double* p = e.probs.data() + ((b * e.layout.heads + h) * s + i) * s;
          double sum = 0;
          for (std::size_t j = 0; j < s; ++j) {
            sum += p[j];
            if (!e.key_mask[b * s + j]) worst_masked = std::max(worst_masked, std::abs(p[j]));
          }
          worst_sum = std::max(worst_sum, std::abs(sum - 1));
          ++rows;
        }
  }

  double worst_perm = 0;
  std::mt19937_64 rng(5);
  for (std::size_t i = 0; i < 24; ++i) {
    Researcher shuffled = ex.data.corpus.researchers[i];
    std::shuffle(shuffled.documents.begin(), shuffled.documents.end(), rng);
    Tape<double> t1, t2;
    EncodeContext<double> c1, c2;
    const auto a = encode_researcher<double>(t1, store, ex.cfg.model, ex.data.corpus.researchers[i], c1).u.value();
    const auto b = encode_researcher<double>(t2, store, ex.cfg.model, shuffled, c2).u.value();
    for (std::size_t k = 0; k < a.size(); ++k) worst_perm = std::max(worst_perm, std::abs(a.data()[k] - b.data()[k]));
  }
  const bool ok = worst_sum < 1e-9 && worst_masked == 0 && worst_perm < 1e-9 && rows > 0;
  return {ok, std::to_string(rows) + " rows: max |sum-1| " + fmt(worst_sum, 3) + ", max masked mass " +
                  fmt(worst_masked, 3) + ", max |u - u_perm| " + fmt(worst_perm, 3) + " (tolerance 1e-9)"};
}

// ---------------------------------------------------------------------------
// 4. Sampler contract.

Verdict sampler_contract() {
  // Random graph with minimum degree >= 8 and mixed relations.
  std::mt19937_64 rng(7);
  const std::size_t N = 60;
  CommunityGraph g(N, default_relation_names());
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t o = 1; o <= 4; ++o) g.add_edge(i, rng() % 3, (i + o) % N);
  for (int extra = 0; extra < 80; ++extra) {
    const std::size_t a = rng() % N, b = rng() % N;
    if (a != b) g.add_edge(a, rng() % 3, b);
  }
  std::size_t min_degree = N;
  for (std::size_t i = 0; i < N; ++i) min_degree = std::min(min_degree, g.degree(i));

  std::size_t exact = 0;
  for (int t = 0; t < 1000; ++t) {
    auto srng = rng_stream(7, t, 0);
    const auto com = sample_local_community(g, t % N, {2, 8}, srng);
    if (com.links.size() == 16) ++exact;
  }

  CommunityGraph star(6, default_relation_names());
  for (std::size_t leaf = 1; leaf <= 5; ++leaf) star.add_edge(0, leaf % 3, leaf);
  bool five = true;
  for (int t = 0; t < 100; ++t) {
    auto srng = rng_stream(8, t, 0);
    const auto com = sample_local_community(star, 0, {1, 8}, srng);
    std::set<std::size_t> distinct;
    for (const auto& e : com.links) distinct.insert(e.src == 0 ? e.dst : e.src);
    five = five && com.links.size() == 5 && distinct.size() == 5;
  }

  const std::size_t center = 11;
  std::set<std::pair<std::size_t, std::size_t>> incident, seen;
  for (std::size_t ei : g.incident(center)) {
    const auto& e = g.directed_edges()[ei];
    incident.insert({e.relation, e.src == center ? e.dst : e.src});
  }
  for (int t = 0; t < 10000; ++t) {
    auto srng = rng_stream(9, t, center);
    for (const auto& e : sample_local_community(g, center, {2, 8}, srng).links)
      if (e.src == center || e.dst == center) seen.insert({e.relation, e.src == center ? e.dst : e.src});
  }
  std::size_t covered = 0;
  for (const auto& e : incident) covered += seen.contains(e);

  const bool ok = min_degree >= 8 && exact == 1000 && five && covered == incident.size();
  return {ok, "min degree " + std::to_string(min_degree) + ": " + std::to_string(exact) +
                  "/1000 samples with 16 links; degree-5 star gives 5 distinct links: " + (five ? "yes" : "no") +
                  "; coverage " + std::to_string(covered) + "/" + std::to_string(incident.size()) +
                  " incident edges in 10k resamples"};
}

// ---------------------------------------------------------------------------
// 5. Oracle equivalence.

using Matrix = std::vector<std::vector<double>>;

Matrix times(const Matrix& a, const Tensor<double>& w) {
  Matrix out(a.size(), std::vector<double>(w.cols(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < w.rows(); ++k)
      for (std::size_t j = 0; j < w.cols(); ++j) out[i][j] += a[i][k] * w(k, j);
  return out;
}

// Message lists per (node, relation), one entry per link endpoint.
std::vector<double> brute_force_community(const LocalCommunity& com, const Matrix& features,
                                          ParameterStore<double>& store, const ModelConfig& cfg) {
  const std::size_t n = com.nodes.size();
  auto local = [&](std::size_t id) {
    return static_cast<std::size_t>(std::find(com.nodes.begin(), com.nodes.end(), id) - com.nodes.begin());
  };
  std::vector<std::vector<std::vector<std::size_t>>> heard(n, std::vector<std::vector<std::size_t>>(cfg.num_relations));
  for (const auto& e : com.links) {
    heard[local(e.dst)][e.relation].push_back(local(e.src));
    heard[local(e.src)][e.relation].push_back(local(e.dst));
  }
  Matrix h = features;
  for (std::size_t l = 0; l < cfg.gnn_layers; ++l) {
    Matrix next = times(h, store.get(pname::gnn_self(l)).value);
    for (std::size_t r = 0; r < cfg.num_relations; ++r) {
      const auto& W = store.get(pname::gnn_rel(l, r)).value;
      for (std::size_t i = 0; i < n; ++i) {
        if (heard[i][r].empty()) continue;
        std::vector<double> avg(cfg.d, 0.0);
        for (std::size_t j : heard[i][r])
          for (std::size_t c = 0; c < cfg.d; ++c) avg[c] += h[j][c] / heard[i][r].size();
        for (std::size_t c = 0; c < cfg.d; ++c)
          for (std::size_t k = 0; k < cfg.d; ++k) next[i][c] += avg[k] * W(k, c);
      }
    }
    if (l + 1 < cfg.gnn_layers)
      for (auto& row : next)
        for (double& v : row) v = std::max(v, 0.0);
    h = std::move(next);
  }
  std::vector<double> out(cfg.d, 0.0);
  for (const auto& row : h)
    for (std::size_t c = 0; c < cfg.d; ++c) out[c] += row[c] / n;
  return out;
}

Verdict oracle_equivalence() {
  ModelConfig cfg;
  cfg.d = 6;
  cfg.heads = 2;
  cfg.ffn_hidden = 6;
  cfg.doc_layers = cfg.researcher_layers = 1;
  cfg.vocab_size = 8;
  auto store = init_parameters<double>(cfg, 31);
  std::mt19937_64 rng(32);
  for (std::size_t l = 0; l < cfg.gnn_layers; ++l) {
    store.get(pname::gnn_self(l)).value = normal_tensor<double>({cfg.d, cfg.d}, 0.5, rng);
    for (std::size_t r = 0; r < cfg.num_relations; ++r)
      store.get(pname::gnn_rel(l, r)).value = normal_tensor<double>({cfg.d, cfg.d}, 0.5, rng);
  }
  // Small graph; the sampler with n = 1..2 yields subgraphs of at most 4 nodes.
  CommunityGraph g(7, default_relation_names());
  const std::size_t edges[][3] = {{0, 0, 1}, {0, 1, 2}, {1, 2, 2}, {2, 0, 3}, {3, 1, 4}, {4, 2, 5}, {5, 0, 6}, {1, 1, 3}, {0, 2, 1}};
  for (const auto& e : edges) g.add_edge(e[0], e[1], e[2]);
  const auto features = normal_tensor<double>({7, cfg.d}, 1.0, rng);
  std::vector<LocalCommunity> coms;
  for (int t = 0; coms.size() < 40 && t < 1000; ++t) {
    auto srng = rng_stream(33, t, 0);
    auto com = sample_local_community(g, t % 7, {1 + t % 2, 1 + (t / 2) % 2}, srng);
    if (com.nodes.size() <= 4) coms.push_back(std::move(com));
  }
  Tape<double> tape;
  std::vector<std::vector<std::size_t>> rows;
  for (const auto& c : coms) rows.push_back(c.nodes);
  const auto got = encode_communities<double>(store, cfg, coms, tape.constant(features), rows).c.value();
  double worst_gnn = 0;
  for (std::size_t k = 0; k < coms.size(); ++k) {
    Matrix f;
    for (std::size_t id : coms[k].nodes) f.emplace_back(features.data() + id * cfg.d, features.data() + (id + 1) * cfg.d);
    const auto want = brute_force_community(coms[k], f, store, cfg);
    for (std::size_t c = 0; c < cfg.d; ++c) worst_gnn = std::max(worst_gnn, std::abs(got(k, c) - want[c]));
  }

  // Attention on sequences of 1..3 tokens, two heads, random key masks.
  double worst_attn = 0;
  std::size_t cases = 0;
  for (std::size_t s = 1; s <= 3; ++s)
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t B = 2, heads = 2, d = 4, dh = d / heads;
      Tape<double> t;
      const auto Q = normal_tensor<double>({B * s, d}, 1.0, rng), K = normal_tensor<double>({B * s, d}, 1.0, rng),
                 V = normal_tensor<double>({B * s, d}, 1.0, rng);
      std::vector<std::uint8_t> mask(B * s);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t j = 0; j < s; ++j) mask[b * s + j] = rng() % 2;
        mask[b * s + rng() % s] = 1;
      }
      const auto out = attention(t.constant(Q), t.constant(K), t.constant(V), {B, s, heads}, mask).value();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t i = 0; i < s; ++i) {
            std::vector<double> w(s, 0.0);
            double z = 0;
            for (std::size_t j = 0; j < s; ++j) {
              if (!mask[b * s + j]) continue;
              double dot = 0;
              for (std::size_t c = 0; c < dh; ++c) dot += Q(b * s + i, h * dh + c) * K(b * s + j, h * dh + c);
              w[j] = std::exp(dot / std::sqrt(double(dh)));
              z += w[j];
            }
            for (std::size_t c = 0; c < dh; ++c) {
              double want = 0;
              for (std::size_t j = 0; j < s; ++j) want += w[j] / z * V(b * s + j, h * dh + c);
              worst_attn = std::max(worst_attn, std::abs(out(b * s + i, h * dh + c) - want));
            }
          }
      ++cases;
    }
  const bool ok = coms.size() >= 20 && worst_gnn < 1e-10 && worst_attn < 1e-10;
  return {ok, std::to_string(coms.size()) + " sampled subgraphs (<= 4 nodes) max diff " + fmt(worst_gnn, 3) + "; " +
                  std::to_string(cases) + " attention cases (<= 3 tokens) max diff " + fmt(worst_attn, 3) +
                  " (tolerance 1e-10)"};
}

// ---------------------------------------------------------------------------
// 6. Trainability.

double loss_ratio(const std::vector<LossRecord>& h) {
  double first = 0, last = 0;
  for (std::size_t i = 0; i < 10; ++i) first += h[i].total, last += h[h.size() - 1 - i].total;
  return last / first;
}

Verdict trainability() {
  const auto t0 = Clock::now();
  const auto& ex = experiment(1);
  const auto& p = pretrained(1, Ablation::Full);
  const double ratio = loss_ratio(p.history);
  auto store = p.store;
  const auto r = finetune_classification(store, ex.cfg, ex.data.corpus, ex.data.graph, ex.split,
                                         classification_config(1, TransferMode::EndToEnd));
  std::ofstream csv(out_dir() / "trainability_curve.csv");
  write_metrics_csv(csv, r.curve);
  const auto train_epoch = epochs_to_reach(r.curve, "train", "accuracy", 1.0);
  const auto test_epoch = epochs_to_reach(r.curve, "test", "micro_f1", 0.9);
  const double secs = seconds_since(t0);
  const bool ok = ratio <= 0.5 && train_epoch && *train_epoch <= 10 && test_epoch && *test_epoch <= 10 && secs < 600;
  auto epoch_text = [](std::optional<std::size_t> e) { return e ? "epoch " + std::to_string(*e) : std::string("never"); };
  return {ok, "total loss (mean of last 10 / first 10 of " + std::to_string(kSteps) + " steps) " + fmt(ratio, 3) +
                  " (<= 0.5); train accuracy 1.0 at " + epoch_text(train_epoch) + ", test micro-F1 >= 0.9 at " +
                  epoch_text(test_epoch) + " (final " + fmt(r.test.at("micro_f1"), 3) + "); " +
                  std::to_string(ex.data.corpus.size()) + " researchers, " + fmt(secs, 3) + " s (< 600)"};
}

// ---------------------------------------------------------------------------
// 7. Pre-training effect.

Verdict pretraining_effect() {
  bool ok = true;
  std::string detail;
  std::ofstream csv(out_dir() / "pretraining_effect.csv");
  csv << "seed,init,epoch,split,metric,value\n";
  for (std::uint64_t seed : kSeeds) {
    const auto& ex = experiment(seed);
    const auto& p = pretrained(seed, Ablation::Full);
    TaskData data;
    data.ids = ex.split;
    const auto eff = compare_pretrain_effect(p.store, ex.cfg, ex.data.corpus, ex.data.graph, data,
                                             classification_config(seed, TransferMode::EndToEnd), seed + 1000);
    for (const auto* run : {&eff.pretrained, &eff.random})
      for (const auto& r : run->curve)
        csv << seed << ',' << (run == &eff.pretrained ? "pretrained" : "random") << ',' << r.epoch << ',' << r.split
            << ',' << r.metric << ',' << r.value << '\n';
    const double target = best_metric(eff.random.curve, "test", "micro_f1").value();
    const auto e_random = epochs_to_reach(eff.random.curve, "test", "micro_f1", target);
    const auto e_pre = epochs_to_reach(eff.pretrained.curve, "test", "micro_f1", target);
    const bool seed_ok = e_pre && *e_pre < *e_random;
    ok = ok && seed_ok;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + ": random best " +
              fmt(target, 3) + " at epoch " + std::to_string(*e_random) + ", pretrained reaches it at " +
              (e_pre ? "epoch " + std::to_string(*e_pre) : std::string("never"));
  }
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// 8. Ablation ordering.

Verdict ablation_ordering() {
  const Ablation variants[] = {Ablation::Full, Ablation::MH, Ablation::MC, Ablation::M};
  std::map<Ablation, std::vector<double>> scores;
  std::ofstream csv(out_dir() / "ablation.csv");
  csv << "variant,seed,fb_test_micro_f1,final_total_loss\n";
  for (std::uint64_t seed : kSeeds) {
    const auto& ex = experiment(seed);
    for (Ablation v : variants) {
      const auto& p = pretrained(seed, v);
      auto store = p.store;
      const auto r = finetune_classification(store, ex.cfg, ex.data.corpus, ex.data.graph, ex.split,
                                             classification_config(seed, TransferMode::FeatureBased));
      scores[v].push_back(r.test.at("micro_f1"));
      csv << to_string(v) << ',' << seed << ',' << r.test.at("micro_f1") << ',' << p.history.back().total << '\n';
    }
  }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  auto stderr_of = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double ss = 0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / (v.size() - 1) / v.size());
  };
  // a >= b within the combined standard error of the two 3-seed means.
  auto geq = [&](Ablation a, Ablation b) {
    const double tol = std::hypot(stderr_of(scores[a]), stderr_of(scores[b]));
    return mean(scores[a]) >= mean(scores[b]) - tol;
  };
  const Ablation best_pair = mean(scores[Ablation::MH]) >= mean(scores[Ablation::MC]) ? Ablation::MH : Ablation::MC;
  const bool ok = geq(Ablation::Full, best_pair) && geq(Ablation::MH, Ablation::M) && geq(Ablation::MC, Ablation::M);
  std::string detail = "fb test micro-F1, 3-seed mean +- s.e.:";
  for (Ablation v : variants)
    detail += std::string(" ") + to_string(v) + " " + fmt(mean(scores[v]), 3) + "+-" + fmt(stderr_of(scores[v]), 2);
  return {ok, detail};
}

// ---------------------------------------------------------------------------
// 9. Mode contract.

Verdict mode_contract() {
  const auto& ex = experiment(1);
  const fs::path dir = out_dir();
  auto store = init_parameters<double>(ex.cfg.model, 9);
  save_checkpoint(dir / "mode_before.ckpt", store, {ex.cfg.model.hash(), 0});
  auto loaded = init_parameters<double>(ex.cfg.model, 10);
  restore_parameters(loaded, load_checkpoint(dir / "mode_before.ckpt"));
  TaskData data;
  data.ids = ex.split;
  data.pairs = temporal_pair_split(ex.data.collaborations, 2015, 2016);
  data.truth = coauthor_lists(ex.data.collaborations, ex.data.corpus.size());
  for (Task task : {Task::Classification, Task::LinkPrediction, Task::Retrieval}) {
    auto ft = FinetuneConfig::defaults(task, TransferMode::FeatureBased);
    ft.epochs = 2;
    if (task == Task::Retrieval) {
      data.ids = IdSplit{};
      for (std::size_t i = 0; i < data.truth.size(); ++i)
        (data.truth[i].empty() ? data.ids.valid : i % 2 ? data.ids.test : data.ids.train).push_back(i);
      data.ids.valid.clear();
    }
    run_finetune(loaded, ex.cfg, ex.data.corpus, ex.data.graph, data, ft);
  }
  save_checkpoint(dir / "mode_after_fb.ckpt", loaded, {ex.cfg.model.hash(), 0});
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const bool identical = slurp(dir / "mode_before.ckpt") == slurp(dir / "mode_after_fb.ckpt");

  const auto sem = loaded.checksum("sem."), gnn = loaded.checksum("gnn.");
  auto ft = classification_config(1, TransferMode::EndToEnd);
  ft.epochs = 1;
  ft.batch_size = ex.split.train.size();  // exactly one optimisation step
  finetune_classification(loaded, ex.cfg, ex.data.corpus, ex.data.graph, ex.split, ft);
  const bool moved = loaded.checksum("sem.") != sem && loaded.checksum("gnn.") != gnn;
  return {identical && moved, std::string("fb (classification, link, retrieval) checkpoint byte-identical: ") +
                                  (identical ? "yes" : "no") + "; e2e encoder checksums changed after one step: " +
                                  (moved ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"gradient correctness", gradient_correctness},
      {"loss anchors at initialization", loss_anchors},
      {"attention/pooling invariants", attention_invariants},
      {"sampler contract", sampler_contract},
      {"oracle equivalence", oracle_equivalence},
      {"trainability", trainability},
      {"pre-training effect", pretraining_effect},
      {"ablation ordering", ablation_ordering},
      {"mode contract", mode_contract},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.contains(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << v.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
