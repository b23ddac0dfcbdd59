// Command-line driver: corpus preparation, pre-training, fine-tuning,
// evaluation, export and gradient checks. Exit codes: 0 ok, 1 validation,
// 2 numerical failure, 3 I/O.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "manifest.hpp"
#include "rpt/cli/config.hpp"
#include "rpt/core/gradcheck.hpp"
#include "rpt/corpus/io.hpp"

namespace {

using namespace rpt;
using namespace rpt::cli;

struct Options {
  std::string config_path;
  std::string out;
  std::string input;
  std::string pretrained;
  std::string mode;
  std::string ablation = "full";
  std::string selector = "all";
  std::string corrupt;
  std::vector<std::uint64_t> seeds;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
};

void notice(const std::string& msg) { std::cerr << "notice: " << msg << '\n'; }

fs::path require_out(const Options& o) {
  if (o.out.empty()) throw ValidationError("--out is required");
  fs::create_directories(o.out);
  return o.out;
}

/// Defaults, then the pretrained run's snapshot, then --config, then flags.
Config load_config(const Options& o, const char* seed_key) {
  Config c;
  if (!o.pretrained.empty()) c.merge_file(fs::path(o.pretrained) / "config.txt");
  if (!o.config_path.empty()) c.merge_file(o.config_path);
  if (o.seed) c.set(seed_key, std::to_string(*o.seed));
  if (o.steps) c.set("train.steps", std::to_string(*o.steps));
  if (!o.mode.empty()) c.set("finetune.mode", o.mode);
  return c;
}

void add_config_inputs(RunManifest& m, const Options& o) {
  if (!o.config_path.empty()) m.add_input("config", o.config_path);
}

struct Data {
  IngestResult data;
  TrainConfig cfg;
};

/// Corpus from `data.corpus` or synthesized, truncated to the model limits.
Data load_data(const Config& c, RunManifest& manifest) {
  Data d;
  if (!c.empty("data.corpus")) {
    const fs::path dir = c.raw("data.corpus");
    d.data = read_corpus_dump(dir);
    manifest.add_input("corpus", dir);
  } else {
    auto synth = synth_corpus(synth_config(c));
    auto opt = ingest_options(c);
    opt.seed = synth_config(c).seed;
    d.data = ingest_publications(synth.records, opt);
    assign_labels(d.data.corpus, synth.labels);
  }
  d.cfg = train_config(c, d.data.corpus.vocab.size(), notice);
  d.data.corpus = truncate_corpus(d.data.corpus, d.cfg.model.max_docs, d.cfg.model.max_doc_len);
  return d;
}

template <std::floating_point T>
ParameterStore<T> load_encoder(const Options& o, const TrainConfig& cfg, RunManifest& manifest) {
  if (o.pretrained.empty()) throw ValidationError("--pretrained <pretrain output dir> is required");
  const fs::path path = fs::path(o.pretrained) / "checkpoint.ckpt";
  const auto ck = load_checkpoint(path);
  if (ck.header.config_hash != cfg.model.hash())
    throw ValidationError("checkpoint " + path.string() + " was trained with a different model configuration");
  manifest.add_input("checkpoint", path);
  auto store = init_parameters<T>(cfg.model, 0);
  restore_parameters(store, ck);
  return store;
}

void write_config_snapshot(const fs::path& out, const Config& c) {
  std::ofstream f(out / "config.txt");
  if (!f) throw IoError("cannot write " + (out / "config.txt").string());
  f << c.text();
}

template <typename Fn>
void with_precision(const Config& c, Fn&& fn) {
  if (c.raw("model.precision") == "float")
    fn(float{});
  else
    fn(double{});
}

// ---------------------------------------------------------------------------

int cmd_ingest(const Options& o) {
  const Config c = load_config(o, "synth.seed");
  const fs::path out = require_out(o);
  RunManifest m("ingest", out);
  m.set_config(c.text());
  add_config_inputs(m, o);
  m.add_input("records", o.input);
  const auto records = read_records_jsonl(fs::path(o.input));
  const auto data = ingest_publications(records, ingest_options(c));
  write_corpus_dump(out, data);
  m.write();
  std::cout << data.corpus.size() << " researchers, " << data.graph.num_edges() << " edges, vocabulary "
            << data.corpus.vocab.size() << "\nmanifest hash " << m.hash() << '\n';
  return 0;
}

int cmd_synth(const Options& o) {
  const Config c = load_config(o, "synth.seed");
  const fs::path out = require_out(o);
  RunManifest m("synth", out);
  m.set_config(c.text());
  m.set_seed(c.get<std::uint64_t>("synth.seed"));
  add_config_inputs(m, o);
  const auto sc = synth_config(c);
  const auto synth = synth_corpus(sc);
  {
    std::ofstream f(out / "records.jsonl");
    if (!f) throw IoError("cannot write " + (out / "records.jsonl").string());
    write_records_jsonl(f, synth.records);
  }
  auto opt = ingest_options(c);
  opt.seed = sc.seed;
  auto data = ingest_publications(synth.records, opt);
  assign_labels(data.corpus, synth.labels);
  write_corpus_dump(out, data);
  m.write();
  std::cout << synth.records.size() << " records, " << data.corpus.size() << " researchers\nmanifest hash "
            << m.hash() << '\n';
  return 0;
}

int cmd_pretrain(const Options& o) {
  Config c = load_config(o, "train.seed");
  const fs::path out = require_out(o);
  RunManifest m("pretrain", out);
  add_config_inputs(m, o);
  auto d = load_data(c, m);
  const Ablation variant = parse_ablation(o.ablation);
  d.cfg.weights = ablation_weights(variant, d.cfg.weights);
  // The snapshot records the weights actually used.
  c.set("train.lambda1", std::to_string(d.cfg.weights.lambda1));
  c.set("train.lambda2", std::to_string(d.cfg.weights.lambda2));
  m.set_config(c.text());
  m.set_seed(d.cfg.seed);
  write_config_snapshot(out, c);
  with_precision(c, [&]<typename T>(T) {
    auto store = init_parameters<T>(d.cfg.model, d.cfg.seed);
    PretrainOptions opt{.out_dir = out, .on_step = [&](const LossRecord& r) {
                          if (r.step % 50 == 0 || r.step + 1 == d.cfg.steps)
                            std::cerr << "step " << r.step << " total " << r.total << " main " << r.main << " hmlm "
                                      << r.hmlm << " crp " << r.crp << '\n';
                        }};
    pretrain(store, d.data.corpus, d.data.graph, d.cfg, opt);
  });
  m.write();
  std::cout << "checkpoint " << (out / "checkpoint.ckpt").string() << "\nmanifest hash " << m.hash() << '\n';
  return 0;
}

TaskData task_data(const Config& c, const IngestResult& data, Task task) {
  TaskData td;
  const auto& corpus = data.corpus;
  auto random_ids = [&](std::vector<std::size_t> pool) {
    return random_split(pool, c.get<double>("split.train_fraction"), c.get<double>("split.valid_fraction"),
                        c.get<std::uint64_t>("split.seed"));
  };
  auto read_ids = [&](const char* key) {
    return c.empty(key) ? std::vector<std::size_t>{} : read_id_list(c.raw(key), corpus);
  };
  switch (task) {
    case Task::Classification:
      td.ids = random_ids(labeled_indices(corpus));
      break;
    case Task::LinkPrediction:
      td.pairs = temporal_pair_split(data.collaborations, c.get<int>("split.train_end"), c.get<int>("split.valid_end"));
      break;
    case Task::Retrieval: {
      td.truth = coauthor_lists(data.collaborations, corpus.size());
      std::vector<std::size_t> with_truth;
      for (std::size_t i = 0; i < td.truth.size(); ++i)
        if (!td.truth[i].empty()) with_truth.push_back(i);
      td.ids = random_ids(with_truth);
      break;
    }
  }
  if (!c.empty("split.train_ids")) td.ids.train = read_ids("split.train_ids");
  if (!c.empty("split.valid_ids")) td.ids.valid = read_ids("split.valid_ids");
  if (!c.empty("split.test_ids")) td.ids.test = read_ids("split.test_ids");
  return td;
}

void write_splits(const fs::path& out, const ResearcherCorpus& corpus, const TaskData& td) {
  write_id_list(out / "train_ids.txt", corpus, td.ids.train);
  write_id_list(out / "valid_ids.txt", corpus, td.ids.valid);
  write_id_list(out / "test_ids.txt", corpus, td.ids.test);
}

void write_curve(const fs::path& path, const std::vector<MetricRow>& curve) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f.precision(10);
  write_metrics_csv(f, curve);
}

void print_test(const std::map<std::string, double>& test) {
  for (const auto& [k, v] : test) std::cout << "test " << k << " = " << v << '\n';
}

int cmd_finetune(const Options& o) {
  const Config c = load_config(o, "finetune.seed");
  const fs::path out = require_out(o);
  RunManifest m("finetune", out);
  add_config_inputs(m, o);
  auto d = load_data(c, m);
  const auto ft = finetune_config(c);
  m.set_config(c.text());
  m.set_seed(ft.seed);
  const auto td = task_data(c, d.data, ft.task);
  with_precision(c, [&]<typename T>(T) {
    auto store = load_encoder<T>(o, d.cfg, m);
    const auto r = run_finetune(store, d.cfg, d.data.corpus, d.data.graph, td, ft);
    write_curve(out / "metrics.csv", r.curve);
    if (ft.task != Task::LinkPrediction) write_splits(out, d.data.corpus, td);
    if (ft.mode == TransferMode::EndToEnd)
      save_checkpoint(out / "finetuned.ckpt", store, {d.cfg.model.hash(), 0});
    print_test(r.test);
  });
  write_config_snapshot(out, c);
  m.write();
  std::cout << "manifest hash " << m.hash() << '\n';
  return 0;
}

// Parameter-free evaluation of the exported representations: dot-product
// retrieval of coauthors for every researcher with a non-empty list.
int cmd_eval(const Options& o) {
  const Config c = load_config(o, "eval.export_seed");
  const fs::path out = require_out(o);
  RunManifest m("eval", out);
  add_config_inputs(m, o);
  auto d = load_data(c, m);
  m.set_config(c.text());
  m.set_seed(c.get<std::uint64_t>("eval.export_seed"));
  with_precision(c, [&]<typename T>(T) {
    auto store = load_encoder<T>(o, d.cfg, m);
    const auto rep = export_representations(store, d.cfg, d.data.corpus, d.data.graph,
                                            c.get<std::uint64_t>("eval.export_seed"));
    const auto truth = coauthor_lists(d.data.collaborations, d.data.corpus.size());
    std::vector<std::size_t> queries;
    for (std::size_t i = 0; i < truth.size(); ++i)
      if (!truth[i].empty()) queries.push_back(i);
    std::vector<std::size_t> ks;
    for (std::size_t k : default_retrieval_ks())
      if (k < d.data.corpus.size()) ks.push_back(k);
    const auto metrics = retrieval_metrics(rep.Z, queries, truth, ks);
    std::vector<MetricRow> rows;
    for (const auto& [k, v] : metrics) rows.push_back({0, "all", k, v});
    write_curve(out / "metrics.csv", rows);
    print_test(metrics);
  });
  m.write();
  std::cout << "manifest hash " << m.hash() << '\n';
  return 0;
}

int cmd_export(const Options& o) {
  const Config c = load_config(o, "eval.export_seed");
  const fs::path out = require_out(o);
  RunManifest m("export", out);
  add_config_inputs(m, o);
  auto d = load_data(c, m);
  m.set_config(c.text());
  m.set_seed(c.get<std::uint64_t>("eval.export_seed"));
  with_precision(c, [&]<typename T>(T) {
    auto store = load_encoder<T>(o, d.cfg, m);
    const auto rep = export_representations(store, d.cfg, d.data.corpus, d.data.graph,
                                            c.get<std::uint64_t>("eval.export_seed"));
    std::ofstream f(out / "representations.tsv");
    if (!f) throw IoError("cannot write " + (out / "representations.tsv").string());
    f.precision(9);
    // id, then U (d columns), then X (d columns).
    for (std::size_t i = 0; i < rep.Z.rows(); ++i) {
      f << d.data.corpus.researchers[i].id;
      for (std::size_t k = 0; k < rep.Z.cols(); ++k) f << '\t' << rep.Z(i, k);
      f << '\n';
    }
  });
  m.write();
  std::cout << "manifest hash " << m.hash() << '\n';
  return 0;
}

std::vector<ParameterGroup> gradcheck_groups(const std::string& selector) {
  const std::vector<ParameterGroup> transformer = {
      {"token embedding", {pname::kTokenEmbedding}},
      {"position embedding", {pname::kPositionEmbedding}},
      {"[SOD] embedding", {pname::kSodEmbedding}},
      {"document transformer", {"sem.doc."}},
      {"researcher transformer", {"sem.res."}},
  };
  const std::vector<ParameterGroup> gnn = {{"relational gnn", {"gnn."}}};
  const std::vector<ParameterGroup> losses = {
      {"hmlm decoder", {"head.hmlm."}},
      {"crp type head", {"head.crp_type."}},
      {"crp hop head", {"head.crp_hop."}},
  };
  if (selector == "transformer") return transformer;
  if (selector == "gnn") return gnn;
  if (selector == "losses") return losses;
  if (selector == "all") {
    auto all = transformer;
    all.insert(all.end(), gnn.begin(), gnn.end());
    all.insert(all.end(), losses.begin(), losses.end());
    return all;
  }
  throw ValidationError("selector must be transformer, gnn, losses or all, got '" + selector + "'");
}

// Finite-difference check of the total pre-training loss on a small seeded
// batch, in double precision.
int cmd_gradcheck(const Options& o) {
  const auto groups = gradcheck_groups(o.selector);
  const std::uint64_t seed = o.seed.value_or(1);
  SynthConfig sc;
  sc.seed = seed;
  sc.n_researchers = 16;
  sc.docs_mean = 4;
  sc.doc_len_mean = 5;
  sc.vocab_per_topic = 6;
  const auto synth = synth_corpus(sc);
  auto data = ingest_publications(synth.records, {.covenue_cap = 6, .seed = seed});
  TrainConfig cfg;
  auto& mc = cfg.model;
  mc.d = 8;
  mc.heads = 2;
  mc.ffn_hidden = 8;
  mc.doc_layers = mc.researcher_layers = 1;
  mc.max_docs = 4;
  mc.max_doc_len = 6;
  mc.vocab_size = data.corpus.vocab.size();
  data.corpus = truncate_corpus(data.corpus, mc.max_docs, mc.max_doc_len);
  cfg.neighbors = 3;
  cfg.batch_size = 6;
  cfg.seed = seed;
  auto store = init_parameters<double>(mc, seed);
  std::mt19937_64 rng(seed + 1);
  for (const std::string name : {pname::kHmlmW, pname::kCrpTypeW, pname::kCrpHopW})
    store.get(name).value = normal_tensor<double>(store.get(name).value.shape(), 0.5, rng);
  const auto plan = plan_pretrain_batch(data.corpus, data.graph, cfg, 0);
  GradcheckOptions opt;
  opt.corrupt_group = o.corrupt;
  const auto reports = gradcheck<double>(
      store, groups,
      [&](Tape<double>& tape) {
        EncodeContext<double> ctx;
        return pretrain_forward<double>(tape, store, cfg, data.corpus, plan, ctx).total;
      },
      opt);
  bool ok = true;
  std::printf("%-24s %8s %14s %6s\n", "group", "coords", "max_rel_error", "status");
  for (const auto& r : reports) {
    std::printf("%-24s %8zu %14.3e %6s\n", r.group.c_str(), r.coordinates, r.max_rel_error, r.passed ? "ok" : "FAIL");
    ok = ok && r.passed;
  }
  if (!ok) throw NumericalError("gradient check failed (tolerance " + std::to_string(opt.tolerance) + ")");
  return 0;
}

int cmd_compare(const Options& o) {
  const Config c = load_config(o, "finetune.seed");
  const fs::path out = require_out(o);
  RunManifest m("compare", out);
  add_config_inputs(m, o);
  auto d = load_data(c, m);
  const auto ft = finetune_config(c);
  m.set_config(c.text());
  m.set_seed(ft.seed);
  const auto td = task_data(c, d.data, ft.task);
  const char* metric = ft.task == Task::Classification ? "micro_f1"
                       : ft.task == Task::LinkPrediction ? "f1"
                                                         : "R@20";
  with_precision(c, [&]<typename T>(T) {
    const auto store = load_encoder<T>(o, d.cfg, m);
    const auto eff = compare_pretrain_effect(store, d.cfg, d.data.corpus, d.data.graph, td, ft, ft.seed + 1000);
    write_curve(out / "pretrained_curve.csv", eff.pretrained.curve);
    write_curve(out / "random_curve.csv", eff.random.curve);
    const double target = best_metric(eff.random.curve, "test", metric).value_or(0);
    auto show = [](std::optional<std::size_t> e) { return e ? std::to_string(*e) : std::string("never"); };
    std::cout << "random init best test " << metric << " " << target << " at epoch "
              << show(epochs_to_reach(eff.random.curve, "test", metric, target)) << "; pretrained reaches it at epoch "
              << show(epochs_to_reach(eff.pretrained.curve, "test", metric, target)) << '\n';
  });
  m.write();
  std::cout << "manifest hash " << m.hash() << '\n';
  return 0;
}

// Pre-trains every variant for each seed and scores it with feature-based
// classification.
int cmd_ablation(const Options& o) {
  Config c = load_config(o, "train.seed");
  const fs::path out = require_out(o);
  RunManifest m("ablation", out);
  add_config_inputs(m, o);
  auto d = load_data(c, m);
  c.set("finetune.task", "classification");
  c.set("finetune.mode", "fb");
  m.set_config(c.text());
  const auto seeds = o.seeds.empty() ? std::vector<std::uint64_t>{d.cfg.seed} : o.seeds;
  std::ofstream csv(out / "ablation.csv");
  if (!csv) throw IoError("cannot write " + (out / "ablation.csv").string());
  csv << "variant,seed,final_total_loss,test_micro_f1,test_macro_f1\n";
  with_precision(c, [&]<typename T>(T) {
    for (std::uint64_t seed : seeds)
      for (Ablation v : {Ablation::Full, Ablation::MH, Ablation::MC, Ablation::M}) {
        auto cfg = d.cfg;
        cfg.seed = seed;
        cfg.weights = ablation_weights(v, d.cfg.weights);
        auto store = init_parameters<T>(cfg.model, seed);
        const auto hist = pretrain(store, d.data.corpus, d.data.graph, cfg);
        auto ft = finetune_config(c);
        ft.seed = seed;
        Config split = c;
        split.set("split.seed", std::to_string(seed));
        const auto r = run_finetune(store, cfg, d.data.corpus, d.data.graph,
                                    task_data(split, d.data, Task::Classification), ft);
        csv << to_string(v) << ',' << seed << ',' << hist.back().total << ',' << r.test.at("micro_f1") << ','
            << r.test.at("macro_f1") << '\n';
        std::cout << to_string(v) << " seed " << seed << ": test micro-F1 " << r.test.at("micro_f1") << std::endl;
      }
  });
  csv.close();
  m.write();
  std::cout << "manifest hash " << m.hash() << '\n';
  return 0;
}

int cmd_config() {
  for (const auto& s : key_specs()) std::cout << "# " << s.help << '\n' << s.key << " = " << s.default_value << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Researcher representation pre-training"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool with_out = true) {
    sub->add_option("--config", o.config_path, "flat key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "seed override");
    if (with_out) sub->add_option("--out", o.out, "output directory")->required();
  };
  auto with_pretrained = [&](CLI::App* sub) {
    sub->add_option("--pretrained", o.pretrained, "pre-training output directory")
        ->required()
        ->check(CLI::ExistingDirectory);
  };

  auto* ingest = app.add_subcommand("ingest", "build corpus and graph dumps from JSON-lines records");
  ingest->add_option("input", o.input, "publication records (.jsonl)")->required()->check(CLI::ExistingFile);
  common(ingest);
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus with planted topics");
  common(synth);
  auto* pre = app.add_subcommand("pretrain", "pre-train the encoders");
  common(pre);
  pre->add_option("--steps", o.steps, "override train.steps");
  pre->add_option("--ablation", o.ablation, "full | M | M+H | M+C");
  auto* fine = app.add_subcommand("finetune", "fine-tune on a downstream task");
  common(fine);
  with_pretrained(fine);
  fine->add_option("--mode", o.mode, "fb | e2e");
  auto* eval = app.add_subcommand("eval", "evaluate exported representations by coauthor retrieval");
  common(eval);
  with_pretrained(eval);
  auto* exp = app.add_subcommand("export", "write representation matrix Z = [U | X]");
  common(exp);
  with_pretrained(exp);
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
  grad->add_option("selector", o.selector, "transformer | gnn | losses | all");
  grad->add_option("--seed", o.seed, "seed");
  grad->add_option("--corrupt", o.corrupt, "test hook: perturb the analytic gradient of this group");
  auto* cmp = app.add_subcommand("compare", "fine-tune from pretrained and random init");
  common(cmp);
  with_pretrained(cmp);
  cmp->add_option("--mode", o.mode, "fb | e2e");
  auto* abl = app.add_subcommand("ablation", "pre-train objective variants and compare them");
  common(abl);
  abl->add_option("--steps", o.steps, "override train.steps");
  abl->add_option("--seeds", o.seeds, "seeds to run")->delimiter(',');
  app.add_subcommand("config", "print every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "ingest") return cmd_ingest(o);
    if (name == "synth") return cmd_synth(o);
    if (name == "pretrain") return cmd_pretrain(o);
    if (name == "finetune") return cmd_finetune(o);
    if (name == "eval") return cmd_eval(o);
    if (name == "export") return cmd_export(o);
    if (name == "gradcheck") return cmd_gradcheck(o);
    if (name == "compare") return cmd_compare(o);
    if (name == "ablation") return cmd_ablation(o);
    if (name == "config") return cmd_config();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
