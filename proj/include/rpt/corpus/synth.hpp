#pragma once

#include <cstdio>
#include <map>
#include <random>

#include "rpt/corpus/corpus.hpp"

namespace rpt {

struct SynthConfig {
  std::uint64_t seed = 1;
  std::size_t n_researchers = 200;
  std::size_t n_topics = 4;
  double docs_mean = 13.8;
  double doc_len_mean = 19.7;
  double community_strength = 0.9;
  /// Probability that a token comes from the paper's own topic block rather
  /// than a uniformly chosen block.
  double topic_purity = 0.9;
  std::size_t vocab_per_topic = 40;
  /// Mean number of coauthors per paper besides the lead author.
  double coauthors_mean = 1.5;
  std::size_t orgs_per_topic = 3;
  std::size_t venues_per_topic = 3;
  int year_min = 2013;
  int year_max = 2018;
};

struct SynthCorpus {
  std::vector<PublicationRecord> records;
  std::map<std::string, std::size_t> labels;  // researcher id -> planted topic
};

inline std::string synth_researcher_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "r%05zu", i);
  return buf;
}

inline std::string synth_token(std::size_t topic, std::size_t j) {
  return "t" + std::to_string(topic) + "_w" + std::to_string(j);
}

/// Generates publication records with planted topics. Each researcher leads
/// max(1, Poisson(docs_mean / (1 + coauthors_mean))) papers with
/// Poisson(coauthors_mean) coauthors, so the expected document count per
/// researcher is close to docs_mean. A coauthor comes from the lead's topic
/// with probability community_strength and uniformly otherwise; orgs and
/// venues follow the same rule.
inline SynthCorpus synth_corpus(const SynthConfig& cfg) {
  if (cfg.n_topics < 2) throw ValidationError("synth: n_topics must be >= 2");
  if (cfg.n_researchers < 2 * cfg.n_topics) throw ValidationError("synth: need at least two researchers per topic");
  if (cfg.docs_mean <= 0 || cfg.doc_len_mean < 1) throw ValidationError("synth: docs_mean and doc_len_mean must be positive");
  if (cfg.community_strength < 0 || cfg.community_strength > 1) throw ValidationError("synth: community_strength must be in [0,1]");
  if (cfg.topic_purity < 0 || cfg.topic_purity > 1) throw ValidationError("synth: topic_purity must be in [0,1]");
  if (cfg.vocab_per_topic == 0 || cfg.orgs_per_topic == 0 || cfg.venues_per_topic == 0)
    throw ValidationError("synth: per-topic sizes must be positive");
  if (cfg.coauthors_mean < 0 || cfg.year_max < cfg.year_min) throw ValidationError("synth: invalid coauthor or year range");

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };

  const std::size_t N = cfg.n_researchers, K = cfg.n_topics;
  std::vector<std::size_t> topic(N);
  std::vector<std::vector<std::size_t>> members(K);
  for (std::size_t i = 0; i < N; ++i) {
    topic[i] = i % K;
    members[topic[i]].push_back(i);
  }

  auto pick_aligned = [&](std::size_t t, std::size_t per_topic) {
    const std::size_t block = unit(rng) < cfg.community_strength ? t : uniform(K);
    return block * per_topic + uniform(per_topic);
  };
  std::vector<std::string> org(N);
  for (std::size_t i = 0; i < N; ++i) org[i] = "org" + std::to_string(pick_aligned(topic[i], cfg.orgs_per_topic));

  SynthCorpus out;
  for (std::size_t i = 0; i < N; ++i) out.labels.emplace(synth_researcher_id(i), topic[i]);

  std::poisson_distribution<int> lead_count(cfg.docs_mean / (1.0 + cfg.coauthors_mean));
  std::poisson_distribution<int> coauthor_count(cfg.coauthors_mean);
  std::poisson_distribution<int> extra_len(cfg.doc_len_mean - 1.0);
  std::uniform_int_distribution<int> year(cfg.year_min, cfg.year_max);

  for (std::size_t lead = 0; lead < N; ++lead) {
    const std::size_t t = topic[lead];
    const int n_papers = std::max(1, lead_count(rng));
    for (int p = 0; p < n_papers; ++p) {
      PublicationRecord rec;
      rec.id = "p" + std::to_string(out.records.size());
      rec.year = year(rng);
      rec.venue = "venue" + std::to_string(pick_aligned(t, cfg.venues_per_topic));
      rec.authors.push_back({synth_researcher_id(lead), org[lead]});

      std::vector<std::size_t> team = {lead};
      const int n_co = std::min<int>(coauthor_count(rng), static_cast<int>(N) - 1);
      for (int c = 0, guard = 0; c < n_co && guard < 100 * (n_co + 1); ++guard) {
        const std::size_t cand =
            unit(rng) < cfg.community_strength ? members[t][uniform(members[t].size())] : uniform(N);
        if (std::find(team.begin(), team.end(), cand) != team.end()) continue;
        team.push_back(cand);
        rec.authors.push_back({synth_researcher_id(cand), org[cand]});
        ++c;
      }

      const int len = 1 + extra_len(rng);
      for (int k = 0; k < len; ++k) {
        const std::size_t block = unit(rng) < cfg.topic_purity ? t : uniform(K);
        rec.fos.push_back(synth_token(block, uniform(cfg.vocab_per_topic)));
      }
      out.records.push_back(std::move(rec));
    }
  }
  return out;
}

}  // namespace rpt
