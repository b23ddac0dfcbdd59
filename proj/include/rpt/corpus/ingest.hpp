#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <utility>

#include "rpt/corpus/corpus.hpp"

namespace rpt {

struct IngestOptions {
  std::size_t covenue_cap = 100;
  std::uint64_t seed = 0;
  /// Collaborating edges from papers after this year are left out of the
  /// graph (they still appear in `collaborations`), so held-out periods do
  /// not leak into pre-training.
  std::optional<int> graph_year_max;
};

/// One coauthorship instance, kept for temporal link-prediction splits.
struct Collaboration {
  std::size_t a;
  std::size_t b;
  int year;
};

struct IngestResult {
  ResearcherCorpus corpus;
  CommunityGraph graph;
  std::vector<Collaboration> collaborations;
};

namespace detail {

inline std::vector<std::string> normalized_fos(const PublicationRecord& rec) {
  std::vector<std::string> out;
  for (const auto& t : rec.fos) {
    std::string n = Vocabulary::normalize(t);
    if (!n.empty()) out.push_back(std::move(n));
  }
  return out;
}

inline void validate_record(const PublicationRecord& rec) {
  const std::string where = "record " + (rec.id.empty() ? std::string("<no id>") : rec.id) + ": ";
  if (rec.id.empty()) throw ValidationError(where + "missing id");
  if (rec.authors.empty()) throw ValidationError(where + "no authors");
  for (const auto& a : rec.authors)
    if (a.id.empty()) throw ValidationError(where + "author with empty id");
  if (normalized_fos(rec).empty()) throw ValidationError(where + "no field-of-study tokens");
}

}  // namespace detail

inline Vocabulary build_vocabulary(const std::vector<PublicationRecord>& records) {
  if (records.empty()) throw ValidationError("empty corpus");
  std::vector<std::string> tokens;
  for (const auto& r : records)
    for (const auto& t : r.fos) tokens.push_back(t);
  return Vocabulary(tokens);
}

/// Builds semantic document sets and the typed community graph. Researchers
/// are indexed in lexicographic id order.
inline IngestResult ingest_publications(const std::vector<PublicationRecord>& records, const IngestOptions& opt = {}) {
  if (records.empty()) throw ValidationError("empty corpus");
  for (const auto& r : records) detail::validate_record(r);

  IngestResult out;
  out.corpus.vocab = build_vocabulary(records);
  const Vocabulary& vocab = out.corpus.vocab;

  std::set<std::string> ids;
  for (const auto& r : records)
    for (const auto& a : r.authors) ids.insert(a.id);
  std::map<std::string, std::size_t> index;
  for (const auto& id : ids) {
    index.emplace(id, out.corpus.researchers.size());
    out.corpus.researchers.push_back({id, {}, std::nullopt});
  }
  out.graph = CommunityGraph(ids.size(), default_relation_names());

  std::map<std::string, std::set<std::size_t>> by_org, by_venue;
  for (const auto& rec : records) {
    Document doc;
    doc.year = rec.year;
    for (const auto& t : detail::normalized_fos(rec)) doc.token_ids.push_back(vocab.id(t));

    std::vector<std::size_t> authors;
    for (const auto& a : rec.authors) {
      const std::size_t i = index.at(a.id);
      if (std::find(authors.begin(), authors.end(), i) != authors.end()) continue;
      authors.push_back(i);
      out.corpus.researchers[i].documents.push_back(doc);
      if (!a.org.empty()) by_org[a.org].insert(i);
      if (!rec.venue.empty()) by_venue[rec.venue].insert(i);
    }
    const bool in_graph = !opt.graph_year_max || rec.year <= *opt.graph_year_max;
    for (std::size_t x = 0; x < authors.size(); ++x)
      for (std::size_t y = x + 1; y < authors.size(); ++y) {
        out.collaborations.push_back({authors[x], authors[y], rec.year});
        if (in_graph) out.graph.add_edge(authors[x], Relation::Collaborating, authors[y]);
      }
  }

  auto pairs_of = [](const std::map<std::string, std::set<std::size_t>>& groups) {
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    for (const auto& [key, members] : groups)
      for (auto x = members.begin(); x != members.end(); ++x)
        for (auto y = std::next(x); y != members.end(); ++y) pairs.emplace(*x, *y);
    return pairs;
  };

  for (const auto& [a, b] : pairs_of(by_org)) out.graph.add_edge(a, Relation::Colleague, b);

  // CoVenue: shuffle candidate pairs, then accept while both endpoints are under the cap.
  const auto venue_pairs = pairs_of(by_venue);
  std::vector<std::pair<std::size_t, std::size_t>> candidates(venue_pairs.begin(), venue_pairs.end());
  std::mt19937_64 rng(opt.seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  std::vector<std::size_t> deg(ids.size(), 0);
  std::vector<std::pair<std::size_t, std::size_t>> accepted;
  for (const auto& [a, b] : candidates) {
    if (deg[a] >= opt.covenue_cap || deg[b] >= opt.covenue_cap) continue;
    ++deg[a];
    ++deg[b];
    accepted.emplace_back(a, b);
  }
  std::sort(accepted.begin(), accepted.end());
  for (const auto& [a, b] : accepted) out.graph.add_edge(a, Relation::CoVenue, b);
  return out;
}

/// Attaches class labels by researcher id; researchers missing from `labels` stay unlabeled.
inline void assign_labels(ResearcherCorpus& corpus, const std::map<std::string, std::size_t>& labels) {
  for (auto& r : corpus.researchers) {
    auto it = labels.find(r.id);
    r.label = it == labels.end() ? std::nullopt : std::optional<std::size_t>(it->second);
  }
}

}  // namespace rpt
