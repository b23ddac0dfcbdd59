#pragma once

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "rpt/corpus/graph.hpp"
#include "rpt/corpus/vocabulary.hpp"

namespace rpt {

struct Document {
  std::vector<std::size_t> token_ids;
  int year = 0;
};

struct Researcher {
  std::string id;
  std::vector<Document> documents;  // storage order only
  std::optional<std::size_t> label;
};

/// Raw publication metadata as ingested.
struct PublicationRecord {
  struct Author {
    std::string id;
    std::string org;
  };
  std::string id;
  std::vector<Author> authors;
  std::string venue;
  std::vector<std::string> fos;
  int year = 0;
};

/// Researchers, their semantic document sets and the shared vocabulary.
struct ResearcherCorpus {
  Vocabulary vocab;
  std::vector<Researcher> researchers;

  std::size_t size() const noexcept { return researchers.size(); }

  std::size_t index_of(const std::string& id) const {
    if (index_.size() != researchers.size()) rebuild_index();
    auto it = index_.find(id);
    if (it == index_.end()) throw ValidationError("unknown researcher id: " + id);
    return it->second;
  }

  bool contains(const std::string& id) const {
    if (index_.size() != researchers.size()) rebuild_index();
    return index_.contains(id);
  }

 private:
  void rebuild_index() const {
    index_.clear();
    for (std::size_t i = 0; i < researchers.size(); ++i) index_.emplace(researchers[i].id, i);
  }
  mutable std::unordered_map<std::string, std::size_t> index_;
};

/// Caps a researcher to `max_docs` documents of at most `max_doc_len` tokens.
/// The most recent documents (by year, ties in storage order) are kept and
/// returned in their original storage order; tokens are cut from the end.
inline Researcher truncate_researcher(const Researcher& r, std::size_t max_docs, std::size_t max_doc_len) {
  if (max_docs == 0 || max_doc_len == 0) throw ValidationError("truncation limits must be positive");
  std::vector<std::size_t> order(r.documents.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return r.documents[a].year > r.documents[b].year; });
  if (order.size() > max_docs) order.resize(max_docs);
  std::sort(order.begin(), order.end());
  Researcher out{r.id, {}, r.label};
  for (std::size_t i : order) {
    Document d = r.documents[i];
    if (d.token_ids.size() > max_doc_len) d.token_ids.resize(max_doc_len);
    out.documents.push_back(std::move(d));
  }
  return out;
}

inline ResearcherCorpus truncate_corpus(const ResearcherCorpus& c, std::size_t max_docs, std::size_t max_doc_len) {
  ResearcherCorpus out;
  out.vocab = c.vocab;
  out.researchers.reserve(c.size());
  for (const auto& r : c.researchers) out.researchers.push_back(truncate_researcher(r, max_docs, max_doc_len));
  return out;
}

}  // namespace rpt
