#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "rpt/corpus/ingest.hpp"

namespace rpt {

namespace fs = std::filesystem;

inline PublicationRecord record_from_json(const nlohmann::json& j) {
  PublicationRecord r;
  r.id = j.at("id").get<std::string>();
  for (const auto& a : j.at("authors")) {
    PublicationRecord::Author author;
    author.id = a.at("id").get<std::string>();
    if (a.contains("org") && !a.at("org").is_null()) author.org = a.at("org").get<std::string>();
    r.authors.push_back(std::move(author));
  }
  if (j.contains("venue") && !j.at("venue").is_null()) r.venue = j.at("venue").get<std::string>();
  r.fos = j.at("fos").get<std::vector<std::string>>();
  r.year = j.at("year").get<int>();
  return r;
}

inline nlohmann::json record_to_json(const PublicationRecord& r) {
  nlohmann::json authors = nlohmann::json::array();
  for (const auto& a : r.authors) authors.push_back({{"id", a.id}, {"org", a.org}});
  return {{"id", r.id}, {"authors", authors}, {"venue", r.venue}, {"fos", r.fos}, {"year", r.year}};
}

/// Parses JSON-lines records. Blank lines are skipped; every unparseable line
/// is reported with its 1-based line number in a single ValidationError.
inline std::vector<PublicationRecord> read_records_jsonl(std::istream& in) {
  std::vector<PublicationRecord> out;
  std::string line, errors;
  std::size_t lineno = 0, n_errors = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      ++n_errors;
      errors += "\n  line " + std::to_string(lineno) + ": " + e.what();
    }
  }
  if (n_errors) throw ValidationError(std::to_string(n_errors) + " malformed record line(s):" + errors);
  if (out.empty()) throw ValidationError("empty corpus");
  return out;
}

inline std::vector<PublicationRecord> read_records_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_records_jsonl(in);
}

inline void write_records_jsonl(std::ostream& out, const std::vector<PublicationRecord>& records) {
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

namespace detail {

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  return f;
}

inline std::ifstream open_in(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string());
  return f;
}

}  // namespace detail

/// Writes vocab.txt, relations.txt, researchers.jsonl, edges.tsv (each
/// undirected edge once) and collaborations.tsv into `dir`.
inline void write_corpus_dump(const fs::path& dir, const IngestResult& data) {
  fs::create_directories(dir);
  const auto& corpus = data.corpus;
  {
    auto f = detail::open_out(dir / "vocab.txt");
    for (const auto& t : corpus.vocab.tokens()) f << t << '\n';
  }
  {
    auto f = detail::open_out(dir / "relations.txt");
    for (const auto& r : data.graph.relation_names()) f << r << '\n';
  }
  {
    auto f = detail::open_out(dir / "researchers.jsonl");
    for (const auto& r : corpus.researchers) {
      nlohmann::json docs = nlohmann::json::array();
      for (const auto& d : r.documents) {
        std::vector<std::string> toks;
        for (std::size_t id : d.token_ids) toks.push_back(corpus.vocab.token(id));
        docs.push_back({{"year", d.year}, {"tokens", toks}});
      }
      nlohmann::json j = {{"id", r.id}, {"docs", docs}};
      if (r.label) j["label"] = *r.label;
      f << j.dump() << '\n';
    }
  }
  {
    auto f = detail::open_out(dir / "edges.tsv");
    const auto& edges = data.graph.directed_edges();
    for (std::size_t e = 0; e < edges.size(); e += 2) {
      f << corpus.researchers[edges[e].src].id << '\t' << data.graph.relation_name(edges[e].relation) << '\t'
        << corpus.researchers[edges[e].dst].id << '\n';
    }
  }
  {
    auto f = detail::open_out(dir / "collaborations.tsv");
    for (const auto& c : data.collaborations)
      f << corpus.researchers[c.a].id << '\t' << corpus.researchers[c.b].id << '\t' << c.year << '\n';
  }
}

inline IngestResult read_corpus_dump(const fs::path& dir) {
  IngestResult out;
  std::string line;
  {
    auto f = detail::open_in(dir / "vocab.txt");
    std::vector<std::string> tokens;
    while (std::getline(f, line))
      if (!line.empty()) tokens.push_back(line);
    if (tokens.size() < 3) throw ValidationError("vocab.txt: too few entries");
    tokens.resize(tokens.size() - 3);
    out.corpus.vocab = Vocabulary(tokens);
  }
  std::vector<std::string> relations;
  {
    auto f = detail::open_in(dir / "relations.txt");
    while (std::getline(f, line))
      if (!line.empty()) relations.push_back(line);
  }
  {
    auto f = detail::open_in(dir / "researchers.jsonl");
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        const auto j = nlohmann::json::parse(line);
        Researcher r{j.at("id").get<std::string>(), {}, std::nullopt};
        if (j.contains("label")) r.label = j.at("label").get<std::size_t>();
        for (const auto& d : j.at("docs")) {
          Document doc;
          doc.year = d.at("year").get<int>();
          for (const auto& t : d.at("tokens")) doc.token_ids.push_back(out.corpus.vocab.id(t.get<std::string>()));
          r.documents.push_back(std::move(doc));
        }
        if (r.documents.empty()) throw ValidationError("researcher " + r.id + " has no documents");
        out.corpus.researchers.push_back(std::move(r));
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError("researchers.jsonl line " + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  out.graph = CommunityGraph(out.corpus.size(), relations);
  {
    auto f = detail::open_in(dir / "edges.tsv");
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string a, r, b;
      if (!std::getline(ss, a, '\t') || !std::getline(ss, r, '\t') || !std::getline(ss, b))
        throw ValidationError("edges.tsv line " + std::to_string(lineno) + ": expected src<TAB>relation<TAB>dst");
      out.graph.add_edge(out.corpus.index_of(a), out.graph.relation_index(r), out.corpus.index_of(b));
    }
  }
  if (fs::exists(dir / "collaborations.tsv")) {
    auto f = detail::open_in(dir / "collaborations.tsv");
    std::string a, b;
    int year = 0;
    while (f >> a >> b >> year) out.collaborations.push_back({out.corpus.index_of(a), out.corpus.index_of(b), year});
  }
  return out;
}

}  // namespace rpt
