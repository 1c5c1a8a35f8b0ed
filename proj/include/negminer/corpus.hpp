#pragma once

// Passage corpora and (query, positives) train pairs, JSONL in and out.
// Corpus keeps file order: embedding runs and matrix rows follow it.

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "negminer/common.hpp"
#include "json.hpp"

namespace negminer {

struct Passage {
  std::string id;
  std::string text;
};

class Corpus {
 public:
  void add(Passage p) {
    if (!index_.emplace(p.id, passages_.size()).second) fail("duplicate passage id \"", p.id, "\"");
    passages_.push_back(std::move(p));
  }

  std::size_t size() const { return passages_.size(); }
  bool empty() const { return passages_.empty(); }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }

  const Passage& at(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) fail("unknown passage id \"", id, "\"");
    return passages_[it->second];
  }

  const Passage& operator[](std::size_t i) const { return passages_[i]; }
  auto begin() const { return passages_.begin(); }
  auto end() const { return passages_.end(); }

 private:
  std::vector<Passage> passages_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct TrainPair {
  std::string query_id;
  std::string query_text;
  std::vector<std::string> positive_ids;  // length >= 1, no duplicates
};

namespace detail {

inline nlohmann::json parse_jsonl_line(const std::string& line, std::size_t line_no,
                                       const std::filesystem::path& path) {
  auto j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    fail(path.string(), " line ", line_no, ": malformed JSONL (expected one JSON object per line)");
  return j;
}

inline std::string require_string(const nlohmann::json& j, const char* key, std::size_t line_no,
                                  const std::filesystem::path& path) {
  if (!j.contains(key) || !j[key].is_string())
    fail(path.string(), " line ", line_no, ": missing string field \"", key, "\"");
  return j[key].get<std::string>();
}

}  // namespace detail

// Corpus JSONL: {"id": str, "text": str}, one passage per line. Duplicate
// ids and empty texts are hard errors naming the offending line; a parse
// error reports its line number. Warnings (only: empty file) are appended
// to *warnings when given, and always logged to stderr.
inline Corpus load_corpus(const std::filesystem::path& path, std::vector<std::string>* warnings = nullptr) {
  std::ifstream in(path);
  if (!in) fail("cannot open corpus file ", path.string());
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) fail(path.string(), " line ", line_no, ": malformed JSONL (blank line)");
    auto j = detail::parse_jsonl_line(line, line_no, path);
    Passage p;
    p.id = detail::require_string(j, "id", line_no, path);
    p.text = detail::require_string(j, "text", line_no, path);
    if (p.id.empty()) fail(path.string(), " line ", line_no, ": empty passage id");
    if (trim(p.text).empty()) fail(path.string(), " line ", line_no, ": passage \"", p.id, "\" has empty text");
    if (corpus.contains(p.id))
      fail(path.string(), " line ", line_no, ": duplicate passage id \"", p.id, "\"");
    corpus.add(std::move(p));
  }
  if (corpus.empty()) {
    std::string w = str("corpus file ", path.string(), " is empty");
    if (warnings) warnings->push_back(w);
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  }
  return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("cannot open ", path.string(), " for writing");
  for (const auto& p : corpus) {
    nlohmann::json j;
    j["id"] = p.id;
    j["text"] = p.text;
    out << j.dump() << '\n';
  }
  if (!out) fail("write failed for ", path.string());
}

// Pairs JSONL: {"query_id": str, "query": str, "positive_ids": [str]}.
// Every positive id must resolve against the corpus; query ids must be
// unique (downstream ensembling aligns runs by query_id). File order is
// preserved.
inline std::vector<TrainPair> load_pairs(const std::filesystem::path& path, const Corpus& corpus) {
  std::ifstream in(path);
  if (!in) fail("cannot open pairs file ", path.string());
  std::vector<TrainPair> pairs;
  std::unordered_map<std::string, std::size_t> seen_query;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) fail(path.string(), " line ", line_no, ": malformed JSONL (blank line)");
    auto j = detail::parse_jsonl_line(line, line_no, path);
    TrainPair pair;
    pair.query_id = detail::require_string(j, "query_id", line_no, path);
    pair.query_text = detail::require_string(j, "query", line_no, path);
    if (!j.contains("positive_ids") || !j["positive_ids"].is_array())
      fail(path.string(), " line ", line_no, ": missing array field \"positive_ids\"");
    for (const auto& v : j["positive_ids"]) {
      if (!v.is_string()) fail(path.string(), " line ", line_no, ": positive_ids must be strings");
      pair.positive_ids.push_back(v.get<std::string>());
    }
    if (pair.positive_ids.empty())
      fail(path.string(), " line ", line_no, ": query \"", pair.query_id, "\" has no positives");
    std::unordered_map<std::string, int> uniq;
    for (const auto& id : pair.positive_ids) {
      if (++uniq[id] > 1)
        fail(path.string(), " line ", line_no, ": duplicate positive id \"", id, "\"");
      if (!corpus.contains(id))
        fail(path.string(), " line ", line_no, ": positive id \"", id, "\" not found in corpus");
    }
    if (!seen_query.emplace(pair.query_id, line_no).second)
      fail(path.string(), " line ", line_no, ": duplicate query_id \"", pair.query_id, "\"");
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

inline void save_pairs(const std::vector<TrainPair>& pairs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("cannot open ", path.string(), " for writing");
  for (const auto& p : pairs) {
    nlohmann::json j;
    j["query_id"] = p.query_id;
    j["query"] = p.query_text;
    j["positive_ids"] = p.positive_ids;
    out << j.dump() << '\n';
  }
  if (!out) fail("write failed for ", path.string());
}

}  // namespace negminer
