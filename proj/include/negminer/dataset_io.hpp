#pragma once

// JSONL serialization of mined training examples. One object per line:
//
//   {"query_id": "...", "query": "...",
//    "pos": ["text", ...], "neg": ["text", ...],
//    "pos_meta": [{"id": "...", "score": 0.0}, ...],
//    "neg_meta": [{"id": "...", "score": 0.0, "teacher": "...", "rank": 1}, ...],
//    "mining": {"pos_score": 0.0, "threshold": 0.0 | null, "under_filled": false}}
//
// Keys are emitted sorted so reruns are byte-identical.

#include <fstream>
#include <string>
#include <vector>

#include "negminer/common.hpp"
#include "negminer/mining.hpp"
#include "json.hpp"

namespace negminer {

inline nlohmann::json example_to_json(const MinedExample& ex) {
  // nlohmann::json is map-backed, so dump() emits keys sorted
  nlohmann::json j;
  j["query_id"] = ex.query_id;
  j["query"] = ex.query_text;
  auto& pos = j["pos"] = nlohmann::json::array();
  auto& pos_meta = j["pos_meta"] = nlohmann::json::array();
  for (const auto& p : ex.positives) {
    pos.push_back(p.text);
    pos_meta.push_back({{"id", p.passage_id}, {"score", p.score}});
  }
  auto& neg = j["neg"] = nlohmann::json::array();
  auto& neg_meta = j["neg_meta"] = nlohmann::json::array();
  for (const auto& n : ex.negatives) {
    neg.push_back(n.text);
    neg_meta.push_back({{"id", n.passage_id},
                        {"score", n.score},
                        {"teacher", n.teacher},
                        {"rank", n.rank}});
  }
  j["mining"] = {{"pos_score", ex.pos_score_used},
                 {"threshold", ex.threshold_used ? nlohmann::json(*ex.threshold_used) : nlohmann::json(nullptr)},
                 {"under_filled", ex.under_filled}};
  return j;
}

inline MinedExample example_from_json(const nlohmann::json& j, std::size_t line_no) {
  MinedExample ex;
  try {
    ex.query_id = j.at("query_id").get<std::string>();
    ex.query_text = j.at("query").get<std::string>();
    const auto& pos = j.at("pos");
    const auto& pos_meta = j.at("pos_meta");
    if (pos.size() != pos_meta.size()) fail("pos/pos_meta length mismatch");
    for (std::size_t i = 0; i < pos.size(); ++i)
      ex.positives.push_back({pos_meta[i].at("id").get<std::string>(), pos[i].get<std::string>(),
                              pos_meta[i].at("score").get<double>()});
    const auto& neg = j.at("neg");
    const auto& neg_meta = j.at("neg_meta");
    if (neg.size() != neg_meta.size()) fail("neg/neg_meta length mismatch");
    for (std::size_t i = 0; i < neg.size(); ++i)
      ex.negatives.push_back({neg_meta[i].at("id").get<std::string>(), neg[i].get<std::string>(),
                              neg_meta[i].at("score").get<double>(),
                              neg_meta[i].at("teacher").get<std::string>(),
                              neg_meta[i].at("rank").get<std::size_t>()});
    const auto& mining = j.at("mining");
    ex.pos_score_used = mining.at("pos_score").get<double>();
    if (!mining.at("threshold").is_null()) ex.threshold_used = mining.at("threshold").get<double>();
    ex.under_filled = mining.at("under_filled").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail("malformed example at line ", line_no, ": ", e.what());
  }
  return ex;
}

inline void save_examples(const std::vector<MinedExample>& examples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open \"", path, "\" for writing");
  for (const auto& ex : examples) out << example_to_json(ex).dump() << '\n';
  out.flush();
  if (!out) fail("write to \"", path, "\" failed");
}

inline std::vector<MinedExample> load_examples(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open \"", path, "\"");
  std::vector<MinedExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) fail("blank line ", line_no, " in \"", path, "\"");
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) fail("malformed JSONL at line ", line_no, " of \"", path, "\"");
    out.push_back(example_from_json(j, line_no));
  }
  return out;
}

}  // namespace negminer
