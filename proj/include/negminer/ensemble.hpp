#pragma once

// Combine mined datasets from several teacher models into one train set.
//
// Two schemes:
//   cross-sample  per example, draw one teacher uniformly (seeded) and take
//                 all its negatives for that example
//   intra-sample  take the top-1 negative of every teacher (run order);
//                 the dedup variant then drops duplicate passages and
//                 refills by iterating teachers best-accuracy-first,
//                 round-robin, each contributing its next candidate that is
//                 not yet included
//
// Runs must cover the identical query_id set. Positives and per-example
// mining metadata are carried over from the drawn teacher (cross-sample) or
// from the most accurate run (intra-sample).

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "negminer/common.hpp"
#include "negminer/mining.hpp"

namespace negminer {

struct TeacherRun {
  std::string teacher_name;
  int accuracy_rank = 1;  // 1 = most accurate
  std::vector<MinedExample> examples;
};

namespace detail {

inline std::unordered_map<std::string, std::size_t> example_index(const TeacherRun& run) {
  std::unordered_map<std::string, std::size_t> idx;
  idx.reserve(run.examples.size());
  for (std::size_t i = 0; i < run.examples.size(); ++i) {
    auto [it, fresh] = idx.emplace(run.examples[i].query_id, i);
    if (!fresh) fail("run \"", run.teacher_name, "\" has duplicate query_id \"", run.examples[i].query_id, "\"");
  }
  return idx;
}

inline void check_alignment(const std::vector<TeacherRun>& runs) {
  if (runs.empty()) fail("no runs to ensemble");
  std::set<std::string> base;
  for (const auto& ex : runs[0].examples) base.insert(ex.query_id);
  for (std::size_t r = 1; r < runs.size(); ++r) {
    std::set<std::string> other;
    for (const auto& ex : runs[r].examples) other.insert(ex.query_id);
    if (other == base) continue;
    std::vector<std::string> diff;
    std::set_symmetric_difference(base.begin(), base.end(), other.begin(), other.end(),
                                  std::back_inserter(diff));
    std::string listed;
    for (std::size_t i = 0; i < diff.size() && i < 20; ++i) {
      if (i) listed += ", ";
      listed += diff[i];
    }
    if (diff.size() > 20) listed += str(", ... (", diff.size() - 20, " more)");
    fail("runs \"", runs[0].teacher_name, "\" and \"", runs[r].teacher_name,
         "\" cover different query sets; symmetric difference: ", listed);
  }
}

}  // namespace detail

inline std::vector<MinedExample> cross_sample_ensemble(const std::vector<TeacherRun>& runs,
                                                       std::size_t num_negatives, std::uint64_t seed) {
  detail::check_alignment(runs);
  if (num_negatives < 1) fail("num_negatives must be >= 1");

  std::vector<std::unordered_map<std::string, std::size_t>> index;
  index.reserve(runs.size());
  for (const auto& r : runs) index.push_back(detail::example_index(r));

  std::vector<MinedExample> out;
  out.reserve(runs[0].examples.size());
  for (std::size_t i = 0; i < runs[0].examples.size(); ++i) {
    std::mt19937_64 rng(mix_seed(seed, i));
    auto pick = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(runs.size()));
    if (pick >= runs.size()) pick = runs.size() - 1;
    const auto& query_id = runs[0].examples[i].query_id;
    MinedExample ex = runs[pick].examples[index[pick].at(query_id)];
    if (ex.negatives.size() > num_negatives) ex.negatives.resize(num_negatives);
    ex.under_filled = ex.negatives.size() < num_negatives;
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<MinedExample> intra_sample_ensemble(const std::vector<TeacherRun>& runs,
                                                       std::size_t num_negatives, bool dedup) {
  detail::check_alignment(runs);
  if (runs.size() != num_negatives)
    fail("intra-sample ensembling needs one run per negative slot: got ", runs.size(), " runs for ",
         num_negatives, " negatives");

  std::vector<std::unordered_map<std::string, std::size_t>> index;
  index.reserve(runs.size());
  for (const auto& r : runs) index.push_back(detail::example_index(r));

  // replacement order: most accurate teacher first, run order breaks ties
  std::vector<std::size_t> by_accuracy(runs.size());
  for (std::size_t r = 0; r < runs.size(); ++r) by_accuracy[r] = r;
  std::stable_sort(by_accuracy.begin(), by_accuracy.end(),
                   [&](std::size_t a, std::size_t b) { return runs[a].accuracy_rank < runs[b].accuracy_rank; });
  std::size_t best = by_accuracy[0];

  std::vector<MinedExample> out;
  out.reserve(runs[0].examples.size());
  for (std::size_t i = 0; i < runs[0].examples.size(); ++i) {
    const auto& query_id = runs[0].examples[i].query_id;

    MinedExample ex = runs[best].examples[index[best].at(query_id)];
    ex.negatives.clear();

    for (std::size_t r = 0; r < runs.size(); ++r) {
      const auto& src = runs[r].examples[index[r].at(query_id)];
      if (src.negatives.empty())
        fail("run \"", runs[r].teacher_name, "\" has no negatives for query \"", query_id, "\"");
      ex.negatives.push_back(src.negatives[0]);
    }

    if (dedup) {
      std::unordered_set<std::string> seen;
      std::vector<MinedNegative> unique;
      for (auto& n : ex.negatives)
        if (seen.insert(n.passage_id).second) unique.push_back(std::move(n));
      ex.negatives = std::move(unique);

      // next candidate per teacher (0 = its top-1, already consumed above)
      std::vector<std::size_t> cursor(runs.size(), 1);
      bool progressed = true;
      while (ex.negatives.size() < num_negatives && progressed) {
        progressed = false;
        for (std::size_t r : by_accuracy) {
          if (ex.negatives.size() >= num_negatives) break;
          const auto& pool = runs[r].examples[index[r].at(query_id)].negatives;
          while (cursor[r] < pool.size() && seen.count(pool[cursor[r]].passage_id)) ++cursor[r];
          if (cursor[r] < pool.size()) {
            seen.insert(pool[cursor[r]].passage_id);
            ex.negatives.push_back(pool[cursor[r]]);
            ++cursor[r];
            progressed = true;
          }
        }
      }
    }
    ex.under_filled = ex.negatives.size() < num_negatives;
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace negminer
