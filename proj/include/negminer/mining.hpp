#pragma once

// Hard-negative mining methods. A candidate list from top-k search is first
// filtered to drop likely false negatives, then a selection strategy picks
// the final negatives.
//
// Filtering methods:
//   naive_topk      keep everything
//   topk_shifted    drop the first n_shift ranked candidates
//   topk_abs        keep score <= max_score
//   topk_margin_pos keep score <= pos_score - absolute_margin
//   topk_perc_pos   keep score <= pos_score * percentage_margin
//
// The positive-aware thresholds (margin/percentage) key the cutoff to each
// query's own positive score instead of a global constant. Candidates that
// sit exactly on a threshold survive: only scores strictly above it are
// treated as potential false negatives.
//
// Selection strategies:
//   take_top            first num_negatives eligible candidates
//   sampled_topk        sample num_negatives from the first pool_k eligible,
//                       weighted by softmax(score / sampling_temperature),
//                       without replacement
//   top1_plus_sampled   always keep the strongest candidate, sample the rest
//                       from eligible ranks 2..pool_k the same way
//
// Sampling draws are seeded per example (mix_seed of the run seed and the
// pair index) so results do not depend on worker scheduling. Selected
// negatives are reported in ascending rank order, where rank is the 1-based
// position in the post-filter candidate list.

#include <cstdint>
#include <exception>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "negminer/common.hpp"
#include "negminer/corpus.hpp"
#include "negminer/matrix.hpp"
#include "negminer/topk.hpp"

namespace negminer {

enum class MiningMethod { naive_topk, topk_shifted, topk_abs, topk_margin_pos, topk_perc_pos };
enum class SamplingStrategy { take_top, sampled_topk, top1_plus_sampled };
enum class PositiveRule { min, max, first };

inline const char* mining_method_name(MiningMethod m) {
  switch (m) {
    case MiningMethod::naive_topk: return "naive";
    case MiningMethod::topk_shifted: return "shifted";
    case MiningMethod::topk_abs: return "abs";
    case MiningMethod::topk_margin_pos: return "marginpos";
    case MiningMethod::topk_perc_pos: return "percpos";
  }
  return "?";
}

inline MiningMethod mining_method_from_name(const std::string& name) {
  if (name == "naive") return MiningMethod::naive_topk;
  if (name == "shifted") return MiningMethod::topk_shifted;
  if (name == "abs") return MiningMethod::topk_abs;
  if (name == "marginpos") return MiningMethod::topk_margin_pos;
  if (name == "percpos") return MiningMethod::topk_perc_pos;
  fail("unknown mining method \"", name, "\" (expected naive|shifted|abs|marginpos|percpos)");
}

inline const char* sampling_name(SamplingStrategy s) {
  switch (s) {
    case SamplingStrategy::take_top: return "take_top";
    case SamplingStrategy::sampled_topk: return "sampled_topk";
    case SamplingStrategy::top1_plus_sampled: return "top1_plus_sampled";
  }
  return "?";
}

inline SamplingStrategy sampling_from_name(const std::string& name) {
  if (name == "take_top") return SamplingStrategy::take_top;
  if (name == "sampled_topk") return SamplingStrategy::sampled_topk;
  if (name == "top1_plus_sampled") return SamplingStrategy::top1_plus_sampled;
  fail("unknown sampling strategy \"", name, "\" (expected take_top|sampled_topk|top1_plus_sampled)");
}

inline const char* positive_rule_name(PositiveRule r) {
  switch (r) {
    case PositiveRule::min: return "min";
    case PositiveRule::max: return "max";
    case PositiveRule::first: return "first";
  }
  return "?";
}

inline PositiveRule positive_rule_from_name(const std::string& name) {
  if (name == "min") return PositiveRule::min;
  if (name == "max") return PositiveRule::max;
  if (name == "first") return PositiveRule::first;
  fail("unknown multi_positive_rule \"", name, "\" (expected min|max|first)");
}

struct MiningConfig {
  MiningMethod method = MiningMethod::topk_perc_pos;
  int n_shift = 10;                // topk_shifted
  double max_score = 0.7;          // topk_abs
  double absolute_margin = 0.05;   // topk_margin_pos
  double percentage_margin = 0.95; // topk_perc_pos, as a fraction
  std::size_t num_negatives = 4;
  SamplingStrategy sampling = SamplingStrategy::take_top;
  std::size_t pool_k = 10;         // sampling pool depth
  double sampling_temperature = 1.0;
  std::uint64_t seed = 0;
  PositiveRule multi_positive_rule = PositiveRule::min;
  std::string teacher = "teacher";  // provenance tag on mined negatives

  void validate() const {
    if (num_negatives < 1) fail("num_negatives must be >= 1");
    if (n_shift < 0) fail("n_shift must be >= 0");
    if (percentage_margin <= 0.0) fail("percentage_margin must be > 0 (a fraction like 0.95, not 95)");
    if (sampling_temperature <= 0.0) fail("sampling_temperature must be > 0");
    if (sampling != SamplingStrategy::take_top && pool_k < num_negatives)
      fail("pool_k (", pool_k, ") must be >= num_negatives (", num_negatives, ")");
  }
};

// Aggregates the positive passage scores of a pair into the single
// pos_score the thresholds key on.
inline double positive_score(const TrainPair& pair, const std::unordered_map<std::string, double>& scores,
                             PositiveRule rule) {
  double out = 0.0;
  bool set = false;
  for (const auto& pid : pair.positive_ids) {
    auto it = scores.find(pid);
    if (it == scores.end()) fail("missing positive score for passage \"", pid, "\" of query \"", pair.query_id, "\"");
    double s = it->second;
    if (!set) {
      out = s;
      set = true;
      if (rule == PositiveRule::first) break;
    } else if (rule == PositiveRule::min) {
      out = std::min(out, s);
    } else if (rule == PositiveRule::max) {
      out = std::max(out, s);
    }
  }
  if (!set) fail("query \"", pair.query_id, "\" has no positives");
  return out;
}

struct FilterOutcome {
  CandidateList eligible;  // post-filter, original descending order kept
  std::size_t removed_as_false_negative = 0;
  std::optional<double> threshold_used;  // set for abs/marginpos/percpos
};

inline FilterOutcome filter_candidates(const CandidateList& candidates, double pos_score,
                                       const MiningConfig& config) {
  FilterOutcome out;
  out.eligible.query_id = candidates.query_id;
  out.eligible.underfull = candidates.underfull;

  switch (config.method) {
    case MiningMethod::naive_topk:
      out.eligible.entries = candidates.entries;
      break;
    case MiningMethod::topk_shifted: {
      std::size_t skip = std::min<std::size_t>(static_cast<std::size_t>(config.n_shift),
                                               candidates.entries.size());
      out.eligible.entries.assign(candidates.entries.begin() + static_cast<std::ptrdiff_t>(skip),
                                  candidates.entries.end());
      break;
    }
    case MiningMethod::topk_abs:
      out.threshold_used = config.max_score;
      break;
    case MiningMethod::topk_margin_pos:
      out.threshold_used = pos_score - config.absolute_margin;
      break;
    case MiningMethod::topk_perc_pos:
      out.threshold_used = pos_score * config.percentage_margin;
      break;
  }
  if (out.threshold_used) {
    double thr = *out.threshold_used;
    for (const auto& c : candidates.entries)
      if (c.score <= thr) out.eligible.entries.push_back(c);
  }
  out.removed_as_false_negative = candidates.entries.size() - out.eligible.entries.size();
  return out;
}

struct SelectedNegative {
  std::string passage_id;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based rank in the post-filter candidate list
};

struct Selection {
  std::vector<SelectedNegative> negatives;  // ascending rank
  bool under_filled = false;                // fewer than num_negatives available
};

namespace detail {

// Softmax sampling without replacement: sequential draws over the remaining
// pool with renormalization. Weights use max-subtraction; the uniform draw
// is built from mt19937_64 directly so results are stable across platforms.
inline std::vector<std::size_t> softmax_sample(const std::vector<double>& scores, std::size_t take,
                                               double temperature, std::mt19937_64& rng) {
  std::vector<double> weight(scores.size());
  double max_s = *std::max_element(scores.begin(), scores.end());
  for (std::size_t i = 0; i < scores.size(); ++i) weight[i] = std::exp((scores[i] - max_s) / temperature);

  std::vector<std::size_t> picked;
  picked.reserve(take);
  std::vector<bool> used(scores.size(), false);
  for (std::size_t round = 0; round < take; ++round) {
    double total = 0.0;
    for (std::size_t i = 0; i < weight.size(); ++i)
      if (!used[i]) total += weight[i];
    double u = uniform01(rng) * total;
    std::size_t chosen = weight.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < weight.size(); ++i) {
      if (used[i]) continue;
      acc += weight[i];
      if (u < acc) {
        chosen = i;
        break;
      }
    }
    if (chosen == weight.size()) {  // numeric edge: u landed on the total
      for (std::size_t i = weight.size(); i-- > 0;)
        if (!used[i]) {
          chosen = i;
          break;
        }
    }
    used[chosen] = true;
    picked.push_back(chosen);
  }
  return picked;
}

}  // namespace detail

inline Selection select_negatives(const FilterOutcome& outcome, const MiningConfig& config,
                                  std::optional<std::uint64_t> seed_override = {}) {
  const auto& eligible = outcome.eligible.entries;
  const std::size_t want = config.num_negatives;
  Selection sel;

  auto take_prefix = [&](std::size_t begin, std::size_t count) {
    for (std::size_t i = begin; i < std::min(begin + count, eligible.size()); ++i)
      sel.negatives.push_back({eligible[i].passage_id, eligible[i].score, i + 1});
  };

  if (config.sampling == SamplingStrategy::take_top) {
    take_prefix(0, want);
    sel.under_filled = sel.negatives.size() < want;
    return sel;
  }

  std::mt19937_64 rng(seed_override ? *seed_override : config.seed);
  const bool keep_top1 = config.sampling == SamplingStrategy::top1_plus_sampled;
  std::size_t pool_begin = 0;
  std::size_t sample_want = want;
  if (keep_top1 && !eligible.empty()) {
    sel.negatives.push_back({eligible[0].passage_id, eligible[0].score, 1});
    pool_begin = 1;
    sample_want = want - 1;
  }
  std::size_t pool_end = std::min(config.pool_k, eligible.size());
  std::size_t pool_size = pool_end > pool_begin ? pool_end - pool_begin : 0;

  if (pool_size <= sample_want) {
    take_prefix(pool_begin, pool_size);
  } else if (sample_want > 0) {
    std::vector<double> scores(pool_size);
    for (std::size_t i = 0; i < pool_size; ++i) scores[i] = eligible[pool_begin + i].score;
    for (std::size_t idx : detail::softmax_sample(scores, sample_want, config.sampling_temperature, rng)) {
      std::size_t e = pool_begin + idx;
      sel.negatives.push_back({eligible[e].passage_id, eligible[e].score, e + 1});
    }
  }
  std::sort(sel.negatives.begin(), sel.negatives.end(),
            [](const SelectedNegative& a, const SelectedNegative& b) { return a.rank < b.rank; });
  sel.under_filled = sel.negatives.size() < want;
  return sel;
}

struct ScoredPositive {
  std::string passage_id;
  std::string text;
  double score = 0.0;
};

struct MinedNegative {
  std::string passage_id;
  std::string text;
  double score = 0.0;
  std::string teacher;
  std::size_t rank = 0;
};

struct MinedExample {
  std::string query_id;
  std::string query_text;
  std::vector<ScoredPositive> positives;
  std::vector<MinedNegative> negatives;
  double pos_score_used = 0.0;              // aggregated per multi_positive_rule
  std::optional<double> threshold_used;     // from the filter, when thresholded
  std::size_t removed_as_false_negative = 0;
  bool under_filled = false;
};

struct MiningStats {
  std::size_t examples = 0;
  std::size_t removed_as_false_negative = 0;
  std::size_t under_filled = 0;
  Summary positive_scores;  // over pos_score_used per example
  Summary negative_scores;  // over all selected negatives
};

struct MiningResult {
  std::vector<MinedExample> examples;
  MiningStats stats;
};

// Per-pair positive scores, computed directly (positives are excluded from
// the top-k pass, so their scores never appear in candidate lists).
inline std::vector<std::unordered_map<std::string, double>> positive_score_maps(
    const std::vector<TrainPair>& pairs, const EmbeddingMatrix& query_matrix,
    const EmbeddingMatrix& corpus_matrix, Metric metric) {
  auto q_index = make_row_index(query_matrix);
  auto c_index = make_row_index(corpus_matrix);
  std::vector<std::unordered_map<std::string, double>> maps(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto qit = q_index.find(pairs[i].query_id);
    if (qit == q_index.end()) fail("query \"", pairs[i].query_id, "\" missing from query matrix");
    std::span<const float> qv{query_matrix.row(qit->second), query_matrix.dim};
    for (const auto& pid : pairs[i].positive_ids) {
      auto cit = c_index.find(pid);
      if (cit == c_index.end()) fail("positive \"", pid, "\" missing from corpus matrix");
      maps[i][pid] = score(qv, {corpus_matrix.row(cit->second), corpus_matrix.dim}, metric);
    }
  }
  return maps;
}

inline ExclusionMap positive_exclusions(const std::vector<TrainPair>& pairs) {
  ExclusionMap ex;
  for (const auto& p : pairs)
    ex[p.query_id].insert(p.positive_ids.begin(), p.positive_ids.end());
  return ex;
}

// Filter + select over precomputed candidate lists (aligned with pairs by
// index). This is the path sweeps reuse so the top-k pass runs only once.
inline MiningResult mine_from_candidates(const std::vector<TrainPair>& pairs,
                                         const std::vector<CandidateList>& candidates,
                                         const std::vector<std::unordered_map<std::string, double>>& pos_scores,
                                         const Corpus& corpus, const MiningConfig& config) {
  config.validate();
  if (candidates.size() != pairs.size())
    fail("candidate lists (", candidates.size(), ") misaligned with pairs (", pairs.size(), ")");
  if (pos_scores.size() != pairs.size())
    fail("positive score maps (", pos_scores.size(), ") misaligned with pairs (", pairs.size(), ")");

  MiningResult result;
  result.examples.resize(pairs.size());
  std::exception_ptr first_error;

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(pairs.size()); ++i) {
    try {
      const auto& pair = pairs[static_cast<std::size_t>(i)];
      const auto& cand = candidates[static_cast<std::size_t>(i)];
      if (cand.query_id != pair.query_id)
        fail("candidate list ", i, " is for query \"", cand.query_id, "\", expected \"", pair.query_id, "\"");

      MinedExample ex;
      ex.query_id = pair.query_id;
      ex.query_text = pair.query_text;
      ex.pos_score_used = positive_score(pair, pos_scores[static_cast<std::size_t>(i)], config.multi_positive_rule);
      for (const auto& pid : pair.positive_ids)
        ex.positives.push_back({pid, corpus.at(pid).text, pos_scores[static_cast<std::size_t>(i)].at(pid)});

      auto outcome = filter_candidates(cand, ex.pos_score_used, config);
      auto sel = select_negatives(outcome, config, mix_seed(config.seed, static_cast<std::uint64_t>(i)));
      ex.threshold_used = outcome.threshold_used;
      ex.removed_as_false_negative = outcome.removed_as_false_negative;
      ex.under_filled = sel.under_filled;
      for (const auto& n : sel.negatives)
        ex.negatives.push_back({n.passage_id, corpus.at(n.passage_id).text, n.score, config.teacher, n.rank});
      result.examples[static_cast<std::size_t>(i)] = std::move(ex);
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);

  std::vector<double> pos_vals, neg_vals;
  for (const auto& ex : result.examples) {
    ++result.stats.examples;
    result.stats.removed_as_false_negative += ex.removed_as_false_negative;
    if (ex.under_filled) ++result.stats.under_filled;
    pos_vals.push_back(ex.pos_score_used);
    for (const auto& n : ex.negatives) neg_vals.push_back(n.score);
  }
  result.stats.positive_scores = summarize(std::move(pos_vals));
  result.stats.negative_scores = summarize(std::move(neg_vals));
  return result;
}

// Full pipeline for one teacher: positive scores, top-k with positives
// excluded, filter, select.
inline MiningResult mine_dataset(const std::vector<TrainPair>& pairs, const EmbeddingMatrix& query_matrix,
                                 const EmbeddingMatrix& corpus_matrix, const Corpus& corpus,
                                 const MiningConfig& config, std::size_t k_candidates,
                                 Metric metric = Metric::cosine, TopkOptions opts = {}) {
  config.validate();
  if (k_candidates < 1) fail("k_candidates must be >= 1");

  auto q_index = make_row_index(query_matrix);
  EmbeddingMatrix query_rows;
  query_rows.dim = query_matrix.dim;
  query_rows.normalized = query_matrix.normalized;
  query_rows.data.reserve(pairs.size() * query_matrix.dim);
  query_rows.ids.reserve(pairs.size());
  for (const auto& pair : pairs) {
    auto it = q_index.find(pair.query_id);
    if (it == q_index.end()) fail("query \"", pair.query_id, "\" missing from query matrix");
    query_rows.ids.push_back(pair.query_id);
    const float* r = query_matrix.row(it->second);
    query_rows.data.insert(query_rows.data.end(), r, r + query_matrix.dim);
  }

  auto pos_scores = positive_score_maps(pairs, query_matrix, corpus_matrix, metric);
  auto candidates = topk(query_rows, corpus_matrix, k_candidates, positive_exclusions(pairs), metric, opts);
  return mine_from_candidates(pairs, candidates, pos_scores, corpus, config);
}

}  // namespace negminer
