#pragma once

// Parameter sweeps: run one mining method across a grid of values for its
// threshold/margin parameter (or the sampling pool depth) and summarize
// each point. The top-k candidate pass is computed once and shared by every
// grid point, which is sound because all methods only post-filter the
// candidate lists.
//
// Grids are either an explicit value list or an inclusive range
// {start, stop, step}; range expansion snaps values to a 1e-9 lattice so
// repeated float addition cannot drift a point off the grid.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "negminer/analysis.hpp"
#include "negminer/common.hpp"
#include "negminer/corpus.hpp"
#include "negminer/dataset_io.hpp"
#include "negminer/matrix.hpp"
#include "negminer/mining.hpp"
#include "negminer/topk.hpp"

namespace negminer {

enum class SweepTarget {
  method_param,  // the swept value feeds the method's own knob:
                 //   shifted -> n_shift, abs -> max_score,
                 //   marginpos -> absolute_margin, percpos -> percentage_margin
  pool_k,        // the swept value feeds the sampling pool depth
};

struct GridRange {
  double start = 0.0;
  double stop_inclusive = 0.0;
  double step = 0.0;
};

struct SweepSpec {
  MiningConfig shared;                    // non-swept fields, incl. method
  SweepTarget target = SweepTarget::method_param;
  std::vector<double> grid_values;        // explicit grid, or:
  std::optional<GridRange> grid_range;    // inclusive arithmetic progression
  bool emit_datasets = false;
  std::string out_dir;                    // required when emit_datasets
};

inline std::vector<double> expand_grid(const SweepSpec& spec) {
  std::vector<double> values = spec.grid_values;
  if (spec.grid_range) {
    if (!values.empty()) fail("give either grid values or a grid range, not both");
    const auto& r = *spec.grid_range;
    if (r.step <= 0.0) fail("grid step must be > 0");
    if (r.stop_inclusive < r.start) fail("grid stop (", r.stop_inclusive, ") below start (", r.start, ")");
    auto n = static_cast<std::size_t>(std::floor((r.stop_inclusive - r.start) / r.step + 1e-9)) + 1;
    values.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      double v = r.start + r.step * static_cast<double>(i);
      values.push_back(std::round(v * 1e9) / 1e9);
    }
  }
  if (values.empty()) fail("sweep grid is empty");

  if (spec.target == SweepTarget::method_param) {
    if (spec.shared.method == MiningMethod::naive_topk)
      fail("the naive method has no parameter to sweep");
    if (spec.shared.method == MiningMethod::topk_shifted)
      for (double v : values)
        if (v < 0.0 || v != std::floor(v)) fail("shift grid values must be nonnegative integers, got ", v);
  } else {
    if (spec.shared.sampling == SamplingStrategy::take_top)
      fail("pool_k sweeps need a sampled selection strategy");
    for (double v : values)
      if (v < 1.0 || v != std::floor(v)) fail("pool_k grid values must be integers >= 1, got ", v);
  }
  return values;
}

inline MiningConfig apply_grid_value(const SweepSpec& spec, double value) {
  MiningConfig c = spec.shared;
  if (spec.target == SweepTarget::pool_k) {
    c.pool_k = static_cast<std::size_t>(value);
    return c;
  }
  switch (c.method) {
    case MiningMethod::topk_shifted: c.n_shift = static_cast<int>(value); break;
    case MiningMethod::topk_abs: c.max_score = value; break;
    case MiningMethod::topk_margin_pos: c.absolute_margin = value; break;
    case MiningMethod::topk_perc_pos: c.percentage_margin = value; break;
    case MiningMethod::naive_topk: fail("the naive method has no parameter to sweep");
  }
  return c;
}

// Filename stem for a grid point's dataset, e.g. "percpos-0.95".
inline std::string sweep_point_name(const SweepSpec& spec, double value) {
  std::string family = spec.target == SweepTarget::pool_k
                           ? "poolk"
                           : mining_method_name(spec.shared.method);
  return family + "-" + fmt_double(value);
}

struct SweepRow {
  double value = 0.0;
  std::size_t examples = 0;
  std::size_t removed_as_false_negative = 0;
  std::size_t under_filled = 0;
  double mean_neg_score = 0.0;
  double min_neg_score = 0.0;
  double mean_diff = 0.0;  // mean of (pos_score_used - negative score)
  double mean_loss = 0.0;
  bool failed = false;
  std::string error;
};

struct SweepSummary {
  std::vector<SweepRow> rows;  // grid order
  bool any_failed = false;
};

inline SweepSummary run_sweep(const SweepSpec& spec, const std::vector<TrainPair>& pairs,
                              const EmbeddingMatrix& query_matrix, const EmbeddingMatrix& corpus_matrix,
                              const Corpus& corpus, std::size_t k_candidates, Metric metric = Metric::cosine,
                              TopkOptions opts = {}, double report_temperature = 0.05) {
  auto values = expand_grid(spec);
  spec.shared.validate();
  if (spec.emit_datasets && spec.out_dir.empty()) fail("emit_datasets requires an output directory");
  if (spec.emit_datasets) std::filesystem::create_directories(spec.out_dir);

  // one shared candidate pass for every grid point
  auto q_index = make_row_index(query_matrix);
  EmbeddingMatrix query_rows;
  query_rows.dim = query_matrix.dim;
  query_rows.normalized = query_matrix.normalized;
  query_rows.ids.reserve(pairs.size());
  query_rows.data.reserve(pairs.size() * query_matrix.dim);
  for (const auto& pair : pairs) {
    auto it = q_index.find(pair.query_id);
    if (it == q_index.end()) fail("query \"", pair.query_id, "\" missing from query matrix");
    query_rows.ids.push_back(pair.query_id);
    const float* r = query_matrix.row(it->second);
    query_rows.data.insert(query_rows.data.end(), r, r + query_matrix.dim);
  }
  auto pos_scores = positive_score_maps(pairs, query_matrix, corpus_matrix, metric);
  auto candidates = topk(query_rows, corpus_matrix, k_candidates, positive_exclusions(pairs), metric, opts);

  SweepSummary summary;
  summary.rows.reserve(values.size());
  for (double value : values) {
    SweepRow row;
    row.value = value;
    try {
      MiningConfig config = apply_grid_value(spec, value);
      config.validate();
      auto result = mine_from_candidates(pairs, candidates, pos_scores, corpus, config);

      row.examples = result.stats.examples;
      row.removed_as_false_negative = result.stats.removed_as_false_negative;
      row.under_filled = result.stats.under_filled;
      row.mean_neg_score = result.stats.negative_scores.mean;
      row.min_neg_score = result.stats.negative_scores.min;

      std::vector<double> diffs, losses, negs;
      for (const auto& ex : result.examples) {
        negs.clear();
        for (const auto& n : ex.negatives) {
          diffs.push_back(ex.pos_score_used - n.score);
          negs.push_back(n.score);
        }
        losses.push_back(infonce_loss(ex.pos_score_used, negs, report_temperature));
      }
      row.mean_diff = summarize(std::move(diffs)).mean;
      row.mean_loss = summarize(std::move(losses)).mean;

      if (spec.emit_datasets) {
        auto path = std::filesystem::path(spec.out_dir) / (sweep_point_name(spec, value) + ".jsonl");
        save_examples(result.examples, path.string());
      }
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
      summary.any_failed = true;
    }
    summary.rows.push_back(std::move(row));
  }
  return summary;
}

inline std::string sweep_summary_csv(const SweepSummary& summary) {
  std::string csv =
      "value,examples,removed_as_false_negative,under_filled,mean_neg_score,min_neg_score,mean_diff,mean_loss,status\n";
  for (const auto& r : summary.rows) {
    csv += fmt_double(r.value) + ",";
    if (r.failed) {
      csv += ",,,,,,,failed\n";
    } else {
      csv += std::to_string(r.examples) + "," + std::to_string(r.removed_as_false_negative) + "," +
             std::to_string(r.under_filled) + "," + fmt_double(r.mean_neg_score) + "," +
             fmt_double(r.min_neg_score) + "," + fmt_double(r.mean_diff) + "," + fmt_double(r.mean_loss) + ",ok\n";
    }
  }
  return csv;
}

inline nlohmann::json sweep_summary_json(const SweepSummary& summary) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : summary.rows) {
    nlohmann::json j;
    j["value"] = r.value;
    if (r.failed) {
      j["status"] = "failed";
      j["error"] = r.error;
    } else {
      j["status"] = "ok";
      j["examples"] = r.examples;
      j["removed_as_false_negative"] = r.removed_as_false_negative;
      j["under_filled"] = r.under_filled;
      j["mean_neg_score"] = r.mean_neg_score;
      j["min_neg_score"] = r.min_neg_score;
      j["mean_diff"] = r.mean_diff;
      j["mean_loss"] = r.mean_loss;
    }
    rows.push_back(std::move(j));
  }
  return {{"rows", rows}, {"any_failed", summary.any_failed}};
}

inline void write_sweep_summary(const SweepSummary& summary, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  detail::write_text_file(out_dir / "sweep_summary.csv", sweep_summary_csv(summary));
  detail::write_text_file(out_dir / "sweep_summary.json", sweep_summary_json(summary).dump(2) + "\n");
}

}  // namespace negminer
