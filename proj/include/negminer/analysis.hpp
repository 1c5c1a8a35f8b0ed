#pragma once

// Diagnostics over mined datasets.
//
//  - Jaccard similarity between teachers: mean over examples of the Jaccard
//    index of their top-n negative id sets. Says how much two teachers agree
//    on which passages are hard negatives.
//  - Histogram report: binned distributions of positive scores, negative
//    scores, per-negative (pos - neg) score differences, and the
//    per-example contrastive loss. Positive-aware filtering shows up here
//    as a hard floor on the difference series and a cap on the loss series.
//
// Loss is the standard temperature-scaled contrastive cross-entropy over
// one positive and the example's negatives, computed with max-subtraction:
//
//   L = -log( exp(p/t) / (exp(p/t) + sum_i exp(n_i/t)) )
//
// Reports serialize to CSV ("bin_start,bin_end,count"), a JSON summary, and
// self-contained SVG bar charts. All float formatting uses shortest
// round-trip decimals so outputs are byte-stable.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "negminer/common.hpp"
#include "negminer/ensemble.hpp"
#include "negminer/mining.hpp"

namespace negminer {

inline double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
  if (a.empty() && b.empty()) return 1.0;  // convention: two empty sets agree
  std::size_t inter = 0;
  const auto& small = a.size() <= b.size() ? a : b;
  const auto& large = a.size() <= b.size() ? b : a;
  for (const auto& x : small) inter += large.count(x);
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

struct JaccardMatrix {
  std::vector<std::string> teacher_names;
  std::vector<double> values;  // row-major, symmetric, diagonal 1.0
  std::size_t top_n = 4;

  double at(std::size_t i, std::size_t j) const { return values[i * teacher_names.size() + j]; }
};

inline JaccardMatrix jaccard_matrix(const std::vector<TeacherRun>& runs, std::size_t top_n = 4) {
  detail::check_alignment(runs);
  if (top_n < 1) fail("top_n must be >= 1");
  const std::size_t n = runs.size();

  std::vector<std::unordered_map<std::string, std::size_t>> index;
  index.reserve(n);
  for (const auto& r : runs) index.push_back(detail::example_index(r));

  // top-n negative id set per run per example, aligned to runs[0] order
  std::vector<std::vector<std::set<std::string>>> top_ids(n);
  for (std::size_t r = 0; r < n; ++r) {
    top_ids[r].reserve(runs[0].examples.size());
    for (const auto& base_ex : runs[0].examples) {
      const auto& ex = runs[r].examples[index[r].at(base_ex.query_id)];
      std::set<std::string> ids;
      for (std::size_t k = 0; k < ex.negatives.size() && k < top_n; ++k)
        ids.insert(ex.negatives[k].passage_id);
      top_ids[r].push_back(std::move(ids));
    }
  }

  JaccardMatrix m;
  m.top_n = top_n;
  for (const auto& r : runs) m.teacher_names.push_back(r.teacher_name);
  m.values.assign(n * n, 1.0);
  const std::size_t n_examples = runs[0].examples.size();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t e = 0; e < n_examples; ++e) acc += jaccard(top_ids[i][e], top_ids[j][e]);
      double mean = n_examples ? acc / static_cast<double>(n_examples) : 1.0;
      m.values[i * n + j] = mean;
      m.values[j * n + i] = mean;
    }
  }
  return m;
}

inline double infonce_loss(double pos_score, std::span<const double> neg_scores, double temperature) {
  if (temperature <= 0.0) fail("temperature must be > 0");
  if (neg_scores.empty()) return 0.0;
  double m = pos_score;
  for (double s : neg_scores) m = std::max(m, s);
  double sum = std::exp((pos_score - m) / temperature);
  for (double s : neg_scores) sum += std::exp((s - m) / temperature);
  return std::log(sum) - (pos_score - m) / temperature;
}

struct HistogramSeries {
  std::string name;
  std::vector<double> bin_edges;  // bins + 1 entries, uniform
  std::vector<std::size_t> counts;
  Summary summary;
};

struct HistogramReport {
  double temperature = 0.05;
  std::size_t bins = 0;
  std::vector<HistogramSeries> series;  // positive_scores, negative_scores,
                                        // score_differences, example_losses
};

namespace detail {

inline HistogramSeries bin_series(std::string name, const std::vector<double>& values, std::size_t bins) {
  HistogramSeries s;
  s.name = std::move(name);
  s.summary = summarize(values);
  double lo = s.summary.min, hi = s.summary.max;
  if (values.empty()) {
    lo = 0.0;
    hi = 1.0;
  } else if (lo == hi) {
    lo -= 0.5;  // degenerate range: widen so the single value bins cleanly
    hi += 0.5;
  }
  s.bin_edges.resize(bins + 1);
  double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i <= bins; ++i) s.bin_edges[i] = lo + width * static_cast<double>(i);
  s.bin_edges[bins] = hi;
  s.counts.assign(bins, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    if (b >= bins) b = bins - 1;  // max lands in the last bin
    ++s.counts[b];
  }
  return s;
}

}  // namespace detail

inline HistogramReport histogram_report(const std::vector<MinedExample>& dataset, std::size_t bins = 50,
                                        double temperature = 0.05) {
  if (dataset.empty()) fail("cannot report on an empty dataset");
  if (bins < 1) fail("bins must be >= 1");
  if (temperature <= 0.0) fail("temperature must be > 0");

  std::vector<double> pos, neg, diff, loss;
  std::vector<double> neg_scores;
  for (const auto& ex : dataset) {
    for (const auto& p : ex.positives) pos.push_back(p.score);
    neg_scores.clear();
    for (const auto& n : ex.negatives) {
      neg.push_back(n.score);
      diff.push_back(ex.pos_score_used - n.score);
      neg_scores.push_back(n.score);
    }
    loss.push_back(infonce_loss(ex.pos_score_used, neg_scores, temperature));
  }

  HistogramReport r;
  r.temperature = temperature;
  r.bins = bins;
  r.series.push_back(detail::bin_series("positive_scores", pos, bins));
  r.series.push_back(detail::bin_series("negative_scores", neg, bins));
  r.series.push_back(detail::bin_series("score_differences", diff, bins));
  r.series.push_back(detail::bin_series("example_losses", loss, bins));
  return r;
}

namespace detail {

inline nlohmann::json summary_to_json(const Summary& s) {
  return {{"count", s.count}, {"min", s.min},  {"max", s.max},
          {"mean", s.mean},   {"p50", s.p50},  {"p95", s.p95}};
}

// Minimal static bar chart. Fixed canvas, counts normalized to the tallest
// bin; axis labels show the data range and peak count.
inline std::string series_svg(const HistogramSeries& s) {
  const double width = 640.0, height = 360.0;
  const double left = 50.0, right = 10.0, top = 30.0, bottom = 40.0;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  std::size_t peak = 1;
  for (auto c : s.counts) peak = std::max(peak, c);

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt_double(width) + "\" height=\"" +
         fmt_double(height) + "\" viewBox=\"0 0 " + fmt_double(width) + " " + fmt_double(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + fmt_double(width / 2) + "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" +
         s.name + "</text>\n";
  double bar_w = plot_w / static_cast<double>(s.counts.size());
  for (std::size_t i = 0; i < s.counts.size(); ++i) {
    double h = plot_h * static_cast<double>(s.counts[i]) / static_cast<double>(peak);
    double x = left + bar_w * static_cast<double>(i);
    double y = top + plot_h - h;
    svg += "<rect x=\"" + fmt_double(x) + "\" y=\"" + fmt_double(y) + "\" width=\"" + fmt_double(bar_w) +
           "\" height=\"" + fmt_double(h) + "\" fill=\"#4878a8\" stroke=\"white\" stroke-width=\"0.5\"/>\n";
  }
  svg += "<line x1=\"" + fmt_double(left) + "\" y1=\"" + fmt_double(top + plot_h) + "\" x2=\"" +
         fmt_double(left + plot_w) + "\" y2=\"" + fmt_double(top + plot_h) + "\" stroke=\"black\"/>\n";
  svg += "<text x=\"" + fmt_double(left) + "\" y=\"" + fmt_double(height - 15) +
         "\" font-family=\"sans-serif\" font-size=\"11\">" + fmt_double(s.bin_edges.front()) + "</text>\n";
  svg += "<text x=\"" + fmt_double(left + plot_w) + "\" y=\"" + fmt_double(height - 15) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + fmt_double(s.bin_edges.back()) +
         "</text>\n";
  svg += "<text x=\"" + fmt_double(left - 5) + "\" y=\"" + fmt_double(top + 10) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + std::to_string(peak) + "</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace detail

struct EmitFormats {
  bool csv = true;
  bool json = true;
  bool svg = false;
};

inline std::vector<std::string> emit_report(const HistogramReport& report, const std::filesystem::path& out_dir,
                                            EmitFormats formats = {}) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  nlohmann::json summary;
  summary["temperature"] = report.temperature;
  summary["bins"] = report.bins;
  for (const auto& s : report.series) {
    if (formats.csv) {
      std::string csv = "bin_start,bin_end,count\n";
      for (std::size_t i = 0; i < s.counts.size(); ++i)
        csv += fmt_double(s.bin_edges[i]) + "," + fmt_double(s.bin_edges[i + 1]) + "," +
               std::to_string(s.counts[i]) + "\n";
      auto p = out_dir / (s.name + ".csv");
      detail::write_text_file(p, csv);
      written.push_back(p.string());
    }
    if (formats.svg) {
      auto p = out_dir / (s.name + ".svg");
      detail::write_text_file(p, detail::series_svg(s));
      written.push_back(p.string());
    }
    summary["series"][s.name] = detail::summary_to_json(s.summary);
  }
  if (formats.json) {
    auto p = out_dir / "summary.json";
    detail::write_text_file(p, summary.dump(2) + "\n");
    written.push_back(p.string());
  }
  return written;
}

inline std::vector<std::string> emit_report(const JaccardMatrix& matrix, const std::filesystem::path& out_dir,
                                            EmitFormats formats = {}) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  const std::size_t n = matrix.teacher_names.size();

  if (formats.csv) {
    std::string csv = "teacher";
    for (const auto& name : matrix.teacher_names) csv += "," + name;
    csv += "\n";
    for (std::size_t i = 0; i < n; ++i) {
      csv += matrix.teacher_names[i];
      for (std::size_t j = 0; j < n; ++j) csv += "," + fmt_double(matrix.at(i, j));
      csv += "\n";
    }
    auto p = out_dir / "jaccard_matrix.csv";
    detail::write_text_file(p, csv);
    written.push_back(p.string());
  }
  if (formats.json) {
    nlohmann::json j;
    j["teachers"] = matrix.teacher_names;
    j["top_n"] = matrix.top_n;
    auto& rows = j["values"] = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t jx = 0; jx < n; ++jx) row.push_back(matrix.at(i, jx));
      rows.push_back(std::move(row));
    }
    auto p = out_dir / "jaccard_matrix.json";
    detail::write_text_file(p, j.dump(2) + "\n");
    written.push_back(p.string());
  }
  if (formats.svg) {
    const double cell = 70.0, label = 120.0;
    double size_w = label + cell * static_cast<double>(n) + 10.0;
    double size_h = label + cell * static_cast<double>(n) + 10.0;
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt_double(size_w) +
                      "\" height=\"" + fmt_double(size_h) + "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double v = matrix.at(i, j);
        int shade = static_cast<int>(255.0 - v * 155.0);
        double x = label + cell * static_cast<double>(j), y = label + cell * static_cast<double>(i);
        svg += "<rect x=\"" + fmt_double(x) + "\" y=\"" + fmt_double(y) + "\" width=\"" + fmt_double(cell) +
               "\" height=\"" + fmt_double(cell) + "\" fill=\"rgb(" + std::to_string(shade) + "," +
               std::to_string(shade) + ",255)\" stroke=\"white\"/>\n";
        svg += "<text x=\"" + fmt_double(x + cell / 2) + "\" y=\"" + fmt_double(y + cell / 2 + 4) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + fmt_double(std::round(v * 1e4) / 1e4) +
               "</text>\n";
      }
      svg += "<text x=\"" + fmt_double(label - 6.0) + "\" y=\"" + fmt_double(label + cell * static_cast<double>(i) + cell / 2 + 4) +
             "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" + matrix.teacher_names[i] + "</text>\n";
      svg += "<text x=\"" + fmt_double(label + cell * static_cast<double>(i) + cell / 2) + "\" y=\"" + fmt_double(label - 6.0) +
             "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + matrix.teacher_names[i] + "</text>\n";
    }
    svg += "</svg>\n";
    auto p = out_dir / "jaccard_matrix.svg";
    detail::write_text_file(p, svg);
    written.push_back(p.string());
  }
  return written;
}

}  // namespace negminer
