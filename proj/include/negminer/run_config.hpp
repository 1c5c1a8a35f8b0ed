#pragma once

// Run configuration shared by all CLI commands: one JSON file mirroring the
// module configs, every value overridable by flags (flags win). Unknown
// keys are rejected with their full path so typos cannot silently fall back
// to defaults. The effective config is echoed, secrets redacted, into every
// output directory as run-manifest.json together with input file hashes, so
// a run can be reproduced from its outputs alone.

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "negminer/common.hpp"
#include "negminer/embed_client.hpp"
#include "negminer/mining.hpp"
#include "negminer/sweep.hpp"
#include "negminer/topk.hpp"

namespace negminer {

constexpr const char* kVersion = "1.0.0";

struct RunPaths {
  std::string corpus;
  std::string pairs;
  std::string corpus_matrix;
  std::string query_matrix;
  std::string out_dir = "out";
};

struct AnalysisOptions {
  std::size_t bins = 50;
  double temperature = 0.05;  // loss temperature for reports
  std::size_t top_n = 4;      // negatives per example entering Jaccard sets
  bool csv = true;
  bool json = true;
  bool svg = true;
};

struct SweepOptions {
  SweepTarget target = SweepTarget::method_param;
  std::vector<double> grid_values;
  std::optional<GridRange> grid_range;
  bool emit_datasets = false;
};

struct RunConfig {
  RunPaths paths;
  EmbedServiceConfig embed;
  std::string task_definition;  // query instruction prefix; empty = none
  MiningConfig mining;
  std::size_t k_candidates = 100;
  Metric metric = Metric::cosine;
  std::size_t chunk_rows = 65536;
  SweepOptions sweep;
  AnalysisOptions analysis;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = library default

  TopkOptions topk_options() const {
    TopkOptions o;
    o.chunk_rows = chunk_rows;
    o.threads = threads;
    return o;
  }

  SweepSpec sweep_spec() const {
    SweepSpec s;
    s.shared = mining;
    s.target = sweep.target;
    s.grid_values = sweep.grid_values;
    s.grid_range = sweep.grid_range;
    s.emit_datasets = sweep.emit_datasets;
    s.out_dir = paths.out_dir;
    return s;
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& known,
                                const std::string& prefix) {
  if (!j.is_object()) fail("config section \"", prefix.empty() ? "(root)" : prefix, "\" must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      fail("unknown config key \"", prefix.empty() ? it.key() : prefix + "." + it.key(), "\"");
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig c;
  detail::reject_unknown_keys(
      j, {"paths", "embed", "mining", "sweep", "analysis", "seed", "threads", "k_candidates", "metric",
          "chunk_rows"},
      "");

  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    detail::reject_unknown_keys(p, {"corpus", "pairs", "corpus_matrix", "query_matrix", "out_dir"}, "paths");
    detail::read_key(p, "corpus", c.paths.corpus);
    detail::read_key(p, "pairs", c.paths.pairs);
    detail::read_key(p, "corpus_matrix", c.paths.corpus_matrix);
    detail::read_key(p, "query_matrix", c.paths.query_matrix);
    detail::read_key(p, "out_dir", c.paths.out_dir);
  }

  if (j.contains("embed")) {
    const auto& e = j.at("embed");
    detail::reject_unknown_keys(e,
                                {"base_url", "model_name", "batch_size", "max_retries", "timeout_seconds",
                                 "max_parallel_requests", "retry_base_seconds", "api_key", "max_text_chars",
                                 "task_definition"},
                                "embed");
    detail::read_key(e, "base_url", c.embed.base_url);
    detail::read_key(e, "model_name", c.embed.model_name);
    detail::read_key(e, "batch_size", c.embed.batch_size);
    detail::read_key(e, "max_retries", c.embed.max_retries);
    detail::read_key(e, "timeout_seconds", c.embed.timeout_seconds);
    detail::read_key(e, "max_parallel_requests", c.embed.max_parallel_requests);
    detail::read_key(e, "retry_base_seconds", c.embed.retry_base_seconds);
    detail::read_key(e, "api_key", c.embed.api_key);
    detail::read_key(e, "max_text_chars", c.embed.max_text_chars);
    detail::read_key(e, "task_definition", c.task_definition);
  }

  if (j.contains("mining")) {
    const auto& m = j.at("mining");
    detail::reject_unknown_keys(m,
                                {"method", "n_shift", "max_score", "absolute_margin", "percentage_margin",
                                 "num_negatives", "sampling", "pool_k", "sampling_temperature", "seed",
                                 "multi_positive_rule", "teacher"},
                                "mining");
    if (m.contains("method")) c.mining.method = mining_method_from_name(m.at("method").get<std::string>());
    detail::read_key(m, "n_shift", c.mining.n_shift);
    detail::read_key(m, "max_score", c.mining.max_score);
    detail::read_key(m, "absolute_margin", c.mining.absolute_margin);
    detail::read_key(m, "percentage_margin", c.mining.percentage_margin);
    detail::read_key(m, "num_negatives", c.mining.num_negatives);
    if (m.contains("sampling")) c.mining.sampling = sampling_from_name(m.at("sampling").get<std::string>());
    detail::read_key(m, "pool_k", c.mining.pool_k);
    detail::read_key(m, "sampling_temperature", c.mining.sampling_temperature);
    detail::read_key(m, "seed", c.mining.seed);
    if (m.contains("multi_positive_rule"))
      c.mining.multi_positive_rule = positive_rule_from_name(m.at("multi_positive_rule").get<std::string>());
    detail::read_key(m, "teacher", c.mining.teacher);
  }

  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    detail::reject_unknown_keys(s, {"target", "grid_values", "grid_range", "emit_datasets"}, "sweep");
    if (s.contains("target")) {
      auto t = s.at("target").get<std::string>();
      if (t == "method_param") c.sweep.target = SweepTarget::method_param;
      else if (t == "pool_k") c.sweep.target = SweepTarget::pool_k;
      else fail("unknown sweep target \"", t, "\" (expected method_param|pool_k)");
    }
    detail::read_key(s, "grid_values", c.sweep.grid_values);
    if (s.contains("grid_range")) {
      const auto& r = s.at("grid_range");
      detail::reject_unknown_keys(r, {"start", "stop", "step"}, "sweep.grid_range");
      GridRange g;
      detail::read_key(r, "start", g.start);
      detail::read_key(r, "stop", g.stop_inclusive);
      detail::read_key(r, "step", g.step);
      c.sweep.grid_range = g;
    }
    detail::read_key(s, "emit_datasets", c.sweep.emit_datasets);
  }

  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    detail::reject_unknown_keys(a, {"bins", "temperature", "top_n", "formats"}, "analysis");
    detail::read_key(a, "bins", c.analysis.bins);
    detail::read_key(a, "temperature", c.analysis.temperature);
    detail::read_key(a, "top_n", c.analysis.top_n);
    if (a.contains("formats")) {
      c.analysis.csv = c.analysis.json = c.analysis.svg = false;
      for (const auto& f : a.at("formats")) {
        auto name = f.get<std::string>();
        if (name == "csv") c.analysis.csv = true;
        else if (name == "json") c.analysis.json = true;
        else if (name == "svg") c.analysis.svg = true;
        else fail("unknown analysis format \"", name, "\" (expected csv|json|svg)");
      }
    }
  }

  if (j.contains("k_candidates")) c.k_candidates = j.at("k_candidates").get<std::size_t>();
  if (j.contains("metric")) c.metric = metric_from_name(j.at("metric").get<std::string>());
  if (j.contains("chunk_rows")) c.chunk_rows = j.at("chunk_rows").get<std::size_t>();
  if (j.contains("threads")) c.threads = j.at("threads").get<int>();
  if (j.contains("seed")) {
    c.seed = j.at("seed").get<std::uint64_t>();
    if (!j.contains("mining") || !j.at("mining").contains("seed")) c.mining.seed = c.seed;
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open config file \"", path.string(), "\"");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) fail("config file \"", path.string(), "\" is not valid JSON");
  return parse_run_config(j);
}

inline nlohmann::json config_to_json(const RunConfig& c, bool redact_secrets) {
  nlohmann::json j;
  j["paths"] = {{"corpus", c.paths.corpus},
                {"pairs", c.paths.pairs},
                {"corpus_matrix", c.paths.corpus_matrix},
                {"query_matrix", c.paths.query_matrix},
                {"out_dir", c.paths.out_dir}};
  j["embed"] = {{"base_url", c.embed.base_url},
                {"model_name", c.embed.model_name},
                {"batch_size", c.embed.batch_size},
                {"max_retries", c.embed.max_retries},
                {"timeout_seconds", c.embed.timeout_seconds},
                {"max_parallel_requests", c.embed.max_parallel_requests},
                {"retry_base_seconds", c.embed.retry_base_seconds},
                {"api_key", redact_secrets && !c.embed.api_key.empty() ? "<redacted>" : c.embed.api_key},
                {"max_text_chars", c.embed.max_text_chars},
                {"task_definition", c.task_definition}};
  j["mining"] = {{"method", mining_method_name(c.mining.method)},
                 {"n_shift", c.mining.n_shift},
                 {"max_score", c.mining.max_score},
                 {"absolute_margin", c.mining.absolute_margin},
                 {"percentage_margin", c.mining.percentage_margin},
                 {"num_negatives", c.mining.num_negatives},
                 {"sampling", sampling_name(c.mining.sampling)},
                 {"pool_k", c.mining.pool_k},
                 {"sampling_temperature", c.mining.sampling_temperature},
                 {"seed", c.mining.seed},
                 {"multi_positive_rule", positive_rule_name(c.mining.multi_positive_rule)},
                 {"teacher", c.mining.teacher}};
  j["sweep"] = {{"target", c.sweep.target == SweepTarget::pool_k ? "pool_k" : "method_param"},
                {"grid_values", c.sweep.grid_values},
                {"emit_datasets", c.sweep.emit_datasets}};
  if (c.sweep.grid_range)
    j["sweep"]["grid_range"] = {{"start", c.sweep.grid_range->start},
                                {"stop", c.sweep.grid_range->stop_inclusive},
                                {"step", c.sweep.grid_range->step}};
  std::vector<std::string> formats;
  if (c.analysis.csv) formats.push_back("csv");
  if (c.analysis.json) formats.push_back("json");
  if (c.analysis.svg) formats.push_back("svg");
  j["analysis"] = {{"bins", c.analysis.bins},
                   {"temperature", c.analysis.temperature},
                   {"top_n", c.analysis.top_n},
                   {"formats", formats}};
  j["k_candidates"] = c.k_candidates;
  j["metric"] = metric_name(c.metric);
  j["chunk_rows"] = c.chunk_rows;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  return j;
}

// run-manifest.json: what ran, with what effective config, over which exact
// inputs. Deliberately no timestamps, so reruns are byte-identical.
inline void write_manifest(const std::filesystem::path& out_dir, const std::string& command,
                           const RunConfig& config, const std::vector<std::string>& input_paths) {
  std::filesystem::create_directories(out_dir);
  nlohmann::json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["config"] = config_to_json(config, true);
  auto& inputs = j["inputs"] = nlohmann::json::object();
  for (const auto& p : input_paths)
    if (!p.empty() && std::filesystem::exists(p)) inputs[p] = hash_file(p);
  detail::write_text_file(out_dir / "run-manifest.json", j.dump(2) + "\n");
}

}  // namespace negminer
