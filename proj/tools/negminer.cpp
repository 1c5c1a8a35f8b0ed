// negminer: hard-negative mining pipeline driver.
//
//   negminer embed    --config cfg.json          fetch embeddings into matrix files
//   negminer mine     --config cfg.json          mine a training dataset
//   negminer ensemble --config cfg.json DIR...   combine per-teacher run dirs
//   negminer analyze  --config cfg.json INPUT... histogram report (1 input) or
//                                                teacher agreement matrix (2+)
//   negminer sweep    --config cfg.json          grid-run one method
//   negminer validate --config cfg.json          check input alignment
//
// Configuration comes from --config JSON, overridden by NEGMINER_BASE_URL /
// NEGMINER_API_KEY, then --set key.path=value, then dedicated flags.
// Logs go to stderr; with --json a machine-readable summary goes to stdout.
// Exit codes: 0 ok, 1 invalid input or internal failure, 2 embedding
// service unreachable after retries.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "negminer/negminer.hpp"

namespace {

using nlohmann::json;

void set_json_path(json& root, const std::string& dotted, const std::string& raw_value) {
  json value = json::parse(raw_value, nullptr, false);
  if (value.is_discarded()) value = raw_value;  // unquoted strings stay strings

  json* node = &root;
  std::size_t pos = 0;
  while (true) {
    auto dot = dotted.find('.', pos);
    std::string key = dotted.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (key.empty()) negminer::fail("bad --set path \"", dotted, "\"");
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    pos = dot + 1;
  }
}

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> threads;
  std::optional<std::string> metric;
  bool json_out = false;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "JSON config file");
  cmd->add_option("--set", flags.sets, "override a config key, e.g. --set mining.pool_k=20")
      ->type_name("KEY=VALUE");
  cmd->add_option("--seed", flags.seed, "run seed (overrides config)");
  cmd->add_option("--out", flags.out_dir, "output directory");
  cmd->add_option("--threads", flags.threads, "worker thread cap (0 = default)");
  cmd->add_option("--metric", flags.metric, "similarity metric: cosine|dot");
  cmd->add_flag("--json", flags.json_out, "print a JSON summary to stdout");
}

negminer::RunConfig resolve_config(const CommonFlags& flags) {
  json root = json::object();
  if (!flags.config_path.empty()) {
    std::ifstream in(flags.config_path);
    if (!in) negminer::fail("cannot open config file \"", flags.config_path, "\"");
    root = json::parse(in, nullptr, false);
    if (root.is_discarded()) negminer::fail("config file \"", flags.config_path, "\" is not valid JSON");
  }
  if (const char* v = std::getenv("NEGMINER_BASE_URL"); v && *v) root["embed"]["base_url"] = v;
  if (const char* v = std::getenv("NEGMINER_API_KEY"); v && *v) root["embed"]["api_key"] = v;
  for (const auto& s : flags.sets) {
    auto eq = s.find('=');
    if (eq == std::string::npos) negminer::fail("--set expects KEY=VALUE, got \"", s, "\"");
    set_json_path(root, s.substr(0, eq), s.substr(eq + 1));
  }

  negminer::RunConfig config = negminer::parse_run_config(root);
  if (flags.seed) {
    config.seed = *flags.seed;
    config.mining.seed = *flags.seed;
  }
  if (flags.out_dir) config.paths.out_dir = *flags.out_dir;
  if (flags.threads) config.threads = *flags.threads;
  if (flags.metric) config.metric = negminer::metric_from_name(*flags.metric);
#ifdef _OPENMP
  if (config.threads > 0) omp_set_num_threads(config.threads);
#endif
  return config;
}

void emit_summary(const CommonFlags& flags, const json& summary) {
  if (flags.json_out) std::cout << summary.dump() << std::endl;
}

negminer::Corpus load_corpus_checked(const negminer::RunConfig& config) {
  if (config.paths.corpus.empty()) negminer::fail("missing config key \"paths.corpus\"");
  return negminer::load_corpus(config.paths.corpus);
}

std::vector<negminer::TrainPair> load_pairs_checked(const negminer::RunConfig& config,
                                                    const negminer::Corpus& corpus) {
  if (config.paths.pairs.empty()) negminer::fail("missing config key \"paths.pairs\"");
  return negminer::load_pairs(config.paths.pairs, corpus);
}

json summary_json(const negminer::Summary& s) {
  return {{"count", s.count}, {"min", s.min},  {"max", s.max},
          {"mean", s.mean},   {"p50", s.p50},  {"p95", s.p95}};
}

// --- embed ---------------------------------------------------------------

int cmd_embed(const CommonFlags& flags) {
  auto config = resolve_config(flags);
  config.embed.validate();
  if (config.paths.corpus_matrix.empty()) negminer::fail("missing config key \"paths.corpus_matrix\"");
  auto corpus = load_corpus_checked(config);

  std::cerr << "embedding corpus (" << corpus.size() << " passages) via " << config.embed.base_url << "\n";
  auto corpus_matrix = negminer::embed_corpus(config.embed, corpus, config.paths.corpus_matrix);
  std::cerr << "corpus matrix: " << corpus_matrix.rows() << " x " << corpus_matrix.dim << "\n";

  json summary{{"corpus_rows", corpus_matrix.rows()}, {"dim", corpus_matrix.dim}};

  if (!config.paths.pairs.empty() && !config.paths.query_matrix.empty()) {
    auto pairs = load_pairs_checked(config, corpus);
    negminer::InstructionPrefix prefix{config.task_definition};

    bool reuse = false;
    if (std::filesystem::exists(config.paths.query_matrix)) {
      auto existing = negminer::load_matrix(config.paths.query_matrix);
      if (existing.model != config.embed.model_name)
        negminer::fail("resume mismatch: ", config.paths.query_matrix, " was produced by model \"",
                       existing.model, "\", config says \"", config.embed.model_name, "\"");
      if (existing.rows() == pairs.size()) {
        reuse = true;
        for (std::size_t i = 0; i < pairs.size(); ++i)
          if (existing.ids[i] != pairs[i].query_id) {
            reuse = false;
            break;
          }
      }
      if (!reuse)
        negminer::fail("resume mismatch: ", config.paths.query_matrix,
                       " does not cover the configured pairs; remove it to re-embed");
      std::cerr << "query matrix already complete, skipping\n";
      summary["query_rows"] = existing.rows();
    }
    if (!reuse) {
      std::vector<std::string> texts, ids;
      texts.reserve(pairs.size());
      ids.reserve(pairs.size());
      for (const auto& p : pairs) {
        texts.push_back(negminer::apply_prefix(prefix, p.query_text));
        ids.push_back(p.query_id);
      }
      std::cerr << "embedding " << texts.size() << " queries\n";
      auto query_matrix = negminer::embed_texts(config.embed, texts, std::move(ids));
      negminer::save_matrix(query_matrix, config.paths.query_matrix);
      std::cerr << "query matrix: " << query_matrix.rows() << " x " << query_matrix.dim << "\n";
      summary["query_rows"] = query_matrix.rows();
    }
  }

  negminer::write_manifest(config.paths.out_dir, "embed", config,
                           {config.paths.corpus, config.paths.pairs});
  emit_summary(flags, summary);
  return 0;
}

// --- mine ----------------------------------------------------------------

json stats_to_json(const negminer::MiningStats& stats) {
  return {{"examples", stats.examples},
          {"removed_as_false_negative", stats.removed_as_false_negative},
          {"under_filled", stats.under_filled},
          {"positive_scores", summary_json(stats.positive_scores)},
          {"negative_scores", summary_json(stats.negative_scores)}};
}

int cmd_mine(const CommonFlags& flags, const std::optional<std::string>& method,
             const std::optional<std::string>& teacher, const std::optional<std::size_t>& k_candidates,
             const std::optional<std::size_t>& num_negatives) {
  auto config = resolve_config(flags);
  if (method) config.mining.method = negminer::mining_method_from_name(*method);
  if (teacher) config.mining.teacher = *teacher;
  if (k_candidates) config.k_candidates = *k_candidates;
  if (num_negatives) config.mining.num_negatives = *num_negatives;

  auto corpus = load_corpus_checked(config);
  auto pairs = load_pairs_checked(config, corpus);
  if (config.paths.corpus_matrix.empty()) negminer::fail("missing config key \"paths.corpus_matrix\"");
  if (config.paths.query_matrix.empty()) negminer::fail("missing config key \"paths.query_matrix\"");
  auto corpus_matrix = negminer::load_matrix(config.paths.corpus_matrix);
  auto query_matrix = negminer::load_matrix(config.paths.query_matrix);

  std::cerr << "mining " << pairs.size() << " pairs with method "
            << negminer::mining_method_name(config.mining.method) << " (k=" << config.k_candidates << ")\n";
  auto result = negminer::mine_dataset(pairs, query_matrix, corpus_matrix, corpus, config.mining,
                                       config.k_candidates, config.metric, config.topk_options());

  std::filesystem::path out_dir = config.paths.out_dir;
  std::filesystem::create_directories(out_dir);
  negminer::save_examples(result.examples, (out_dir / "dataset.jsonl").string());
  json stats = stats_to_json(result.stats);
  negminer::detail::write_text_file(out_dir / "stats.json", stats.dump(2) + "\n");
  negminer::write_manifest(out_dir, "mine", config,
                           {config.paths.corpus, config.paths.pairs, config.paths.corpus_matrix,
                            config.paths.query_matrix});

  std::cerr << "mined " << result.stats.examples << " examples, removed "
            << result.stats.removed_as_false_negative << " candidates as likely false negatives\n";
  emit_summary(flags, stats);
  return 0;
}

// --- ensemble ------------------------------------------------------------

negminer::TeacherRun load_run_dir(const std::string& dir, int rank) {
  negminer::TeacherRun run;
  run.accuracy_rank = rank;
  std::filesystem::path dataset = std::filesystem::path(dir) / "dataset.jsonl";
  if (!std::filesystem::exists(dataset)) negminer::fail("run dir \"", dir, "\" has no dataset.jsonl");
  run.examples = negminer::load_examples(dataset.string());

  run.teacher_name = std::filesystem::path(dir).filename().string();
  std::filesystem::path manifest = std::filesystem::path(dir) / "run-manifest.json";
  if (std::ifstream in{manifest}; in) {
    json j = json::parse(in, nullptr, false);
    if (!j.is_discarded() && j.contains("config") && j["config"].contains("mining") &&
        j["config"]["mining"].contains("teacher"))
      run.teacher_name = j["config"]["mining"]["teacher"].get<std::string>();
  }
  return run;
}

int cmd_ensemble(const CommonFlags& flags, const std::vector<std::string>& run_dirs, const std::string& mode,
                 bool dedup, const std::optional<std::size_t>& num_negatives) {
  auto config = resolve_config(flags);
  if (run_dirs.empty()) negminer::fail("ensemble needs at least one run directory");
  std::size_t want = num_negatives ? *num_negatives : config.mining.num_negatives;

  std::vector<negminer::TeacherRun> runs;
  runs.reserve(run_dirs.size());
  for (std::size_t i = 0; i < run_dirs.size(); ++i)
    runs.push_back(load_run_dir(run_dirs[i], static_cast<int>(i) + 1));

  std::vector<negminer::MinedExample> out;
  if (mode == "cross") {
    out = negminer::cross_sample_ensemble(runs, want, config.seed);
  } else if (mode == "intra") {
    out = negminer::intra_sample_ensemble(runs, want, dedup);
  } else {
    negminer::fail("unknown ensemble mode \"", mode, "\" (expected cross|intra)");
  }

  std::filesystem::path out_dir = config.paths.out_dir;
  std::filesystem::create_directories(out_dir);
  negminer::save_examples(out, (out_dir / "dataset.jsonl").string());

  std::size_t under_filled = 0;
  for (const auto& ex : out) under_filled += ex.under_filled ? 1 : 0;
  json summary{{"examples", out.size()},
               {"teachers", run_dirs.size()},
               {"mode", mode},
               {"dedup", dedup},
               {"under_filled", under_filled}};
  negminer::detail::write_text_file(out_dir / "stats.json", summary.dump(2) + "\n");

  std::vector<std::string> inputs;
  for (const auto& d : run_dirs) inputs.push_back((std::filesystem::path(d) / "dataset.jsonl").string());
  negminer::write_manifest(out_dir, "ensemble", config, inputs);

  std::cerr << "ensembled " << out.size() << " examples from " << runs.size() << " runs (" << mode << ")\n";
  emit_summary(flags, summary);
  return 0;
}

// --- analyze -------------------------------------------------------------

int cmd_analyze(const CommonFlags& flags, const std::vector<std::string>& inputs,
                const std::optional<std::size_t>& top_n) {
  auto config = resolve_config(flags);
  if (inputs.empty()) negminer::fail("analyze needs at least one dataset file or run directory");
  negminer::EmitFormats formats{config.analysis.csv, config.analysis.json, config.analysis.svg};

  auto resolve_dataset = [](const std::string& input) -> std::string {
    if (std::filesystem::is_directory(input)) {
      auto p = std::filesystem::path(input) / "dataset.jsonl";
      if (!std::filesystem::exists(p)) negminer::fail("run dir \"", input, "\" has no dataset.jsonl");
      return p.string();
    }
    return input;
  };

  std::filesystem::path out_dir = config.paths.out_dir;
  json summary;
  std::vector<std::string> manifest_inputs;

  if (inputs.size() == 1) {
    auto path = resolve_dataset(inputs[0]);
    manifest_inputs.push_back(path);
    auto examples = negminer::load_examples(path);
    auto report = negminer::histogram_report(examples, config.analysis.bins, config.analysis.temperature);
    auto files = negminer::emit_report(report, out_dir, formats);
    std::cerr << "histogram report over " << examples.size() << " examples -> " << files.size() << " files\n";
    summary = {{"examples", examples.size()}, {"files", files}};
    for (const auto& s : report.series) summary["series"][s.name] = summary_json(s.summary);
  } else {
    std::vector<negminer::TeacherRun> runs;
    runs.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (std::filesystem::is_directory(inputs[i])) {
        runs.push_back(load_run_dir(inputs[i], static_cast<int>(i) + 1));
        manifest_inputs.push_back(resolve_dataset(inputs[i]));
      } else {
        negminer::TeacherRun run;
        run.accuracy_rank = static_cast<int>(i) + 1;
        run.teacher_name = std::filesystem::path(inputs[i]).stem().string();
        run.examples = negminer::load_examples(inputs[i]);
        runs.push_back(std::move(run));
        manifest_inputs.push_back(inputs[i]);
      }
    }
    std::size_t n = top_n ? *top_n : config.analysis.top_n;
    auto matrix = negminer::jaccard_matrix(runs, n);
    auto files = negminer::emit_report(matrix, out_dir, formats);
    std::cerr << "agreement matrix over " << runs.size() << " runs -> " << files.size() << " files\n";
    summary = {{"teachers", matrix.teacher_names}, {"top_n", n}, {"files", files}};
    auto& vals = summary["values"] = json::array();
    for (std::size_t i = 0; i < matrix.teacher_names.size(); ++i) {
      json row = json::array();
      for (std::size_t jx = 0; jx < matrix.teacher_names.size(); ++jx) row.push_back(matrix.at(i, jx));
      vals.push_back(std::move(row));
    }
  }

  negminer::write_manifest(out_dir, "analyze", config, manifest_inputs);
  emit_summary(flags, summary);
  return 0;
}

// --- sweep ---------------------------------------------------------------

int cmd_sweep(const CommonFlags& flags) {
  auto config = resolve_config(flags);
  auto corpus = load_corpus_checked(config);
  auto pairs = load_pairs_checked(config, corpus);
  if (config.paths.corpus_matrix.empty()) negminer::fail("missing config key \"paths.corpus_matrix\"");
  if (config.paths.query_matrix.empty()) negminer::fail("missing config key \"paths.query_matrix\"");
  auto corpus_matrix = negminer::load_matrix(config.paths.corpus_matrix);
  auto query_matrix = negminer::load_matrix(config.paths.query_matrix);

  auto spec = config.sweep_spec();
  auto values = negminer::expand_grid(spec);
  std::cerr << "sweeping " << values.size() << " grid points of "
            << (spec.target == negminer::SweepTarget::pool_k
                    ? "pool_k"
                    : negminer::mining_method_name(spec.shared.method))
            << "\n";

  auto summary = negminer::run_sweep(spec, pairs, query_matrix, corpus_matrix, corpus, config.k_candidates,
                                     config.metric, config.topk_options(), config.analysis.temperature);
  negminer::write_sweep_summary(summary, config.paths.out_dir);
  negminer::write_manifest(config.paths.out_dir, "sweep", config,
                           {config.paths.corpus, config.paths.pairs, config.paths.corpus_matrix,
                            config.paths.query_matrix});

  for (const auto& row : summary.rows)
    if (row.failed) std::cerr << "grid point " << negminer::fmt_double(row.value) << " failed: " << row.error << "\n";
  std::cerr << "sweep complete: " << summary.rows.size() << " rows\n";
  emit_summary(flags, negminer::sweep_summary_json(summary));
  return summary.any_failed ? 1 : 0;
}

// --- validate ------------------------------------------------------------

int cmd_validate(const CommonFlags& flags) {
  auto config = resolve_config(flags);
  std::vector<std::string> warnings;
  if (config.paths.corpus.empty()) negminer::fail("missing config key \"paths.corpus\"");
  auto corpus = negminer::load_corpus(config.paths.corpus, &warnings);
  json summary{{"passages", corpus.size()}};
  std::cerr << "corpus: " << corpus.size() << " passages\n";

  std::vector<negminer::TrainPair> pairs;
  if (!config.paths.pairs.empty()) {
    pairs = negminer::load_pairs(config.paths.pairs, corpus);
    summary["pairs"] = pairs.size();
    std::cerr << "pairs: " << pairs.size() << " queries, all positives resolve\n";
  }

  auto check_matrix = [&](const std::string& path, const char* label) -> negminer::EmbeddingMatrix {
    auto m = negminer::load_matrix(path);
    double lo = 0.0, hi = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < m.dim; ++j) sq += static_cast<double>(m.row(i)[j]) * m.row(i)[j];
      double norm = std::sqrt(sq);
      if (i == 0) lo = hi = norm;
      lo = std::min(lo, norm);
      hi = std::max(hi, norm);
    }
    summary[label] = {{"rows", m.rows()}, {"dim", m.dim}, {"norm_min", lo}, {"norm_max", hi}};
    std::cerr << label << ": " << m.rows() << " x " << m.dim << ", norms in [" << lo << ", " << hi << "]\n";
    return m;
  };

  if (!config.paths.corpus_matrix.empty()) {
    auto m = check_matrix(config.paths.corpus_matrix, "corpus_matrix");
    auto index = negminer::make_row_index(m);
    for (const auto& p : corpus)
      if (!index.count(p.id))
        negminer::fail("corpus passage \"", p.id, "\" missing from matrix ", config.paths.corpus_matrix);
    if (m.rows() != corpus.size())
      negminer::fail("matrix ", config.paths.corpus_matrix, " has ", m.rows(), " rows but corpus has ",
                     corpus.size(), " passages");
  }
  if (!config.paths.query_matrix.empty() && !pairs.empty()) {
    auto m = check_matrix(config.paths.query_matrix, "query_matrix");
    auto index = negminer::make_row_index(m);
    for (const auto& p : pairs)
      if (!index.count(p.query_id))
        negminer::fail("query \"", p.query_id, "\" missing from matrix ", config.paths.query_matrix);
  }

  summary["warnings"] = warnings;
  summary["status"] = "ok";
  std::cerr << "validate: ok\n";
  emit_summary(flags, summary);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hard-negative mining toolkit"};
  app.require_subcommand(1);

  CommonFlags embed_flags;
  auto* embed = app.add_subcommand("embed", "embed corpus and queries via the configured service");
  add_common_flags(embed, embed_flags);

  CommonFlags mine_flags;
  std::optional<std::string> mine_method, mine_teacher;
  std::optional<std::size_t> mine_k, mine_negatives;
  auto* mine = app.add_subcommand("mine", "mine hard negatives into a training dataset");
  add_common_flags(mine, mine_flags);
  mine->add_option("--method", mine_method, "naive|shifted|abs|marginpos|percpos");
  mine->add_option("--teacher", mine_teacher, "teacher tag recorded on mined negatives");
  mine->add_option("--k-candidates", mine_k, "candidate list depth");
  mine->add_option("--num-negatives", mine_negatives, "negatives per example");

  CommonFlags ens_flags;
  std::vector<std::string> ens_dirs;
  std::string ens_mode = "cross";
  bool ens_dedup = false;
  std::optional<std::size_t> ens_negatives;
  auto* ens = app.add_subcommand("ensemble", "combine per-teacher run directories");
  add_common_flags(ens, ens_flags);
  ens->add_option("dirs", ens_dirs, "run directories, most accurate teacher first")->required();
  ens->add_option("--mode", ens_mode, "cross|intra");
  ens->add_flag("--dedup", ens_dedup, "drop duplicate negatives (intra mode)");
  ens->add_option("--num-negatives", ens_negatives, "negatives per example");

  CommonFlags an_flags;
  std::vector<std::string> an_inputs;
  std::optional<std::size_t> an_top_n;
  auto* an = app.add_subcommand("analyze", "histogram report or teacher agreement matrix");
  add_common_flags(an, an_flags);
  an->add_option("inputs", an_inputs, "dataset files or run directories")->required();
  an->add_option("--top-n", an_top_n, "negatives per example entering agreement sets");

  CommonFlags sweep_flags;
  auto* sweep = app.add_subcommand("sweep", "run a mining method across a parameter grid");
  add_common_flags(sweep, sweep_flags);

  CommonFlags val_flags;
  auto* val = app.add_subcommand("validate", "check corpus/pairs/matrix alignment");
  add_common_flags(val, val_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (embed->parsed()) return cmd_embed(embed_flags);
    if (mine->parsed()) return cmd_mine(mine_flags, mine_method, mine_teacher, mine_k, mine_negatives);
    if (ens->parsed()) return cmd_ensemble(ens_flags, ens_dirs, ens_mode, ens_dedup, ens_negatives);
    if (an->parsed()) return cmd_analyze(an_flags, an_inputs, an_top_n);
    if (sweep->parsed()) return cmd_sweep(sweep_flags);
    if (val->parsed()) return cmd_validate(val_flags);
  } catch (const negminer::service_error& e) {
    std::cerr << "service error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
