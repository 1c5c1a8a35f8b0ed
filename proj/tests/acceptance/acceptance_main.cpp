// Acceptance gate for the mining toolkit. Each criterion prints exactly one
// [PASS]/[FAIL] line; the process exits nonzero if any criterion fails.
//
// Run directly or via ctest (test name "acceptance"). Criterion 9 needs the
// CLI binary path in NEGMINER_CLI, which the ctest wiring provides.

#include <sys/wait.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "negminer/negminer.hpp"
#include "../support/fixtures.hpp"

using namespace negminer;
using testsupport::TempDir;

namespace {

int g_failures = 0;

struct Check {
  std::vector<std::string> problems;
  std::string note;

  void expect(bool ok, const std::string& what) {
    if (!ok) problems.push_back(what);
  }
};

template <typename Body>
void criterion(int num, const std::string& label, Body&& body) {
  Check c;
  try {
    body(c);
  } catch (const std::exception& e) {
    c.problems.push_back(std::string("exception: ") + e.what());
  }
  if (c.problems.empty()) {
    std::cout << "[PASS] criterion " << num << ": " << label;
    if (!c.note.empty()) std::cout << " (" << c.note << ")";
    std::cout << "\n";
  } else {
    ++g_failures;
    std::cout << "[FAIL] criterion " << num << ": " << label << " (" << c.problems[0];
    if (c.problems.size() > 1) std::cout << "; +" << c.problems.size() - 1 << " more";
    std::cout << ")\n";
  }
  std::cout.flush();
}

// ---------------------------------------------------------------- helpers

std::vector<Candidate> oracle_topk_one(const EmbeddingMatrix& queries, std::size_t q,
                                       const EmbeddingMatrix& corpus, std::size_t k,
                                       const ExclusionMap& exclusions, Metric metric) {
  const std::unordered_set<std::string>* excl = nullptr;
  if (auto it = exclusions.find(queries.ids[q]); it != exclusions.end()) excl = &it->second;

  std::vector<Candidate> all;
  all.reserve(corpus.rows());
  std::span<const float> qv(queries.row(q), queries.dim);
  for (std::size_t r = 0; r < corpus.rows(); ++r) {
    if (excl && excl->count(corpus.ids[r])) continue;
    all.push_back({corpus.ids[r], score(qv, std::span<const float>(corpus.row(r), corpus.dim), metric)});
  }
  std::sort(all.begin(), all.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.passage_id < b.passage_id;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

std::vector<std::string> mined_ids(const Selection& sel) {
  std::vector<std::string> ids;
  ids.reserve(sel.negatives.size());
  for (const auto& n : sel.negatives) ids.push_back(n.passage_id);
  return ids;
}

std::vector<std::string> pipeline_ids(const CandidateList& cands, double pos, const MiningConfig& config,
                                      std::uint64_t seed) {
  auto outcome = filter_candidates(cands, pos, config);
  return mined_ids(select_negatives(outcome, config, seed));
}

std::size_t vm_hwm_bytes() {
  std::ifstream in("/proc/self/status");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("VmHWM:", 0) == 0) {
      std::istringstream ss(line.substr(6));
      std::size_t kb = 0;
      ss >> kb;
      return kb * 1024;
    }
  }
  return 0;
}

int run_command(const std::string& cmd) {
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

TeacherRun synth_run(const std::string& name, int rank, std::size_t n_examples, std::uint64_t seed,
                     std::size_t n_negatives, std::size_t id_universe) {
  std::mt19937_64 rng(seed);
  TeacherRun run;
  run.teacher_name = name;
  run.accuracy_rank = rank;
  for (std::size_t i = 0; i < n_examples; ++i) {
    MinedExample ex;
    ex.query_id = "q" + std::to_string(i);
    ex.pos_score_used = 0.9;
    std::vector<std::size_t> picks(id_universe);
    for (std::size_t j = 0; j < id_universe; ++j) picks[j] = j;
    std::shuffle(picks.begin(), picks.end(), rng);
    double s = 0.85;
    for (std::size_t r = 0; r < n_negatives && r < id_universe; ++r) {
      s -= 0.01 + uniform01(rng) * 0.01;
      ex.negatives.push_back({"n" + std::to_string(picks[r]), "", s, name, r + 1});
    }
    run.examples.push_back(std::move(ex));
  }
  return run;
}

// ---------------------------------------------------------------- criteria

void criterion_1(Check& c) {
  std::mt19937_64 rng(2024);
  std::size_t instances = 0;
  auto t0 = std::chrono::steady_clock::now();

  while (instances < 1000) {
    std::size_t n_c = 20 + static_cast<std::size_t>(uniform01(rng) * 236);  // <= 256
    std::size_t dim = 4 + static_cast<std::size_t>(uniform01(rng) * 60);    // <= 64
    std::size_t n_q = 5 + static_cast<std::size_t>(uniform01(rng) * 30);
    auto corpus = testsupport::random_unit_matrix(n_c, dim, rng(), "p");
    auto queries = testsupport::random_unit_matrix(n_q, dim, rng(), "q");

    ExclusionMap exclusions;
    for (std::size_t q = 0; q < n_q; q += 2) {
      auto& set = exclusions[queries.ids[q]];
      for (int e = 0; e < 3; ++e)
        set.insert("p" + std::to_string(static_cast<std::size_t>(uniform01(rng) * n_c)));
    }

    for (Metric metric : {Metric::cosine, Metric::dot}) {
      for (std::size_t k : {std::size_t{1}, std::size_t{5}, n_c}) {
        TopkOptions opts;
        opts.chunk_rows = 1 + static_cast<std::size_t>(uniform01(rng) * n_c);
        auto got = topk(queries, corpus, k, exclusions, metric, opts);
        for (std::size_t q = 0; q < n_q; ++q) {
          auto want = oracle_topk_one(queries, q, corpus, k, exclusions, metric);
          bool ok = got[q].entries.size() == want.size();
          for (std::size_t i = 0; ok && i < want.size(); ++i)
            ok = got[q].entries[i].passage_id == want[i].passage_id &&
                 got[q].entries[i].score == want[i].score;
          c.expect(ok, str("mismatch: corpus ", n_c, " dim ", dim, " k ", k, " metric ",
                           metric_name(metric), " query ", queries.ids[q]));
          ++instances;
          if (!c.problems.empty()) return;
        }
      }
    }
  }
  auto secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.expect(secs < 60.0, str("took ", secs, "s, limit 60s"));
  c.note = str(instances, " instances, ", static_cast<int>(secs * 1000), "ms");
}

void criterion_2(Check& c) {
  std::mt19937_64 rng(7);
  const int cases = 1000;
  int bad_shift = 0, bad_margin = 0, bad_abs = 0, bad_sampled = 0;

  for (int t = 0; t < cases; ++t) {
    std::size_t n = 1 + static_cast<std::size_t>(uniform01(rng) * 29);
    auto cands = testsupport::random_candidates(rng, n);
    double pos = uniform01(rng) * 2.0 - 1.0;
    std::uint64_t seed = mix_seed(99, static_cast<std::uint64_t>(t));

    MiningConfig naive;
    naive.method = MiningMethod::naive_topk;
    naive.num_negatives = 4;

    MiningConfig shifted = naive;
    shifted.method = MiningMethod::topk_shifted;
    shifted.n_shift = 0;
    if (pipeline_ids(cands, pos, shifted, seed) != pipeline_ids(cands, pos, naive, seed)) ++bad_shift;

    MiningConfig margin = naive;
    margin.method = MiningMethod::topk_margin_pos;
    margin.absolute_margin = 0.0;
    MiningConfig perc = naive;
    perc.method = MiningMethod::topk_perc_pos;
    perc.percentage_margin = 1.0;
    double nonneg_pos = std::abs(pos);  // percpos thresholds are meant for nonnegative positives
    if (pipeline_ids(cands, nonneg_pos, margin, seed) != pipeline_ids(cands, nonneg_pos, perc, seed))
      ++bad_margin;

    MiningConfig abs_inf = naive;
    abs_inf.method = MiningMethod::topk_abs;
    abs_inf.max_score = std::numeric_limits<double>::infinity();
    if (pipeline_ids(cands, pos, abs_inf, seed) != pipeline_ids(cands, pos, naive, seed)) ++bad_abs;

    MiningConfig take = naive;
    take.num_negatives = std::min<std::size_t>(4, n);
    MiningConfig sampled = take;
    sampled.sampling = SamplingStrategy::sampled_topk;
    sampled.pool_k = take.num_negatives;  // pool exactly as deep as the demand
    auto a = pipeline_ids(cands, pos, take, seed);
    auto b = pipeline_ids(cands, pos, sampled, seed);
    if (std::set<std::string>(a.begin(), a.end()) != std::set<std::string>(b.begin(), b.end()))
      ++bad_sampled;
  }

  c.expect(bad_shift == 0, str("shift(0) != naive in ", bad_shift, "/", cases, " cases"));
  c.expect(bad_margin == 0, str("marginpos(0) != percpos(1.0) in ", bad_margin, "/", cases, " cases"));
  c.expect(bad_abs == 0, str("abs(inf) != naive in ", bad_abs, "/", cases, " cases"));
  c.expect(bad_sampled == 0, str("sampled(pool=n) != take_top in ", bad_sampled, "/", cases, " cases"));
  c.note = str(cases, " cases per identity");
}

void criterion_3(Check& c) {
  // mixed high/low positives so the absolute threshold misses low-score plants
  auto fixture = testsupport::make_planted_fixture({0.9, 0.6, 0.85, 0.62, 0.95, 0.7}, 4, 10);
  const std::size_t k = 30;

  auto count_plants_kept = [&](const MiningResult& result) {
    std::size_t kept = 0;
    for (std::size_t q = 0; q < result.examples.size(); ++q) {
      std::set<std::string> neg_ids;
      for (const auto& n : result.examples[q].negatives) neg_ids.insert(n.passage_id);
      for (const auto& plant : fixture.plant_ids[q]) kept += neg_ids.count(plant);
    }
    return kept;
  };

  MiningConfig perc;
  perc.method = MiningMethod::topk_perc_pos;
  perc.percentage_margin = 0.95;
  perc.num_negatives = 4;
  auto perc_result =
      mine_dataset(fixture.pairs, fixture.query_matrix, fixture.corpus_matrix, fixture.corpus, perc, k);
  c.expect(count_plants_kept(perc_result) == 0, "percpos(0.95) let a plant through");
  c.expect(perc_result.stats.removed_as_false_negative == 6 * 4,
           str("percpos removed ", perc_result.stats.removed_as_false_negative, " of 24 plants"));

  MiningConfig naive = perc;
  naive.method = MiningMethod::naive_topk;
  auto naive_result =
      mine_dataset(fixture.pairs, fixture.query_matrix, fixture.corpus_matrix, fixture.corpus, naive, k);
  c.expect(count_plants_kept(naive_result) == 6 * 4,
           str("naive kept ", count_plants_kept(naive_result), " of 24 plants"));
  c.expect(naive_result.stats.removed_as_false_negative == 0, "naive removed candidates");

  MiningConfig margin = perc;
  margin.method = MiningMethod::topk_margin_pos;
  margin.absolute_margin = 0.05;
  MiningConfig abs_cfg = perc;
  abs_cfg.method = MiningMethod::topk_abs;
  abs_cfg.max_score = 0.7;
  auto margin_result =
      mine_dataset(fixture.pairs, fixture.query_matrix, fixture.corpus_matrix, fixture.corpus, margin, k);
  auto abs_result =
      mine_dataset(fixture.pairs, fixture.query_matrix, fixture.corpus_matrix, fixture.corpus, abs_cfg, k);
  c.expect(margin_result.stats.removed_as_false_negative >= abs_result.stats.removed_as_false_negative,
           str("marginpos(0.05) removed ", margin_result.stats.removed_as_false_negative,
               ", abs(0.7) removed ", abs_result.stats.removed_as_false_negative));
  c.note = str("marginpos removed ", margin_result.stats.removed_as_false_negative, ", abs removed ",
               abs_result.stats.removed_as_false_negative, " of 24 plants");
}

void criterion_4(Check& c) {
  const double tau = 0.05, tol = 1e-9;
  std::size_t checked_pairs = 0, checked_losses = 0;

  auto verify = [&](const MiningResult& result) {
    for (const auto& ex : result.examples) {
      double pos = ex.pos_score_used;
      std::vector<double> negs;
      for (const auto& n : ex.negatives) {
        negs.push_back(n.score);
        if (pos >= 0.0) {
          ++checked_pairs;
          c.expect(pos - n.score >= 0.05 * pos - tol,
                   str("pair gap violated: pos ", pos, " neg ", n.score, " query ", ex.query_id));
        }
      }
      if (!ex.threshold_used || negs.empty()) continue;
      double loss = infonce_loss(pos, negs, tau);
      double bound = std::log(1.0 + static_cast<double>(negs.size()) *
                                        std::exp(-(pos - *ex.threshold_used) / tau));
      ++checked_losses;
      c.expect(loss <= bound + tol,
               str("loss bound violated: loss ", loss, " bound ", bound, " query ", ex.query_id));
    }
  };

  MiningConfig config;
  config.method = MiningMethod::topk_perc_pos;
  config.percentage_margin = 0.95;
  config.num_negatives = 6;

  auto planted = testsupport::make_planted_fixture({0.9, 0.8, 0.85, 0.95, 0.75}, 3, 12);
  verify(mine_dataset(planted.pairs, planted.query_matrix, planted.corpus_matrix, planted.corpus, config, 25));

  // random geometry: positives are arbitrary corpus rows
  auto corpus_matrix = testsupport::random_unit_matrix(400, 24, 11, "p");
  auto query_matrix = testsupport::random_unit_matrix(60, 24, 12, "q");
  Corpus corpus;
  for (std::size_t i = 0; i < 400; ++i) corpus.add({"p" + std::to_string(i), "text " + std::to_string(i)});
  std::vector<TrainPair> pairs;
  std::mt19937_64 rng(13);
  for (std::size_t i = 0; i < 60; ++i) {
    TrainPair p;
    p.query_id = "q" + std::to_string(i);
    p.query_text = "query";
    p.positive_ids = {"p" + std::to_string(static_cast<std::size_t>(uniform01(rng) * 400))};
    pairs.push_back(std::move(p));
  }
  verify(mine_dataset(pairs, query_matrix, corpus_matrix, corpus, config, 50));

  c.expect(checked_pairs > 0, "no pairs checked");
  c.expect(checked_losses > 0, "no losses checked");
  c.note = str(checked_pairs, " pair gaps, ", checked_losses, " loss bounds");
}

void criterion_5(Check& c) {
  const std::vector<double> scores{2.0, 1.0, 0.0};
  const double expected[3] = {0.66524095577482189, 0.24472847105479765, 0.090030573170380458};
  const int draws = 100000;
  int counts[3] = {0, 0, 0};
  for (int d = 0; d < draws; ++d) {
    std::mt19937_64 rng(mix_seed(424242, static_cast<std::uint64_t>(d)));
    auto picked = negminer::detail::softmax_sample(scores, 1, 1.0, rng);
    ++counts[picked[0]];
  }
  for (int i = 0; i < 3; ++i) {
    double freq = static_cast<double>(counts[i]) / draws;
    c.expect(std::abs(freq - expected[i]) <= 0.01,
             str("score ", scores[i], ": frequency ", freq, " vs expected ", expected[i]));
  }
  c.note = str(counts[0], "/", counts[1], "/", counts[2], " over ", draws, " draws");
}

void criterion_6(Check& c) {
  const std::size_t n_examples = 200;

  // intra-sample, no dedup: output multiset == the runs' top-1 multiset
  std::vector<TeacherRun> runs;
  for (int r = 0; r < 4; ++r)
    runs.push_back(synth_run("t" + std::to_string(r), r + 1, n_examples, 100 + r, 6, 12));
  auto no_dedup = intra_sample_ensemble(runs, 4, false);
  for (std::size_t i = 0; i < n_examples; ++i) {
    std::multiset<std::string> got, want;
    for (const auto& n : no_dedup[i].negatives) got.insert(n.passage_id);
    for (const auto& run : runs) want.insert(run.examples[i].negatives[0].passage_id);
    if (got != want) {
      c.expect(false, str("top-1 multiset mismatch at example ", i));
      break;
    }
  }

  // dedup: no duplicate ids inside any example
  std::vector<TeacherRun> overlapping;
  for (int r = 0; r < 4; ++r)
    overlapping.push_back(synth_run("t" + std::to_string(r), r + 1, n_examples, 500 + r, 6, 5));
  auto dedup = intra_sample_ensemble(overlapping, 4, true);
  for (std::size_t i = 0; i < n_examples; ++i) {
    std::set<std::string> ids;
    for (const auto& n : dedup[i].negatives) ids.insert(n.passage_id);
    if (ids.size() != dedup[i].negatives.size()) {
      c.expect(false, str("duplicate negative in dedup output at example ", i));
      break;
    }
  }

  // cross-sample: teacher pick frequencies uniform within 3 sigma over 10k
  for (std::size_t n_teachers : {std::size_t{2}, std::size_t{3}}) {
    const std::size_t n = 10000;
    std::vector<TeacherRun> big;
    for (std::size_t r = 0; r < n_teachers; ++r)
      big.push_back(synth_run("t" + std::to_string(r), static_cast<int>(r) + 1, n, 900 + r, 4, 50));
    auto picked = cross_sample_ensemble(big, 4, 321);
    std::map<std::string, std::size_t> counts;
    for (const auto& ex : picked) ++counts[ex.negatives.at(0).teacher];
    double p = 1.0 / static_cast<double>(n_teachers);
    double sigma = std::sqrt(static_cast<double>(n) * p * (1.0 - p));
    for (const auto& [teacher, count] : counts) {
      double dev = std::abs(static_cast<double>(count) - p * static_cast<double>(n));
      c.expect(dev <= 3.0 * sigma, str("teacher ", teacher, " picked ", count, " of ", n, ", |dev| ", dev,
                                       " > 3 sigma ", 3.0 * sigma));
    }
    c.expect(counts.size() == n_teachers, str("only ", counts.size(), " of ", n_teachers,
                                              " teachers ever picked"));
  }
  c.note = "top-1 composition, dedup uniqueness, pick uniformity";
}

void criterion_7(Check& c) {
  std::set<std::string> a{"x", "y", "z"}, b{"u", "v"};
  c.expect(jaccard(a, a) == 1.0, "identical sets != 1.0");
  c.expect(jaccard(a, b) == 0.0, "disjoint sets != 0.0");
  c.expect(jaccard({}, {}) == 1.0, "empty sets != 1.0");

  auto tops_run = [](const std::string& name, int rank,
                     std::vector<std::vector<std::string>> tops) {
    TeacherRun run;
    run.teacher_name = name;
    run.accuracy_rank = rank;
    for (std::size_t q = 0; q < tops.size(); ++q) {
      MinedExample ex;
      ex.query_id = "q" + std::to_string(q);
      ex.pos_score_used = 0.9;
      double s = 0.8;
      std::size_t r = 1;
      for (const auto& id : tops[q]) ex.negatives.push_back({id, "", s -= 0.01, name, r++});
      run.examples.push_back(std::move(ex));
    }
    return run;
  };
  auto A = tops_run("A", 1, {{"a", "b"}, {"a", "b"}});
  auto B = tops_run("B", 2, {{"b", "c"}, {"a", "b"}});
  auto C = tops_run("C", 3, {{"x", "y"}, {"a", "y"}});
  auto m = jaccard_matrix({A, B, C}, 2);

  const double want_ab = (1.0 / 3.0 + 1.0) / 2.0;
  const double want_ac = 1.0 / 6.0, want_bc = 1.0 / 6.0;
  c.expect(std::abs(m.at(0, 1) - want_ab) <= 1e-12, str("j(A,B) = ", m.at(0, 1), ", want ", want_ab));
  c.expect(std::abs(m.at(0, 2) - want_ac) <= 1e-12, str("j(A,C) = ", m.at(0, 2), ", want ", want_ac));
  c.expect(std::abs(m.at(1, 2) - want_bc) <= 1e-12, str("j(B,C) = ", m.at(1, 2), ", want ", want_bc));
  for (std::size_t i = 0; i < 3; ++i) {
    c.expect(m.at(i, i) == 1.0, str("diagonal ", i, " != 1.0"));
    for (std::size_t j = 0; j < 3; ++j)
      c.expect(m.at(i, j) == m.at(j, i), str("asymmetry at (", i, ",", j, ")"));
  }
  c.note = "identities exact, 3-teacher fixture within 1e-12";
}

void criterion_8(Check& c) {
  SweepSpec margins;
  margins.shared.method = MiningMethod::topk_margin_pos;
  margins.target = SweepTarget::method_param;
  margins.grid_range = GridRange{0.0, 1.0, 0.05};
  auto values = expand_grid(margins);
  c.expect(values.size() == 21, str("[0,1] step 0.05 expanded to ", values.size(), " points"));

  SweepSpec depths;
  depths.shared.method = MiningMethod::topk_perc_pos;
  depths.shared.sampling = SamplingStrategy::sampled_topk;
  depths.target = SweepTarget::pool_k;
  depths.grid_range = GridRange{10.0, 100.0, 10.0};
  auto pool_values = expand_grid(depths);
  c.expect(pool_values.size() == 10, str("[10,100] step 10 expanded to ", pool_values.size(), " points"));
  c.note = "21 and 10 points";
}

void criterion_9(Check& c) {
  // (a) rerunning the mine command bit-identically
  auto cli = testsupport::cli_path();
  c.expect(!cli.empty(), "NEGMINER_CLI is not set; cannot exercise the CLI");
  if (cli.empty()) return;

  TempDir tmp("acceptance-cli");
  auto fixture = testsupport::make_planted_fixture({0.9, 0.8, 0.85}, 3, 8);
  save_corpus(fixture.corpus, tmp.file("corpus.jsonl"));
  save_pairs(fixture.pairs, tmp.file("pairs.jsonl"));
  save_matrix(fixture.corpus_matrix, tmp.file("corpus.nmtx"));
  save_matrix(fixture.query_matrix, tmp.file("queries.nmtx"));
  nlohmann::json cfg{{"paths",
                      {{"corpus", tmp.file("corpus.jsonl")},
                       {"pairs", tmp.file("pairs.jsonl")},
                       {"corpus_matrix", tmp.file("corpus.nmtx")},
                       {"query_matrix", tmp.file("queries.nmtx")},
                       {"out_dir", tmp.file("out")}}},
                     {"k_candidates", 20},
                     {"seed", 42}};
  std::ofstream(tmp.file("config.json")) << cfg.dump() << "\n";

  auto mine_cmd = "\"" + cli + "\" mine --config \"" + tmp.file("config.json") + "\" 2>/dev/null";
  c.expect(run_command(mine_cmd) == 0, "first mine run failed");
  auto h1_data = hash_file(tmp.file("out/dataset.jsonl"));
  auto h1_stats = hash_file(tmp.file("out/stats.json"));
  auto h1_manifest = hash_file(tmp.file("out/run-manifest.json"));
  c.expect(run_command(mine_cmd) == 0, "second mine run failed");
  c.expect(hash_file(tmp.file("out/dataset.jsonl")) == h1_data, "dataset.jsonl changed across reruns");
  c.expect(hash_file(tmp.file("out/stats.json")) == h1_stats, "stats.json changed across reruns");
  c.expect(hash_file(tmp.file("out/run-manifest.json")) == h1_manifest,
           "run-manifest.json changed across reruns");

  // (b) resume against a mock service re-requests no persisted row
  httplib::Server svr;
  std::atomic<int> requests{0};
  std::atomic<int> fail_after{-1};
  std::vector<std::string> resume_log;
  std::mutex log_mutex;
  std::atomic<bool> log_enabled{false};

  svr.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
    int n = ++requests;
    if (fail_after >= 0 && n > fail_after) {
      res.status = 500;
      return;
    }
    auto body = nlohmann::json::parse(req.body);
    nlohmann::json data = nlohmann::json::array();
    std::size_t idx = 0;
    for (const auto& t : body.at("input")) {
      auto text = t.get<std::string>();
      if (log_enabled) {
        std::lock_guard<std::mutex> lock(log_mutex);
        resume_log.push_back(text);
      }
      std::mt19937_64 rng(fnv1a64(text.data(), text.size()));
      std::vector<double> vec(6);
      for (auto& x : vec) x = uniform01(rng) * 2.0 - 1.0;
      data.push_back({{"index", idx++}, {"embedding", vec}});
    }
    res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
  });
  int port = svr.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { svr.listen_after_bind(); });
  svr.wait_until_ready();

  Corpus corpus;
  for (int i = 0; i < 40; ++i) corpus.add({"p" + std::to_string(i), "row text " + std::to_string(i)});
  EmbedServiceConfig embed;
  embed.base_url = "http://127.0.0.1:" + std::to_string(port);
  embed.model_name = "mock";
  embed.batch_size = 8;
  embed.max_retries = 0;
  embed.max_parallel_requests = 1;
  embed.retry_base_seconds = 0.0;

  auto clean = embed_corpus(embed, corpus, tmp.file("clean.nmtx"));

  fail_after = requests + 2;  // two batches land, then the outage
  bool interrupted = false;
  try {
    embed_corpus(embed, corpus, tmp.file("resume.nmtx"));
  } catch (const service_error&) {
    interrupted = true;
  }
  c.expect(interrupted, "mock outage did not interrupt the run");
  std::size_t persisted =
      (std::filesystem::file_size(tmp.file("resume.nmtx")) - 16) / (6 * sizeof(float));
  c.expect(persisted == 16, str("expected 16 persisted rows before resume, found ", persisted));

  fail_after = -1;
  log_enabled = true;
  auto resumed = embed_corpus(embed, corpus, tmp.file("resume.nmtx"));
  log_enabled = false;

  std::set<std::string> persisted_texts;
  for (std::size_t i = 0; i < persisted; ++i) persisted_texts.insert(corpus[i].text);
  std::set<std::string> seen;
  std::size_t duplicate_requests = 0;
  for (const auto& text : resume_log) {
    if (persisted_texts.count(text) || !seen.insert(text).second) ++duplicate_requests;
  }
  c.expect(duplicate_requests == 0, str(duplicate_requests, " duplicate row requests during resume"));
  c.expect(resume_log.size() == corpus.size() - persisted,
           str("resume requested ", resume_log.size(), " rows, expected ", corpus.size() - persisted));
  c.expect(resumed.data == clean.data && resumed.ids == clean.ids,
           "resumed matrix differs from the uninterrupted run");

  svr.stop();
  server_thread.join();
  c.note = "byte-identical reruns, resume re-requested 24/40 rows, zero duplicates";
}

void criterion_10(Check& c) {
  const std::size_t n_q = 1000, n_c = 100000, dim = 768, k = 100;
  const std::size_t chunk_rows = 8192;
  const std::size_t matrices_bytes = (n_q + n_c) * dim * sizeof(float);
  const std::size_t chunk_budget_bytes = chunk_rows * dim * sizeof(float);
  // ids, candidate lists, heaps, and allocator slack
  const std::size_t allowance_bytes = 64ull << 20;

  std::size_t hwm_before = vm_hwm_bytes();

  // uniform floats are fine here: the criterion is about speed and memory
  auto fill = [](EmbeddingMatrix& m, std::size_t rows, std::size_t d, std::uint64_t seed,
                 const char* prefix) {
    m.dim = d;
    m.data.resize(rows * d);
    std::mt19937_64 rng(seed);
    for (auto& v : m.data) v = static_cast<float>(uniform01(rng) * 2.0 - 1.0);
    m.ids.reserve(rows);
    for (std::size_t i = 0; i < rows; ++i) m.ids.push_back(prefix + std::to_string(i));
  };
  EmbeddingMatrix corpus, queries;
  fill(corpus, n_c, dim, 1, "p");
  fill(queries, n_q, dim, 2, "q");

  TopkOptions opts;
  opts.chunk_rows = chunk_rows;
  auto t0 = std::chrono::steady_clock::now();
  auto results = topk(queries, corpus, k, {}, Metric::dot, opts);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  c.expect(results.size() == n_q, "wrong result count");
  for (const auto& r : results)
    if (r.entries.size() != k) {
      c.expect(false, "a query returned fewer than k candidates");
      break;
    }
  c.expect(secs < 60.0, str("took ", secs, "s, limit 60s"));

  std::size_t hwm_after = vm_hwm_bytes();
  std::size_t delta = hwm_after > hwm_before ? hwm_after - hwm_before : 0;
  c.expect(delta <= matrices_bytes + chunk_budget_bytes + allowance_bytes,
           str("peak memory delta ", delta >> 20, " MiB exceeds matrices ", matrices_bytes >> 20,
               " MiB + chunk budget ", chunk_budget_bytes >> 20, " MiB + allowance ",
               allowance_bytes >> 20, " MiB"));
  c.note = str(n_q, "x", n_c, "x", dim, " k=", k, " in ", static_cast<int>(secs * 1000),
               "ms, peak delta ", delta >> 20, " MiB");
}

}  // namespace

int main() {
  criterion(1, "exact top-k matches a full-sort oracle", criterion_1);
  criterion(2, "method degeneracies are exact equalities", criterion_2);
  criterion(3, "planted false negatives: filtered by percpos, kept by naive, margin >= abs", criterion_3);
  criterion(4, "mined score gaps and loss bounds hold everywhere", criterion_4);
  criterion(5, "softmax sampling matches the analytic distribution", criterion_5);
  criterion(6, "ensembling keeps its composition contracts", criterion_6);
  criterion(7, "agreement matrix identities and hand-computed fixture", criterion_7);
  criterion(8, "grid expansion yields exact point counts", criterion_8);
  criterion(9, "bit-identical reruns and duplicate-free resume", criterion_9);
  criterion(10, "performance smoke: 1k x 100k x 768, k=100", criterion_10);

  if (g_failures > 0) {
    std::cout << g_failures << " criterion(s) failed\n";
    return 1;
  }
  std::cout << "all criteria passed\n";
  return 0;
}
