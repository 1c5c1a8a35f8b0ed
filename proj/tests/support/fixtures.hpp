#pragma once

// Shared test helpers: scratch directories, synthetic corpora/matrices, and
// the planted-false-negative fixture used across mining and CLI tests.

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "negminer/corpus.hpp"
#include "negminer/matrix.hpp"
#include "negminer/mining.hpp"

namespace testsupport {

// Self-deleting scratch directory under the system temp dir.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    auto base = std::filesystem::temp_directory_path();
    path = base / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path / name).string(); }
};

inline std::string cli_path() {
  const char* p = std::getenv("NEGMINER_CLI");
  return p ? p : "";
}

// Random unit vectors, fixed seed.
inline negminer::EmbeddingMatrix random_unit_matrix(std::size_t rows, std::size_t dim, std::uint64_t seed,
                                                    const std::string& id_prefix) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  negminer::EmbeddingMatrix m;
  m.dim = dim;
  m.data.resize(rows * dim);
  m.ids.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double sq = 0.0;
    std::vector<double> v(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      v[j] = gauss(rng);
      sq += v[j] * v[j];
    }
    double inv = 1.0 / std::sqrt(sq);
    for (std::size_t j = 0; j < dim; ++j) m.data[i * dim + j] = static_cast<float>(v[j] * inv);
    m.ids.push_back(id_prefix + std::to_string(i));
  }
  m.normalized = true;
  return m;
}

// Fixture with per-query planted false negatives at controlled cosine
// scores. Each query lives in its own 2D subspace (dim = 2 * n_queries), so
// cross-query similarities are exactly zero and every passage's score
// against its own query is exactly the value we plant.
//
// Per query i:
//   positive            at score pos_score[i]
//   n_plants "plants"   just above the percpos(0.95) threshold
//   n_fill fillers      well below every threshold
struct PlantedFixture {
  negminer::Corpus corpus;
  std::vector<negminer::TrainPair> pairs;
  negminer::EmbeddingMatrix corpus_matrix;
  negminer::EmbeddingMatrix query_matrix;
  std::vector<std::vector<std::string>> plant_ids;   // per query
  std::vector<std::vector<std::string>> filler_ids;  // per query
};

// score -> embedding inside query i's subspace
inline void place_vector(negminer::EmbeddingMatrix& m, std::size_t row, std::size_t query_index, double score,
                         std::size_t n_queries) {
  const std::size_t dim = 2 * n_queries;
  float* r = m.row(row);
  for (std::size_t j = 0; j < dim; ++j) r[j] = 0.0f;
  double ortho = std::sqrt(std::max(0.0, 1.0 - score * score));
  r[2 * query_index] = static_cast<float>(score);
  r[2 * query_index + 1] = static_cast<float>(ortho);
}

// pos_scores: one positive score per query. Plants score in
// (0.95 * pos, pos); fillers score around 0.3 * pos.
inline PlantedFixture make_planted_fixture(const std::vector<double>& pos_scores, std::size_t n_plants = 3,
                                           std::size_t n_fill = 8) {
  const std::size_t n_queries = pos_scores.size();
  const std::size_t dim = 2 * n_queries;
  PlantedFixture f;
  f.plant_ids.resize(n_queries);
  f.filler_ids.resize(n_queries);

  const std::size_t rows = n_queries * (1 + n_plants + n_fill);
  f.corpus_matrix.dim = dim;
  f.corpus_matrix.data.resize(rows * dim);
  f.corpus_matrix.normalized = true;
  f.query_matrix.dim = dim;
  f.query_matrix.data.resize(n_queries * dim);
  f.query_matrix.normalized = true;

  std::size_t row = 0;
  for (std::size_t q = 0; q < n_queries; ++q) {
    double pos = pos_scores[q];

    float* qr = f.query_matrix.row(q);
    for (std::size_t j = 0; j < dim; ++j) qr[j] = 0.0f;
    qr[2 * q] = 1.0f;
    f.query_matrix.ids.push_back("q" + std::to_string(q));

    auto add_passage = [&](const std::string& id, double score, const std::string& text) {
      f.corpus_matrix.ids.push_back(id);
      place_vector(f.corpus_matrix, row, q, score, n_queries);
      f.corpus.add({id, text});
      ++row;
    };

    std::string pos_id = "pos" + std::to_string(q);
    add_passage(pos_id, pos, "positive passage " + std::to_string(q));

    for (std::size_t p = 0; p < n_plants; ++p) {
      // evenly spaced inside (0.95*pos, pos): guaranteed above the
      // percpos(0.95) threshold, i.e. a planted false negative
      double frac = 0.96 + 0.01 * static_cast<double>(p);
      std::string id = "plant" + std::to_string(q) + "_" + std::to_string(p);
      add_passage(id, pos * frac, "planted near-duplicate " + id);
      f.plant_ids[q].push_back(id);
    }
    for (std::size_t r2 = 0; r2 < n_fill; ++r2) {
      // fillers sit low and spread out, all below 0.95*pos and below pos-0.05
      double score = pos * (0.30 + 0.02 * static_cast<double>(r2));
      std::string id = "fill" + std::to_string(q) + "_" + std::to_string(r2);
      add_passage(id, score, "filler passage " + id);
      f.filler_ids[q].push_back(id);
    }

    negminer::TrainPair pair;
    pair.query_id = "q" + std::to_string(q);
    pair.query_text = "query " + std::to_string(q);
    pair.positive_ids = {pos_id};
    f.pairs.push_back(std::move(pair));
  }
  return f;
}

// Random candidate list: descending scores, unique ids.
inline negminer::CandidateList random_candidates(std::mt19937_64& rng, std::size_t n,
                                                 const std::string& query_id = "q") {
  negminer::CandidateList list;
  list.query_id = query_id;
  std::vector<double> scores(n);
  for (auto& s : scores) s = negminer::uniform01(rng) * 2.0 - 1.0;
  std::sort(scores.rbegin(), scores.rend());
  for (std::size_t i = 0; i < n; ++i) list.entries.push_back({"c" + std::to_string(i), scores[i]});
  return list;
}

}  // namespace testsupport
