#pragma once

// Exact batched top-k similarity search over an in-memory corpus matrix.
//
// Brute force by design: mining is an offline, run-once-per-teacher job and
// exact search keeps method comparisons free of ANN recall noise. The corpus
// is walked in chunks with a block of queries held hot per chunk pass, so
// the scratch footprint stays bounded by chunk_rows regardless of corpus
// size. Results are deterministic for any chunk size and worker count:
// candidates are ordered by the strict total order (score desc, passage_id
// asc) and each query's selection state is owned by a single thread.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "negminer/common.hpp"
#include "negminer/matrix.hpp"

namespace negminer {

enum class Metric { cosine, dot };

inline const char* metric_name(Metric m) { return m == Metric::cosine ? "cosine" : "dot"; }

inline Metric metric_from_name(const std::string& name) {
  if (name == "cosine") return Metric::cosine;
  if (name == "dot") return Metric::dot;
  fail("unknown metric \"", name, "\" (expected cosine or dot)");
}

struct Candidate {
  std::string passage_id;
  double score = 0.0;
};

struct CandidateList {
  std::string query_id;
  std::vector<Candidate> entries;  // descending score, ties by ascending id
  bool underfull = false;          // fewer than k candidates were available
};

namespace detail {

// Eight independent accumulators so the loop vectorizes without
// -ffast-math; the reduction order is fixed, so a given (query, passage)
// pair scores bit-identically no matter how the corpus is chunked.
inline float dot_f32(const float* a, const float* b, std::size_t dim) {
  float acc[8] = {0.f, 0.f, 0.f, 0.f, 0.f, 0.f, 0.f, 0.f};
  std::size_t i = 0;
  for (; i + 8 <= dim; i += 8)
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  float tail = 0.f;
  for (; i < dim; ++i) tail += a[i] * b[i];
  return (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail;
}

inline float norm_f32(const float* v, std::size_t dim) { return std::sqrt(dot_f32(v, v, dim)); }

inline double combine_score(float dot, float norm_a, float norm_b, Metric metric) {
  if (metric == Metric::dot) return static_cast<double>(dot);
  return static_cast<double>(dot) / (static_cast<double>(norm_a) * static_cast<double>(norm_b));
}

}  // namespace detail

inline double score(std::span<const float> query_vec, std::span<const float> passage_vec, Metric metric) {
  if (query_vec.size() != passage_vec.size())
    fail("score dim mismatch: ", query_vec.size(), " vs ", passage_vec.size());
  float d = detail::dot_f32(query_vec.data(), passage_vec.data(), query_vec.size());
  if (metric == Metric::dot) return static_cast<double>(d);
  float na = detail::norm_f32(query_vec.data(), query_vec.size());
  float nb = detail::norm_f32(passage_vec.data(), passage_vec.size());
  if (na == 0.f || nb == 0.f) fail("cosine scoring requires nonzero norms");
  return detail::combine_score(d, na, nb, metric);
}

struct TopkOptions {
  std::size_t chunk_rows = 65536;  // corpus rows per pass; 0 means one pass
  int threads = 0;                 // 0 = library default
};

using ExclusionMap = std::unordered_map<std::string, std::unordered_set<std::string>>;

namespace detail {

struct HeapEntry {
  double score;
  std::uint32_t row;
};

// Strict total order: higher score first, ties by ascending passage id.
struct EntryBetter {
  const std::vector<std::string>* ids;
  bool operator()(const HeapEntry& a, const HeapEntry& b) const {
    if (a.score != b.score) return a.score > b.score;
    return (*ids)[a.row] < (*ids)[b.row];
  }
};

}  // namespace detail

inline std::vector<CandidateList> topk(const EmbeddingMatrix& queries, const EmbeddingMatrix& corpus,
                                       std::size_t k, const ExclusionMap& exclusions, Metric metric,
                                       TopkOptions opts = {}) {
  if (k < 1) fail("topk requires k >= 1");
  if (queries.dim != corpus.dim)
    fail("topk dim mismatch: queries dim ", queries.dim, " vs corpus dim ", corpus.dim);

  const std::size_t n_q = queries.rows();
  const std::size_t n_c = corpus.rows();
  const std::size_t dim = corpus.dim;

  std::vector<float> q_norms, c_norms;
  if (metric == Metric::cosine) {
    q_norms.resize(n_q);
    c_norms.resize(n_c);
    for (std::size_t i = 0; i < n_q; ++i) {
      q_norms[i] = detail::norm_f32(queries.row(i), dim);
      if (q_norms[i] == 0.f) fail("cosine scoring requires nonzero norms: query \"", queries.ids[i], "\"");
    }
    for (std::size_t i = 0; i < n_c; ++i) {
      c_norms[i] = detail::norm_f32(corpus.row(i), dim);
      if (c_norms[i] == 0.f) fail("cosine scoring requires nonzero norms: passage \"", corpus.ids[i], "\"");
    }
  }

  // Excluded passage ids resolved to sorted corpus row indices per query.
  auto corpus_index = make_row_index(corpus);
  std::vector<std::vector<std::uint32_t>> excluded(n_q);
  for (std::size_t q = 0; q < n_q; ++q) {
    auto it = exclusions.find(queries.ids[q]);
    if (it == exclusions.end()) continue;
    for (const auto& pid : it->second) {
      auto ri = corpus_index.find(pid);
      if (ri != corpus_index.end()) excluded[q].push_back(static_cast<std::uint32_t>(ri->second));
    }
    std::sort(excluded[q].begin(), excluded[q].end());
  }

  detail::EntryBetter better{&corpus.ids};
  // Heap root is the worst kept entry (max-heap under "better" as less).
  std::vector<std::vector<detail::HeapEntry>> heaps(n_q);
  for (auto& h : heaps) h.reserve(k + 1);

  const std::size_t chunk = opts.chunk_rows == 0 ? std::max<std::size_t>(n_c, 1) : opts.chunk_rows;
  constexpr std::size_t kQueryBlock = 32;
  const std::size_t n_blocks = (n_q + kQueryBlock - 1) / kQueryBlock;
#ifdef _OPENMP
  const int n_threads = opts.threads > 0 ? opts.threads : omp_get_max_threads();
#endif

  for (std::size_t chunk_begin = 0; chunk_begin < n_c; chunk_begin += chunk) {
    const std::size_t chunk_end = std::min(chunk_begin + chunk, n_c);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(n_threads)
#endif
    for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(n_blocks); ++b) {
      const std::size_t q_begin = static_cast<std::size_t>(b) * kQueryBlock;
      const std::size_t q_end = std::min(q_begin + kQueryBlock, n_q);
      for (std::size_t row = chunk_begin; row < chunk_end; ++row) {
        const float* pv = corpus.row(row);
        for (std::size_t q = q_begin; q < q_end; ++q) {
          const auto& excl = excluded[q];
          if (!excl.empty() &&
              std::binary_search(excl.begin(), excl.end(), static_cast<std::uint32_t>(row)))
            continue;
          float d = detail::dot_f32(queries.row(q), pv, dim);
          double s = metric == Metric::cosine ? detail::combine_score(d, q_norms[q], c_norms[row], metric)
                                              : static_cast<double>(d);
          auto& heap = heaps[q];
          detail::HeapEntry e{s, static_cast<std::uint32_t>(row)};
          if (heap.size() < k) {
            heap.push_back(e);
            std::push_heap(heap.begin(), heap.end(), better);
          } else if (better(e, heap.front())) {
            std::pop_heap(heap.begin(), heap.end(), better);
            heap.back() = e;
            std::push_heap(heap.begin(), heap.end(), better);
          }
        }
      }
    }
  }

  std::vector<CandidateList> results(n_q);
  for (std::size_t q = 0; q < n_q; ++q) {
    auto& heap = heaps[q];
    std::sort(heap.begin(), heap.end(), better);
    auto& list = results[q];
    list.query_id = queries.ids[q];
    list.underfull = heap.size() < k;
    list.entries.reserve(heap.size());
    for (const auto& e : heap) list.entries.push_back({corpus.ids[e.row], e.score});
  }
  return results;
}

}  // namespace negminer
