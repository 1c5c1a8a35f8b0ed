#pragma once

// HTTP client for an external embedding-inference service.
//
// Wire protocol: POST {base_url}/v1/embeddings with body
// {"model": "...", "input": ["text", ...]}, response
// {"data": [{"index": 0, "embedding": [floats]}, ...]}. This is the shape
// most inference servers expose, so any embedding model can sit behind it.
//
// Requests are chunked to batch_size and issued in waves of at most
// max_parallel_requests. A failed request is retried up to max_retries
// times with exponential backoff (factor 2, +-20% jitter); a batch that
// still fails raises service_error, which the CLI maps to its own exit
// code so callers can tell service outages from bad inputs.
//
// embed_corpus streams rows to disk in corpus order and is resumable: a
// sidecar <out>.progress.json records model/dim/total while the run is
// incomplete, and a restart skips every fully written row. Instruction
// prefixes apply to queries only, never to passages.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <future>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "negminer/common.hpp"
#include "negminer/corpus.hpp"
#include "negminer/matrix.hpp"

namespace negminer {

struct EmbedServiceConfig {
  std::string base_url;         // e.g. http://127.0.0.1:8080
  std::string model_name;
  int batch_size = 32;
  int max_retries = 3;
  double timeout_seconds = 30.0;
  int max_parallel_requests = 4;
  double retry_base_seconds = 1.0;
  std::string api_key;          // sent as a bearer token when non-empty
  std::size_t max_text_chars = 0;  // 0 = unlimited; else texts are truncated

  void validate() const {
    if (base_url.empty()) fail("embedding service base_url is empty (set it or NEGMINER_BASE_URL)");
    if (model_name.empty()) fail("embedding model_name is empty");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (max_retries < 0) fail("max_retries must be >= 0");
    if (timeout_seconds <= 0.0) fail("timeout must be > 0");
    if (max_parallel_requests < 1) fail("max_parallel_requests must be >= 1");
    if (retry_base_seconds < 0.0) fail("retry_base_seconds must be >= 0");
  }
};

struct InstructionPrefix {
  std::string task_definition;  // empty = no prefix
};

inline std::string apply_prefix(const InstructionPrefix& prefix, const std::string& query_text) {
  if (prefix.task_definition.empty()) return query_text;
  return prefix.task_definition + ": " + query_text;
}

namespace detail {

// Splits "http://host:port/some/prefix" into the client origin and the path
// prefix the endpoint is appended to.
inline std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
  auto scheme_end = base_url.find("://");
  std::size_t host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  auto path_start = base_url.find('/', host_start);
  if (path_start == std::string::npos) return {base_url, ""};
  std::string origin = base_url.substr(0, path_start);
  std::string prefix{trim(base_url.substr(path_start))};
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {origin, prefix};
}

inline void backoff_sleep(double base_seconds, int attempt) {
  if (base_seconds <= 0.0) return;
  thread_local std::mt19937_64 rng{std::random_device{}()};
  double jitter = 0.8 + 0.4 * uniform01(rng);
  double delay = base_seconds * std::pow(2.0, attempt) * jitter;
  std::this_thread::sleep_for(std::chrono::duration<double>(delay));
}

// One POST /v1/embeddings call with retries. Returns row-major floats for
// the batch and reports the embedding dim via out param.
inline std::vector<float> embed_batch(const EmbedServiceConfig& config, const std::vector<std::string>& inputs,
                                      std::size_t batch_index, std::size_t& dim_out) {
  auto [origin, prefix] = split_base_url(config.base_url);
  httplib::Client cli(origin);
  auto secs = static_cast<time_t>(config.timeout_seconds);
  auto usecs = static_cast<time_t>((config.timeout_seconds - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  if (!config.api_key.empty()) cli.set_bearer_token_auth(config.api_key);

  nlohmann::json body;
  body["model"] = config.model_name;
  body["input"] = inputs;
  std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
    if (attempt > 0) backoff_sleep(config.retry_base_seconds, attempt - 1);
    auto res = cli.Post(prefix + "/v1/embeddings", payload, "application/json");
    if (!res) {
      last_error = str("connection failed (", httplib::to_string(res.error()), ")");
      continue;
    }
    if (res->status != 200) {
      last_error = str("HTTP ", res->status);
      continue;
    }

    nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.contains("data") || !reply["data"].is_array())
      fail("batch ", batch_index, ": malformed embedding response");
    const auto& data = reply["data"];
    if (data.size() != inputs.size())
      fail("batch ", batch_index, ": expected ", inputs.size(), " embeddings, got ", data.size());

    std::size_t dim = 0;
    std::vector<std::vector<float>> rows(inputs.size());
    for (const auto& item : data) {
      if (!item.contains("index") || !item.contains("embedding"))
        fail("batch ", batch_index, ": embedding entry missing index or embedding");
      auto idx = item["index"].get<std::size_t>();
      if (idx >= inputs.size()) fail("batch ", batch_index, ": embedding index ", idx, " out of range");
      if (!rows[idx].empty()) fail("batch ", batch_index, ": duplicate embedding index ", idx);
      rows[idx] = item["embedding"].get<std::vector<float>>();
      if (rows[idx].empty()) fail("batch ", batch_index, ": empty embedding at index ", idx);
      if (dim == 0) dim = rows[idx].size();
      if (rows[idx].size() != dim)
        fail("batch ", batch_index, ": embedding dim drift within batch (", rows[idx].size(), " vs ", dim, ")");
    }
    std::vector<float> flat;
    flat.reserve(inputs.size() * dim);
    for (auto& r : rows) {
      if (r.size() != dim) fail("batch ", batch_index, ": missing embedding row");
      flat.insert(flat.end(), r.begin(), r.end());
    }
    dim_out = dim;
    return flat;
  }
  throw service_error(str("batch ", batch_index, " failed after ", config.max_retries + 1,
                          " attempts: ", last_error));
}

inline std::vector<std::string> clip_texts(const EmbedServiceConfig& config, std::vector<std::string> texts) {
  if (config.max_text_chars > 0)
    for (auto& t : texts)
      if (t.size() > config.max_text_chars) t.resize(config.max_text_chars);
  return texts;
}

struct BatchResult {
  std::size_t dim = 0;
  std::vector<float> rows;
};

// Runs batches [first, last) in waves of max_parallel_requests and hands
// each finished wave to `sink` in batch order. Throws the first failure
// after its preceding batches were delivered.
template <typename MakeInputs, typename Sink>
void run_batches(const EmbedServiceConfig& config, std::size_t first, std::size_t last, MakeInputs&& make_inputs,
                 Sink&& sink, std::size_t& dim_inout) {
  std::size_t next = first;
  while (next < last) {
    std::size_t wave = std::min<std::size_t>(static_cast<std::size_t>(config.max_parallel_requests), last - next);
    std::vector<std::future<BatchResult>> futures;
    futures.reserve(wave);
    for (std::size_t b = next; b < next + wave; ++b) {
      futures.push_back(std::async(std::launch::async, [&config, b, &make_inputs] {
        BatchResult r;
        r.rows = embed_batch(config, make_inputs(b), b, r.dim);
        return r;
      }));
    }
    std::exception_ptr error;
    for (std::size_t i = 0; i < wave; ++i) {
      BatchResult r;
      try {
        r = futures[i].get();
      } catch (...) {
        if (!error) error = std::current_exception();
        continue;
      }
      if (error) continue;  // keep output a clean prefix: drop rows after a failure
      if (dim_inout == 0) dim_inout = r.dim;
      if (r.dim != dim_inout)
        fail("embedding dim drift between batches: got ", r.dim, ", expected ", dim_inout);
      sink(next + i, std::move(r.rows));
    }
    if (error) std::rethrow_exception(error);
    next += wave;
  }
}

}  // namespace detail

inline EmbeddingMatrix embed_texts(const EmbedServiceConfig& config, const std::vector<std::string>& texts,
                                   std::vector<std::string> ids = {}) {
  config.validate();
  if (texts.empty()) fail("no inputs");
  if (!ids.empty() && ids.size() != texts.size())
    fail("ids (", ids.size(), ") do not match texts (", texts.size(), ")");
  if (ids.empty()) {
    ids.reserve(texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i) ids.push_back(std::to_string(i));
  }
  auto clipped = detail::clip_texts(config, texts);
  const auto bs = static_cast<std::size_t>(config.batch_size);
  const std::size_t n_batches = (clipped.size() + bs - 1) / bs;

  std::size_t dim = 0;
  std::vector<std::vector<float>> parts(n_batches);
  detail::run_batches(
      config, 0, n_batches,
      [&](std::size_t b) {
        auto begin = clipped.begin() + static_cast<std::ptrdiff_t>(b * bs);
        auto end = clipped.begin() + static_cast<std::ptrdiff_t>(std::min(clipped.size(), (b + 1) * bs));
        return std::vector<std::string>(begin, end);
      },
      [&](std::size_t b, std::vector<float>&& rows) { parts[b] = std::move(rows); }, dim);

  EmbeddingMatrix m;
  m.dim = dim;
  m.model = config.model_name;
  m.ids = std::move(ids);
  m.data.reserve(texts.size() * dim);
  for (auto& p : parts) m.data.insert(m.data.end(), p.begin(), p.end());
  m.validate();
  return m;
}

namespace detail {

struct ResumeState {
  std::size_t completed = 0;
  std::size_t dim = 0;  // 0 = unknown (fresh run)
};

inline ResumeState prepare_resume(const EmbedServiceConfig& config, const std::filesystem::path& out_path,
                                  const std::filesystem::path& sidecar, std::size_t total_rows) {
  ResumeState st;
  std::ifstream side(sidecar);
  if (!side) return st;

  nlohmann::json j = nlohmann::json::parse(side, nullptr, false);
  if (j.is_discarded()) fail("corrupt progress file ", sidecar.string(), "; delete it to restart");
  auto model = j.at("model").get<std::string>();
  if (model != config.model_name)
    fail("resume mismatch: ", out_path.string(), " was produced by model \"", model, "\", config says \"",
         config.model_name, "\"");
  if (j.at("total_rows").get<std::size_t>() != total_rows)
    fail("resume mismatch: progress file expects ", j.at("total_rows").get<std::size_t>(), " rows, corpus has ",
         total_rows);
  st.dim = j.at("dim").get<std::size_t>();
  if (st.dim == 0) fail("corrupt progress file ", sidecar.string(), ": zero dim");

  if (!std::filesystem::exists(out_path)) return st;  // header not yet written
  auto fsize = std::filesystem::file_size(out_path);
  if (fsize < kMatrixHeaderBytes) {
    std::filesystem::remove(out_path);
    return st;
  }
  {
    std::ifstream in(out_path, std::ios::binary);
    auto header = read_matrix_header(in, out_path);
    if (header.dim != st.dim)
      fail("resume mismatch: file dim ", header.dim, " vs progress dim ", st.dim);
    if (header.rows != total_rows)
      fail("resume mismatch: file expects ", header.rows, " rows, corpus has ", total_rows);
  }
  std::size_t row_bytes = st.dim * sizeof(float);
  st.completed = std::min((static_cast<std::size_t>(fsize) - kMatrixHeaderBytes) / row_bytes, total_rows);
  // drop a partially written trailing row
  std::filesystem::resize_file(out_path, kMatrixHeaderBytes + st.completed * row_bytes);
  return st;
}

}  // namespace detail

inline EmbeddingMatrix embed_corpus(const EmbedServiceConfig& config, const Corpus& corpus,
                                    const std::filesystem::path& out_path) {
  config.validate();
  if (corpus.empty()) fail("no inputs");
  const std::size_t total_rows = corpus.size();
  if (total_rows > 0xffffffffULL) fail("corpus too large for the matrix format");
  const std::filesystem::path sidecar = out_path.string() + ".progress.json";

  // a finished file has no sidecar; verify and reuse it without any requests
  if (std::filesystem::exists(out_path) && !std::filesystem::exists(sidecar)) {
    EmbeddingMatrix m = load_matrix(out_path);
    if (m.model != config.model_name)
      fail("resume mismatch: ", out_path.string(), " was produced by model \"", m.model, "\", config says \"",
           config.model_name, "\"");
    if (m.rows() != total_rows)
      fail("resume mismatch: ", out_path.string(), " has ", m.rows(), " rows, corpus has ", total_rows);
    for (std::size_t i = 0; i < total_rows; ++i)
      if (m.ids[i] != corpus[i].id)
        fail("resume mismatch: row ", i, " of ", out_path.string(), " is \"", m.ids[i], "\", corpus has \"",
             corpus[i].id, "\"");
    return m;
  }

  auto st = detail::prepare_resume(config, out_path, sidecar, total_rows);
  const auto bs = static_cast<std::size_t>(config.batch_size);

  auto write_sidecar = [&](std::size_t dim) {
    nlohmann::json j{{"model", config.model_name}, {"dim", dim}, {"total_rows", total_rows}};
    detail::write_text_file(sidecar, j.dump() + "\n");
  };

  if (st.completed < total_rows) {
    std::size_t dim = st.dim;
    const std::size_t first_row = st.completed;
    const std::size_t n_batches = (total_rows - first_row + bs - 1) / bs;

    std::ofstream out;
    if (st.dim != 0 && std::filesystem::exists(out_path)) {
      out.open(out_path, std::ios::binary | std::ios::app);
      if (!out) fail("cannot open ", out_path.string(), " for appending");
    }

    detail::run_batches(
        config, 0, n_batches,
        [&](std::size_t b) {
          std::vector<std::string> inputs;
          std::size_t begin = first_row + b * bs;
          std::size_t end = std::min(total_rows, begin + bs);
          inputs.reserve(end - begin);
          for (std::size_t i = begin; i < end; ++i) inputs.push_back(corpus[i].text);
          return detail::clip_texts(config, std::move(inputs));
        },
        [&](std::size_t, std::vector<float>&& rows) {
          if (!out.is_open()) {  // first batch of a fresh run: dim now known
            write_sidecar(dim);
            out.open(out_path, std::ios::binary | std::ios::trunc);
            if (!out) fail("cannot open ", out_path.string(), " for writing");
            detail::write_matrix_header(out, static_cast<std::uint32_t>(total_rows),
                                        static_cast<std::uint32_t>(dim));
          }
          detail::floats_to_le(rows);
          out.write(reinterpret_cast<const char*>(rows.data()),
                    static_cast<std::streamsize>(rows.size() * sizeof(float)));
          out.flush();
          if (!out) fail("write to ", out_path.string(), " failed");
        },
        dim);
    if (st.dim != 0 && dim != st.dim)
      fail("resume mismatch: service returned dim ", dim, ", file has dim ", st.dim);
    out.flush();
  }

  // payload complete: append the id table and metadata, then drop the sidecar
  {
    std::ofstream out(out_path, std::ios::binary | std::ios::app);
    if (!out) fail("cannot open ", out_path.string(), " for appending");
    for (std::size_t i = 0; i < total_rows; ++i) out << nlohmann::json(corpus[i].id).dump() << '\n';
    nlohmann::json meta{{"model", config.model_name}, {"normalized", false}};
    out << meta.dump() << '\n';
    out.flush();
    if (!out) fail("write to ", out_path.string(), " failed");
  }
  std::filesystem::remove(sidecar);
  return load_matrix(out_path);
}

}  // namespace negminer
