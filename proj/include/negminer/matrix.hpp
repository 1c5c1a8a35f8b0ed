#pragma once

// Embedding matrix container and its on-disk format.
//
// File layout: 16-byte header (magic "NMTX", version u32, num_rows u32,
// dim u32, all little-endian), then num_rows*dim float32 little-endian
// row-major payload, then one JSON string per row with the row id, then a
// final JSON object line {"model": ..., "normalized": ...}. The payload is
// stream-appendable, which is what makes interrupted embedding runs
// resumable (see embed_client.hpp).

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "negminer/common.hpp"
#include "json.hpp"

namespace negminer {

constexpr char kMatrixMagic[4] = {'N', 'M', 'T', 'X'};
constexpr std::uint32_t kMatrixVersion = 1;
constexpr std::size_t kMatrixHeaderBytes = 16;

struct EmbeddingMatrix {
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<float> data;  // rows() x dim, row-major
  bool normalized = false;
  std::string model;  // producing model fingerprint, may be empty

  std::size_t rows() const { return ids.size(); }

  const float* row(std::size_t i) const { return data.data() + i * dim; }
  float* row(std::size_t i) { return data.data() + i * dim; }

  void validate() const {
    if (dim == 0) fail("matrix dim must be positive");
    if (data.size() != ids.size() * dim)
      fail("matrix payload size mismatch: ", data.size(), " floats for ", ids.size(), " rows of dim ", dim);
    std::unordered_map<std::string, std::size_t> seen;
    seen.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i].empty()) fail("matrix row ", i, " has empty id");
      if (!seen.emplace(ids[i], i).second) fail("duplicate matrix row id \"", ids[i], "\"");
    }
    for (std::size_t i = 0; i < rows(); ++i) {
      const float* r = row(i);
      double sq = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        if (!std::isfinite(r[j])) fail("non-finite value in matrix row \"", ids[i], "\"");
        sq += static_cast<double>(r[j]) * r[j];
      }
      if (normalized && std::abs(std::sqrt(sq) - 1.0) > 1e-4)
        fail("matrix flagged normalized but row \"", ids[i], "\" has L2 norm ", std::sqrt(sq));
    }
  }
};

inline std::unordered_map<std::string, std::size_t> make_row_index(const EmbeddingMatrix& m) {
  std::unordered_map<std::string, std::size_t> index;
  index.reserve(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) index.emplace(m.ids[i], i);
  return index;
}

namespace detail {

inline void store_u32(unsigned char* p, std::uint32_t v) {
  p[0] = static_cast<unsigned char>(v);
  p[1] = static_cast<unsigned char>(v >> 8);
  p[2] = static_cast<unsigned char>(v >> 16);
  p[3] = static_cast<unsigned char>(v >> 24);
}

inline std::uint32_t load_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

// Payload floats are little-endian on disk; byte-swap when the host is not.
inline void floats_to_le(std::vector<float>& v) {
  if constexpr (std::endian::native != std::endian::little) {
    for (float& f : v) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      u = __builtin_bswap32(u);
      std::memcpy(&f, &u, 4);
    }
  }
}

inline void write_matrix_header(std::ostream& out, std::uint32_t rows, std::uint32_t dim) {
  unsigned char h[kMatrixHeaderBytes];
  std::memcpy(h, kMatrixMagic, 4);
  store_u32(h + 4, kMatrixVersion);
  store_u32(h + 8, rows);
  store_u32(h + 12, dim);
  out.write(reinterpret_cast<const char*>(h), kMatrixHeaderBytes);
}

struct MatrixHeader {
  std::uint32_t rows = 0;
  std::uint32_t dim = 0;
};

inline MatrixHeader read_matrix_header(std::istream& in, const std::filesystem::path& path) {
  unsigned char h[kMatrixHeaderBytes];
  in.read(reinterpret_cast<char*>(h), kMatrixHeaderBytes);
  if (in.gcount() != static_cast<std::streamsize>(kMatrixHeaderBytes))
    fail("matrix file ", path.string(), ": payload size mismatch (file shorter than header)");
  if (std::memcmp(h, kMatrixMagic, 4) != 0) fail("matrix file ", path.string(), ": bad magic");
  std::uint32_t version = load_u32(h + 4);
  if (version != kMatrixVersion) fail("matrix file ", path.string(), ": unsupported version ", version);
  MatrixHeader mh;
  mh.rows = load_u32(h + 8);
  mh.dim = load_u32(h + 12);
  if (mh.dim == 0) fail("matrix file ", path.string(), ": zero dim in header");
  return mh;
}

}  // namespace detail

inline void save_matrix(const EmbeddingMatrix& m, const std::filesystem::path& path) {
  m.validate();
  if (m.rows() > 0xffffffffULL || m.dim > 0xffffffffULL) fail("matrix too large for format");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot open ", path.string(), " for writing");
  detail::write_matrix_header(out, static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.dim));
  std::vector<float> payload = m.data;
  detail::floats_to_le(payload);
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  for (const auto& id : m.ids) out << nlohmann::json(id).dump() << '\n';
  nlohmann::json meta;
  meta["model"] = m.model;
  meta["normalized"] = m.normalized;
  out << meta.dump() << '\n';
  if (!out) fail("write failed for ", path.string());
}

inline EmbeddingMatrix load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open matrix file ", path.string());
  auto header = detail::read_matrix_header(in, path);

  EmbeddingMatrix m;
  m.dim = header.dim;
  std::size_t n_floats = static_cast<std::size_t>(header.rows) * header.dim;
  m.data.resize(n_floats);
  in.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(n_floats * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(n_floats * sizeof(float)))
    fail("matrix file ", path.string(), ": payload size mismatch (expected ", n_floats * sizeof(float),
         " payload bytes)");
  detail::floats_to_le(m.data);

  m.ids.reserve(header.rows);
  std::string line;
  for (std::uint32_t i = 0; i < header.rows; ++i) {
    if (!std::getline(in, line))
      fail("matrix file ", path.string(), ": payload size mismatch (id table has ", i, " of ", header.rows,
           " entries)");
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_string())
      fail("matrix file ", path.string(), ": id table entry ", i, " is not a JSON string");
    m.ids.push_back(j.get<std::string>());
  }
  if (std::getline(in, line) && !trim(line).empty()) {
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      fail("matrix file ", path.string(), ": malformed metadata line");
    if (j.contains("model")) m.model = j["model"].get<std::string>();
    if (j.contains("normalized")) m.normalized = j["normalized"].get<bool>();
  }
  m.validate();
  return m;
}

// Returns a copy with every row scaled to unit L2 norm. Errors on zero-norm
// rows; already-normalized input passes through unchanged up to rounding.
inline EmbeddingMatrix normalize_rows(const EmbeddingMatrix& input) {
  EmbeddingMatrix m = input;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    float* r = m.row(i);
    double sq = 0.0;
    for (std::size_t j = 0; j < m.dim; ++j) sq += static_cast<double>(r[j]) * r[j];
    double norm = std::sqrt(sq);
    if (norm == 0.0) fail("cannot normalize zero-norm row \"", m.ids[i], "\"");
    for (std::size_t j = 0; j < m.dim; ++j) r[j] = static_cast<float>(r[j] / norm);
  }
  m.normalized = true;
  return m;
}

}  // namespace negminer
