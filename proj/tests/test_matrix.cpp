#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "negminer/matrix.hpp"
#include "support/fixtures.hpp"

using namespace negminer;
using testsupport::TempDir;

namespace {

EmbeddingMatrix small_matrix() {
  EmbeddingMatrix m;
  m.dim = 4;
  m.ids = {"a", "b", "c"};
  m.data = {0.1f, -0.2f, 0.3f, 4.0f, 1.5f, 2.5f, -3.5f, 0.0f, 9.0f, 8.0f, 7.0f, 6.0f};
  m.model = "toy-model";
  return m;
}

}  // namespace

TEST_CASE("matrix round-trip is bit-exact") {
  TempDir tmp("matrix-roundtrip");
  auto m = small_matrix();
  save_matrix(m, tmp.file("m.bin"));
  auto loaded = load_matrix(tmp.file("m.bin"));

  REQUIRE(loaded.dim == m.dim);
  REQUIRE(loaded.ids == m.ids);
  REQUIRE(loaded.model == m.model);
  REQUIRE(loaded.normalized == m.normalized);
  REQUIRE(loaded.data.size() == m.data.size());
  REQUIRE(std::memcmp(loaded.data.data(), m.data.data(), m.data.size() * sizeof(float)) == 0);
}

TEST_CASE("truncated matrix file reports payload size mismatch") {
  TempDir tmp("matrix-truncated");
  auto m = small_matrix();
  save_matrix(m, tmp.file("m.bin"));
  auto full = std::filesystem::file_size(tmp.file("m.bin"));
  std::filesystem::resize_file(tmp.file("m.bin"), kMatrixHeaderBytes + 7);
  REQUIRE(full > kMatrixHeaderBytes + 7);
  REQUIRE_THROWS_WITH(load_matrix(tmp.file("m.bin")), Catch::Matchers::ContainsSubstring("payload size mismatch"));
}

TEST_CASE("matrix file with bad magic is rejected") {
  TempDir tmp("matrix-magic");
  std::ofstream(tmp.file("m.bin"), std::ios::binary) << "JUNKJUNKJUNKJUNKJUNK";
  REQUIRE_THROWS_WITH(load_matrix(tmp.file("m.bin")), Catch::Matchers::ContainsSubstring("bad magic"));
}

TEST_CASE("large matrix round-trips with a stable byte checksum") {
  TempDir tmp("matrix-large");
  auto m = testsupport::random_unit_matrix(100000, 1024, 42, "r");

  save_matrix(m, tmp.file("big.bin"));
  auto h1 = hash_file(tmp.file("big.bin"));
  auto loaded = load_matrix(tmp.file("big.bin"));
  REQUIRE(loaded.rows() == m.rows());
  REQUIRE(loaded.dim == m.dim);
  REQUIRE(std::memcmp(loaded.data.data(), m.data.data(), m.data.size() * sizeof(float)) == 0);
  loaded = EmbeddingMatrix{};

  save_matrix(m, tmp.file("big2.bin"));
  REQUIRE(hash_file(tmp.file("big2.bin")) == h1);
}

TEST_CASE("normalize_rows scales to unit norm") {
  EmbeddingMatrix m;
  m.dim = 2;
  m.ids = {"r"};
  m.data = {3.0f, 4.0f};
  auto n = normalize_rows(m);
  REQUIRE(n.normalized);
  REQUIRE(n.data[0] == Catch::Approx(0.6).margin(1e-7));
  REQUIRE(n.data[1] == Catch::Approx(0.8).margin(1e-7));
}

TEST_CASE("normalize_rows is idempotent within 1e-7") {
  auto m = testsupport::random_unit_matrix(20, 16, 7, "n");
  auto once = normalize_rows(m);
  auto twice = normalize_rows(once);
  for (std::size_t i = 0; i < once.data.size(); ++i)
    REQUIRE(std::abs(once.data[i] - twice.data[i]) <= 1e-7f);
}

TEST_CASE("normalize_rows brings random 50x8 rows within 1e-6 of unit") {
  std::mt19937_64 rng(99);
  EmbeddingMatrix m;
  m.dim = 8;
  m.data.resize(50 * 8);
  for (std::size_t i = 0; i < 50; ++i) {
    m.ids.push_back("x" + std::to_string(i));
    for (std::size_t j = 0; j < 8; ++j)
      m.data[i * 8 + j] = static_cast<float>(uniform01(rng) * 10.0 - 5.0 + 0.01);
  }
  auto n = normalize_rows(m);
  for (std::size_t i = 0; i < 50; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < 8; ++j) sq += static_cast<double>(n.row(i)[j]) * n.row(i)[j];
    REQUIRE(std::abs(std::sqrt(sq) - 1.0) <= 1e-6);
  }
}

TEST_CASE("normalize_rows rejects zero-norm rows by id") {
  EmbeddingMatrix m;
  m.dim = 3;
  m.ids = {"ok", "zero"};
  m.data = {1.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f};
  REQUIRE_THROWS_WITH(normalize_rows(m), Catch::Matchers::ContainsSubstring("zero"));
}

TEST_CASE("matrix validation catches duplicate ids and non-finite values") {
  EmbeddingMatrix m;
  m.dim = 2;
  m.ids = {"a", "a"};
  m.data = {1.0f, 0.0f, 0.0f, 1.0f};
  REQUIRE_THROWS_WITH(m.validate(), Catch::Matchers::ContainsSubstring("duplicate"));

  m.ids = {"a", "b"};
  m.data[3] = std::numeric_limits<float>::quiet_NaN();
  REQUIRE_THROWS_WITH(m.validate(), Catch::Matchers::ContainsSubstring("b"));
}
