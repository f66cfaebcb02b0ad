#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "masm/error.hpp"
#include "masm/subspace.hpp"
#include "masm/svd.hpp"
#include "oracles.hpp"

using namespace masm;
using fixture::gaussian_matrix;

namespace {

double rel_residual(const Matrix& w, const DecomposedLayer& layer) {
  return frobenius_norm(recompose(layer) - w) / frobenius_norm(w);
}

DecompositionConfig fixed(std::size_t r, std::size_t k) {
  return {FixedRank{r}, k};
}

}  // namespace

TEST_SUITE("subspace") {

TEST_CASE("partition_tail examples") {
  // 0-based half-open ranges for the 1-based (5-6),(7-8),(9-10)
  CHECK(partition_tail(10, 4, 3) == std::vector<IndexRange>{{4, 6}, {6, 8}, {8, 10}});
  CHECK(partition_tail(10, 3, 3) == std::vector<IndexRange>{{3, 6}, {6, 8}, {8, 10}});
  CHECK(partition_tail(5, 4, 1) == std::vector<IndexRange>{{4, 5}});
}

TEST_CASE("partition_tail rejects a tail shorter than K") {
  try {
    partition_tail(5, 4, 2);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kRankPolicy);
    CHECK(std::string(e.what()).find("rank_policy") != std::string::npos);
  }
  CHECK_THROWS_AS(partition_tail(5, 2, 0), Error);
}

TEST_CASE("partition property: blocks are contiguous, disjoint, cover the tail, near-equal") {
  for (std::size_t total = 1; total <= 24; ++total)
    for (std::size_t r = 0; r < total; ++r)
      for (std::size_t k = 1; k <= total - r; ++k) {
        const auto blocks = partition_tail(total, r, k);
        REQUIRE(blocks.size() == k);
        CHECK(blocks.front().begin == r);
        CHECK(blocks.back().end == total);
        for (std::size_t i = 0; i < k; ++i) {
          CHECK(blocks[i].size() >= 1);
          if (i > 0) {
            CHECK(blocks[i].begin == blocks[i - 1].end);
            CHECK(blocks[i - 1].size() >= blocks[i].size());
            CHECK(blocks[i - 1].size() - blocks[i].size() <= 1);
          }
        }
      }
}

TEST_CASE("decompose diag(4,2,1) with r=1, K=2") {
  const Matrix w{{4, 0, 0}, {0, 2, 0}, {0, 0, 1}};
  const DecomposedLayer layer = decompose(w, fixed(1, 2));
  CHECK(frobenius_norm(layer.semantic.weight - Matrix{{4, 0, 0}, {0, 0, 0}, {0, 0, 0}}) <= 1e-12);
  REQUIRE(layer.artifacts.size() == 2);
  REQUIRE(layer.artifacts[0].rank() == 1);
  REQUIRE(layer.artifacts[1].rank() == 1);
  CHECK(layer.artifacts[0].s[0] == doctest::Approx(2.0));
  CHECK(layer.artifacts[1].s[0] == doctest::Approx(1.0));
  CHECK(frobenius_norm(recompose(layer) - w) <= 1e-12);
  CHECK(layer.pretrained_frob_sq == 21.0);
}

TEST_CASE("decompose rejects the zero matrix") {
  CHECK_THROWS_AS(decompose(Matrix(4, 4), DecompositionConfig{}), Error);
  CHECK_THROWS_AS(decompose(Matrix(4, 4), fixed(1, 2)), Error);
}

TEST_CASE("energy policy on random 16x16 matches the cumulative-energy scan") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix w = gaussian_matrix(16, 16, rng);
    const DecompositionConfig cfg{EnergyFraction{0.9}, 5};
    const DecomposedLayer layer = decompose(w, cfg);
    CHECK(layer.semantic.rank() == oracle::energy_scan_rank(svd(w).singular, 0.9, 5));
  }
}

TEST_CASE("energy policy clamps so K tail components remain") {
  // nearly all energy in the last component would ask for r = R
  const Matrix w{{1, 0, 0, 0}, {0, 1e-3, 0, 0}, {0, 0, 1e-3, 0}, {0, 0, 0, 1e-3}};
  const DecomposedLayer layer = decompose(w, {EnergyFraction{1.0}, 3});
  CHECK(layer.semantic.rank() == 1);
  CHECK(layer.artifacts.size() == 3);
  CHECK_THROWS_AS(decompose(w, {EnergyFraction{0.0}, 1}), Error);
  CHECK_THROWS_AS(decompose(w, {EnergyFraction{1.5}, 1}), Error);
  CHECK_THROWS_AS(decompose(w, {FixedRank{0}, 1}), Error);
  CHECK_THROWS_AS(decompose(w, {FixedRank{3}, 2}), Error);
}

TEST_CASE("recompose properties") {
  Rng rng(37);
  const Matrix w = gaussian_matrix(7, 5, rng);
  DecomposedLayer layer = decompose(w, fixed(2, 2));
  CHECK(rel_residual(w, layer) <= 1e-8);

  SUBCASE("all artifact s zeroed gives W_sem exactly") {
    for (auto& a : layer.artifacts) std::fill(a.s.begin(), a.s.end(), 0.0);
    CHECK(recompose(layer) == layer.semantic.weight);
  }
  SUBCASE("perturbing one s entry adds delta * u v^T") {
    const double delta = 0.37;
    const Matrix before = recompose(layer);
    ArtifactSubspace& a = layer.artifacts[1];
    a.s[0] += delta;
    const Matrix expected = before + scaled_outer(column_block(a.u, 0, 1), std::vector{delta},
                                                  column_block(a.v, 0, 1));
    CHECK(frobenius_norm(recompose(layer) - expected) <= 1e-12);
  }
  SUBCASE("corrupted shapes are rejected") {
    layer.artifacts[0].u = Matrix(3, 1);
    CHECK_THROWS_AS(recompose(layer), Error);
  }
}

TEST_CASE("semantic product is cached exactly from its factors") {
  Rng rng(41);
  const DecomposedLayer layer = decompose(gaussian_matrix(9, 6, rng), DecompositionConfig{});
  const SemanticSubspace& s = layer.semantic;
  CHECK(frobenius_norm(s.weight - scaled_outer(s.u, s.s, s.v)) <= 1e-12);
}

TEST_CASE("reconstruction, partition and cross-orthogonality at init for random layers up to 128x128") {
  Rng rng(43);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t rows = 2 + rng.index(127);
    const std::size_t cols = 2 + rng.index(127);
    const std::size_t total = std::min(rows, cols);
    const std::size_t k = 1 + rng.index(std::min<std::size_t>(total - 1, 9));
    CAPTURE(rows);
    CAPTURE(cols);
    const Matrix w = gaussian_matrix(rows, cols, rng);
    const DecomposedLayer layer = decompose(w, {EnergyFraction{0.9}, k}, 3);
    CHECK(layer.layer_id == 3);
    CHECK(rel_residual(w, layer) <= 1e-8);
    std::size_t ranks = layer.semantic.rank();
    for (const auto& a : layer.artifacts) ranks += a.rank();
    CHECK(ranks == total);
    CHECK(layer.total_rank() == total);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j) {
        CHECK(frobenius_sq(matmul_tn(layer.artifacts[i].u, layer.artifacts[j].u)) <= 1e-18);
        CHECK(frobenius_sq(matmul_tn(layer.artifacts[i].v, layer.artifacts[j].v)) <= 1e-18);
      }
  }
}

TEST_CASE("artifact factors are verbatim slices of the parent SVD") {
  Rng rng(47);
  const Matrix w = gaussian_matrix(8, 6, rng);
  const SvdResult r = svd(w);
  const DecomposedLayer layer = decompose(w, fixed(2, 2));
  const auto blocks = partition_tail(6, 2, 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(layer.artifacts[k].u == column_block(r.u, blocks[k].begin, blocks[k].end));
    CHECK(layer.artifacts[k].v == column_block(r.v, blocks[k].begin, blocks[k].end));
    CHECK(layer.artifacts[k].s ==
          std::vector<double>(r.singular.begin() + static_cast<long>(blocks[k].begin),
                              r.singular.begin() + static_cast<long>(blocks[k].end)));
  }
}

TEST_CASE("layer serialization round-trips bit-exactly") {
  Rng rng(53);
  DecomposedLayer layer = decompose(gaussian_matrix(6, 9, rng), fixed(2, 3), 17);
  layer.artifacts[2].s[0] = -0.123456789012345678;
  std::ostringstream out;
  write_layer(out, layer);
  std::istringstream in(out.str());
  const DecomposedLayer back = read_layer(in);
  CHECK(back.layer_id == 17);
  CHECK(back.pretrained_frob_sq == layer.pretrained_frob_sq);
  CHECK(semantic_bytes(back.semantic) == semantic_bytes(layer.semantic));
  CHECK(back.semantic.weight == layer.semantic.weight);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(back.artifacts[k].u == layer.artifacts[k].u);
    CHECK(back.artifacts[k].s == layer.artifacts[k].s);
    CHECK(back.artifacts[k].v == layer.artifacts[k].v);
  }
  std::ostringstream again;
  write_layer(again, back);
  CHECK(again.str() == out.str());
}

TEST_CASE("semantic bytes ignore artifact changes") {
  Rng rng(59);
  DecomposedLayer layer = decompose(gaussian_matrix(5, 5, rng), fixed(1, 2));
  const auto before = semantic_bytes(layer.semantic);
  for (auto& a : layer.artifacts) {
    for (double& x : a.u.data()) x += 1.0;
    for (double& x : a.s) x *= 3.0;
  }
  CHECK(semantic_bytes(layer.semantic) == before);
}

}  // TEST_SUITE
