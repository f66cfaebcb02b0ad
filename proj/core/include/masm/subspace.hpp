#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <variant>
#include <vector>

#include "masm/matrix.hpp"

namespace masm {

// Top-r singular components of a pretrained weight. Never trained.
struct SemanticSubspace {
  Matrix u;               // d_out x r
  std::vector<double> s;  // r
  Matrix v;               // d_in x r
  Matrix weight;          // u * diag(s) * v^T, cached

  std::size_t rank() const noexcept { return s.size(); }
};

// One trainable block of tail components. s is an unconstrained real vector;
// u and v start as verbatim slices of the parent SVD factors.
struct ArtifactSubspace {
  Matrix u;               // d_out x r_k
  std::vector<double> s;  // r_k
  Matrix v;               // d_in x r_k

  std::size_t rank() const noexcept { return s.size(); }
  Matrix product() const { return scaled_outer(u, s, v); }
  std::size_t parameter_count() const noexcept { return u.size() + s.size() + v.size(); }
};

struct FixedRank {
  std::size_t r = 1;
};

// Smallest r whose leading components hold at least `tau` of the squared
// spectral energy.
struct EnergyFraction {
  double tau = 0.9;
};

using RankPolicy = std::variant<FixedRank, EnergyFraction>;

struct DecompositionConfig {
  RankPolicy rank_policy = EnergyFraction{0.9};
  std::size_t num_artifacts = 5;  // K
};

// Half-open index range [begin, end) into the descending spectrum.
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool operator==(const IndexRange&) const = default;
};

// Splits tail indices [r, R) into K contiguous blocks in spectral order, sizes
// as equal as possible, earlier blocks taking the remainder.
std::vector<IndexRange> partition_tail(std::size_t total_rank, std::size_t semantic_rank,
                                       std::size_t num_artifacts);

// Resolves the rank policy against a descending spectrum, clamping energy
// policies so that at least K tail components remain.
std::size_t resolve_semantic_rank(std::span<const double> singular_values,
                                  const DecompositionConfig& config);

struct DecomposedLayer {
  std::size_t layer_id = 0;
  SemanticSubspace semantic;
  std::vector<ArtifactSubspace> artifacts;
  double pretrained_frob_sq = 0.0;

  std::size_t d_out() const noexcept { return semantic.u.rows(); }
  std::size_t d_in() const noexcept { return semantic.v.rows(); }
  std::size_t total_rank() const noexcept;
  std::size_t trainable_count() const noexcept;
};

DecomposedLayer decompose(const Matrix& w, const DecompositionConfig& config,
                          std::size_t layer_id = 0);

// W_sem + sum_k U_k diag(s_k) V_k^T.
Matrix recompose(const DecomposedLayer& layer);

// Manifest entry (layer_id, d_out, d_in, r, K, r_1..r_K, pretrained energy)
// followed by semantic U,s,V and artifact U,s,V triples in tensor layout.
void write_layer(std::ostream& out, const DecomposedLayer& layer);
DecomposedLayer read_layer(std::istream& in);

// Byte image of the semantic factors, used to prove they never change.
std::vector<std::uint8_t> semantic_bytes(const SemanticSubspace& semantic);

}  // namespace masm
