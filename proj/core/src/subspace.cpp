#include "masm/subspace.hpp"

#include <algorithm>
#include <sstream>

#include "masm/error.hpp"
#include "masm/svd.hpp"
#include "masm/tensor_io.hpp"

namespace masm {

std::vector<IndexRange> partition_tail(std::size_t total_rank, std::size_t semantic_rank,
                                       std::size_t num_artifacts) {
  if (num_artifacts == 0) {
    throw Error(ErrorCode::kRankPolicy, "number of artifact subspaces must be at least 1");
  }
  if (semantic_rank > total_rank || total_rank - semantic_rank < num_artifacts) {
    throw Error(ErrorCode::kRankPolicy,
                "cannot split " + std::to_string(total_rank) + " components into semantic rank " +
                    std::to_string(semantic_rank) + " plus " + std::to_string(num_artifacts) +
                    " artifact subspaces; adjust rank_policy to a lower semantic rank or reduce K");
  }
  const std::size_t tail = total_rank - semantic_rank;
  const std::size_t base = tail / num_artifacts;
  const std::size_t extra = tail % num_artifacts;
  std::vector<IndexRange> ranges;
  ranges.reserve(num_artifacts);
  std::size_t cursor = semantic_rank;
  for (std::size_t k = 0; k < num_artifacts; ++k) {
    const std::size_t len = base + (k < extra ? 1 : 0);
    ranges.push_back({cursor, cursor + len});
    cursor += len;
  }
  return ranges;
}

std::size_t resolve_semantic_rank(std::span<const double> singular_values,
                                  const DecompositionConfig& config) {
  const std::size_t total = singular_values.size();
  const std::size_t k = config.num_artifacts;
  if (k == 0) throw Error(ErrorCode::kRankPolicy, "K must be at least 1");
  if (total < k + 1) {
    throw Error(ErrorCode::kRankPolicy,
                "rank " + std::to_string(total) + " leaves no room for a semantic component and " +
                    std::to_string(k) + " artifact subspaces");
  }
  if (singular_values.empty() || singular_values.front() <= 0.0) {
    throw Error(ErrorCode::kRankPolicy, "all-zero spectrum cannot be decomposed");
  }

  if (const auto* fixed = std::get_if<FixedRank>(&config.rank_policy)) {
    if (fixed->r < 1 || fixed->r + k > total) {
      throw Error(ErrorCode::kRankPolicy,
                  "fixed semantic rank " + std::to_string(fixed->r) + " invalid for rank " +
                      std::to_string(total) + " with K=" + std::to_string(k) +
                      "; choose 1 <= r <= R-K");
    }
    return fixed->r;
  }

  const double tau = std::get<EnergyFraction>(config.rank_policy).tau;
  if (!(tau > 0.0 && tau <= 1.0)) {
    throw Error(ErrorCode::kRankPolicy, "energy fraction must lie in (0, 1]");
  }
  double energy = 0.0;
  for (double s : singular_values) energy += s * s;
  double cumulative = 0.0;
  std::size_t r = total;
  for (std::size_t i = 0; i < total; ++i) {
    cumulative += singular_values[i] * singular_values[i];
    if (cumulative >= tau * energy) {
      r = i + 1;
      break;
    }
  }
  return std::clamp<std::size_t>(r, 1, total - k);
}

std::size_t DecomposedLayer::total_rank() const noexcept {
  std::size_t r = semantic.rank();
  for (const auto& a : artifacts) r += a.rank();
  return r;
}

std::size_t DecomposedLayer::trainable_count() const noexcept {
  std::size_t n = 0;
  for (const auto& a : artifacts) n += a.parameter_count();
  return n;
}

DecomposedLayer decompose(const Matrix& w, const DecompositionConfig& config,
                          std::size_t layer_id) {
  const SvdResult f = svd(w);
  const std::size_t total = f.singular.size();
  const std::size_t r = resolve_semantic_rank(f.singular, config);
  const auto blocks = partition_tail(total, r, config.num_artifacts);

  DecomposedLayer layer;
  layer.layer_id = layer_id;
  layer.semantic.u = column_block(f.u, 0, r);
  layer.semantic.v = column_block(f.v, 0, r);
  layer.semantic.s.assign(f.singular.begin(), f.singular.begin() + r);
  layer.semantic.weight = scaled_outer(layer.semantic.u, layer.semantic.s, layer.semantic.v);
  for (const auto& block : blocks) {
    ArtifactSubspace a;
    a.u = column_block(f.u, block.begin, block.end);
    a.v = column_block(f.v, block.begin, block.end);
    a.s.assign(f.singular.begin() + block.begin, f.singular.begin() + block.end);
    layer.artifacts.push_back(std::move(a));
  }
  layer.pretrained_frob_sq = frobenius_sq(w);
  return layer;
}

Matrix recompose(const DecomposedLayer& layer) {
  Matrix w = layer.semantic.weight;
  if (w.rows() != layer.d_out() || w.cols() != layer.d_in()) {
    throw Error(ErrorCode::kShapeMismatch,
                "recompose: cached semantic weight " + w.shape_string() +
                    " disagrees with factor shapes");
  }
  for (const auto& a : layer.artifacts) {
    if (a.u.rows() != layer.d_out() || a.v.rows() != layer.d_in()) {
      throw Error(ErrorCode::kShapeMismatch,
                  "recompose: artifact factors " + a.u.shape_string() + "/" + a.v.shape_string() +
                      " do not match layer " + std::to_string(layer.layer_id));
    }
    axpy(w, a.product());
  }
  return w;
}

void write_layer(std::ostream& out, const DecomposedLayer& layer) {
  write_u64(out, layer.layer_id);
  write_u64(out, layer.d_out());
  write_u64(out, layer.d_in());
  write_u64(out, layer.semantic.rank());
  write_u64(out, layer.artifacts.size());
  for (const auto& a : layer.artifacts) write_u64(out, a.rank());
  write_f64(out, layer.pretrained_frob_sq);
  write_matrix(out, layer.semantic.u);
  write_vector(out, layer.semantic.s);
  write_matrix(out, layer.semantic.v);
  for (const auto& a : layer.artifacts) {
    write_matrix(out, a.u);
    write_vector(out, a.s);
    write_matrix(out, a.v);
  }
}

DecomposedLayer read_layer(std::istream& in) {
  DecomposedLayer layer;
  layer.layer_id = read_u64(in);
  const std::uint64_t d_out = read_u64(in);
  const std::uint64_t d_in = read_u64(in);
  const std::uint64_t r = read_u64(in);
  const std::uint64_t k = read_u64(in);
  if (k > d_out + d_in) throw Error(ErrorCode::kIo, "implausible artifact count in layer manifest");
  std::vector<std::uint64_t> ranks(k);
  for (auto& rk : ranks) rk = read_u64(in);
  layer.pretrained_frob_sq = read_f64(in);

  auto expect = [&](const Matrix& m, std::uint64_t rows, std::uint64_t cols, const char* what) {
    if (m.rows() != rows || m.cols() != cols) {
      throw Error(ErrorCode::kShapeMismatch, std::string("layer ") +
                                                 std::to_string(layer.layer_id) + ": " + what +
                                                 " has shape " + m.shape_string());
    }
  };
  layer.semantic.u = read_matrix(in);
  layer.semantic.s = read_vector(in);
  layer.semantic.v = read_matrix(in);
  expect(layer.semantic.u, d_out, r, "semantic U");
  expect(layer.semantic.v, d_in, r, "semantic V");
  if (layer.semantic.s.size() != r) throw Error(ErrorCode::kShapeMismatch, "semantic s length");
  layer.semantic.weight = scaled_outer(layer.semantic.u, layer.semantic.s, layer.semantic.v);
  for (std::uint64_t rk : ranks) {
    ArtifactSubspace a;
    a.u = read_matrix(in);
    a.s = read_vector(in);
    a.v = read_matrix(in);
    expect(a.u, d_out, rk, "artifact U");
    expect(a.v, d_in, rk, "artifact V");
    if (a.s.size() != rk) throw Error(ErrorCode::kShapeMismatch, "artifact s length");
    layer.artifacts.push_back(std::move(a));
  }
  return layer;
}

std::vector<std::uint8_t> semantic_bytes(const SemanticSubspace& semantic) {
  std::ostringstream out(std::ios::binary);
  write_matrix(out, semantic.u);
  write_vector(out, semantic.s);
  write_matrix(out, semantic.v);
  const std::string bytes = out.str();
  return {bytes.begin(), bytes.end()};
}

}  // namespace masm
