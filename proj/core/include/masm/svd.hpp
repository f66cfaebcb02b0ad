#pragma once

#include <vector>

#include "masm/matrix.hpp"

namespace masm {

// Thin SVD W = U diag(s) V^T with R = min(rows, cols).
struct SvdResult {
  Matrix u;                      // rows x R, orthonormal columns
  std::vector<double> singular;  // length R, descending, nonnegative
  Matrix v;                      // cols x R, orthonormal columns

  std::size_t rank_bound() const noexcept { return singular.size(); }
};

// One-sided Jacobi SVD. Each U column is sign-normalized so that its first
// nonzero entry is nonnegative (V column flipped along with it).
//
// Throws Error(kNonFinite) on NaN/Inf input and Error(kNoConvergence) if the
// rotations have not converged after 100 * min(rows, cols) sweeps.
SvdResult svd(const Matrix& w);

Matrix reconstruct(const SvdResult& result);

}  // namespace masm
