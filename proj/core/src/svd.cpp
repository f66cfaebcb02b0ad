#include "masm/svd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "masm/error.hpp"

namespace masm {

namespace {

// Column-major scratch: column j occupies [j*m, (j+1)*m).
struct Columns {
  std::size_t m;
  std::size_t n;
  std::vector<double> data;

  double* col(std::size_t j) { return data.data() + j * m; }
  const double* col(std::size_t j) const { return data.data() + j * m; }
};

Columns to_columns(const Matrix& a) {
  Columns c{a.rows(), a.cols(), std::vector<double>(a.size())};
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t j = 0; j < a.cols(); ++j) c.data[j * a.rows() + r] = a(r, j);
  return c;
}

double col_dot(const double* x, const double* y, std::size_t m) {
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) s += x[i] * y[i];
  return s;
}

void rotate(double* x, double* y, std::size_t m, double c, double s) {
  for (std::size_t i = 0; i < m; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

// Hestenes one-sided Jacobi on a tall matrix (rows >= cols).
SvdResult jacobi_tall(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Columns work = to_columns(a);
  Columns v{n, n, std::vector<double>(n * n, 0.0)};
  for (std::size_t j = 0; j < n; ++j) v.col(j)[j] = 1.0;

  constexpr double kTol = std::numeric_limits<double>::epsilon();
  const std::size_t max_sweeps = 100 * n;
  bool converged = n < 2;
  for (std::size_t sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* ap = work.col(p);
        double* aq = work.col(q);
        const double alpha = col_dot(ap, ap, m);
        const double beta = col_dot(aq, aq, m);
        const double gamma = col_dot(ap, aq, m);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::hypot(1.0, t);
        const double s = c * t;
        rotate(ap, aq, m, c, s);
        rotate(v.col(p), v.col(q), n, c, s);
      }
    }
    converged = !rotated;
  }
  if (!converged) {
    throw Error(ErrorCode::kNoConvergence,
                "svd: no convergence after " + std::to_string(max_sweeps) + " sweeps for " +
                    a.shape_string() + " matrix");
  }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = std::sqrt(col_dot(work.col(j), work.col(j), m));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  SvdResult out{Matrix(m, n), std::vector<double>(n), Matrix(n, n)};
  const double sigma_max = n ? norms[order[0]] : 0.0;
  const double null_floor = sigma_max * static_cast<double>(m) * kTol;
  std::vector<std::size_t> null_columns;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.singular[k] = norms[j];
    for (std::size_t i = 0; i < n; ++i) out.v(i, k) = v.col(j)[i];
    if (norms[j] > null_floor && norms[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) out.u(i, k) = work.col(j)[i] / norms[j];
    } else {
      null_columns.push_back(k);
    }
  }

  // Numerically null directions carry no information; complete U with an
  // orthonormal basis so its columns stay orthonormal.
  std::size_t candidate = 0;
  for (std::size_t k : null_columns) {
    std::vector<double> e(m);
    for (; candidate < m; ++candidate) {
      std::fill(e.begin(), e.end(), 0.0);
      e[candidate] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < n; ++c) {
          // Unfilled null columns are still zero and project to nothing.
          if (c == k) continue;
          double proj = 0.0;
          for (std::size_t i = 0; i < m; ++i) proj += out.u(i, c) * e[i];
          for (std::size_t i = 0; i < m; ++i) e[i] -= proj * out.u(i, c);
        }
      }
      const double norm = std::sqrt(col_dot(e.data(), e.data(), m));
      if (norm > 0.5) {
        for (std::size_t i = 0; i < m; ++i) out.u(i, k) = e[i] / norm;
        ++candidate;
        break;
      }
    }
  }
  return out;
}

void normalize_signs(SvdResult& r) {
  constexpr double kZero = 1e-12;
  for (std::size_t k = 0; k < r.singular.size(); ++k) {
    for (std::size_t i = 0; i < r.u.rows(); ++i) {
      const double x = r.u(i, k);
      if (std::abs(x) <= kZero) continue;
      if (x < 0.0) {
        for (std::size_t t = 0; t < r.u.rows(); ++t) r.u(t, k) = -r.u(t, k);
        for (std::size_t t = 0; t < r.v.rows(); ++t) r.v(t, k) = -r.v(t, k);
      }
      break;
    }
  }
}

}  // namespace

SvdResult svd(const Matrix& w) {
  if (w.rows() == 0 || w.cols() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "svd: empty matrix " + w.shape_string());
  }
  if (!all_finite(w.data())) {
    throw Error(ErrorCode::kNonFinite, "svd: non-finite entry in " + w.shape_string() + " matrix");
  }
  SvdResult result;
  if (w.rows() >= w.cols()) {
    result = jacobi_tall(w);
  } else {
    SvdResult t = jacobi_tall(transpose(w));
    result = SvdResult{std::move(t.v), std::move(t.singular), std::move(t.u)};
  }
  normalize_signs(result);
  return result;
}

Matrix reconstruct(const SvdResult& result) {
  return scaled_outer(result.u, result.singular, result.v);
}

}  // namespace masm
