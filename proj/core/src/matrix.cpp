#include "masm/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "masm/error.hpp"

namespace masm {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kNoConvergence: return "no_convergence";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kRankPolicy: return "rank_policy";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kUnreachable: return "unreachable";
  }
  return "unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::kShapeMismatch,
                "matrix data length " + std::to_string(data_.size()) + " does not match " +
                    shape_string());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) {
      throw Error(ErrorCode::kShapeMismatch, "ragged matrix initializer");
    }
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> values) {
  Matrix m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
  return m;
}

std::vector<double> Matrix::column(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

void Matrix::set_column(std::size_t c, std::span<const double> values) {
  for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = values[r];
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

namespace {

void require_shape(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw Error(ErrorCode::kShapeMismatch,
                std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                    b.shape_string());
  }
}

}  // namespace

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_shape(a.cols() == b.rows(), "matmul", a, b);
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  require_shape(a.rows() == b.rows(), "matmul_tn", a, b);
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto a_row = a.row(k);
    auto b_row = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a_row[i];
      if (aki == 0.0) continue;
      auto out_row = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aki * b_row[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  require_shape(a.cols() == b.cols(), "matmul_nt", a, b);
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

void axpy(Matrix& a, const Matrix& b, double scale) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "axpy", a, b);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) ad[i] += scale * bd[i];
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  axpy(out, b, 1.0);
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  Matrix out = a;
  axpy(out, b, -1.0);
  return out;
}

Matrix operator*(double scale, const Matrix& a) {
  Matrix out = a;
  for (double& x : out.data()) x *= scale;
  return out;
}

Matrix scaled_outer(const Matrix& u, std::span<const double> s, const Matrix& v) {
  if (u.cols() != s.size() || v.cols() != s.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "scaled_outer: factor shapes " + u.shape_string() + ", " + v.shape_string() +
                    " with " + std::to_string(s.size()) + " scales");
  }
  Matrix us = u;
  for (std::size_t r = 0; r < us.rows(); ++r)
    for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= s[c];
  return matmul_nt(us, v);
}

Matrix column_block(const Matrix& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "column_block out of range for " + a.shape_string());
  }
  Matrix out(a.rows(), end - begin);
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = a(r, c);
  return out;
}

double frobenius_sq(const Matrix& a) {
  require_finite(a, "frobenius_sq");
  double sum = 0.0;
  for (double x : a.data()) sum += x * x;
  return sum;
}

double frobenius_norm(const Matrix& a) { return std::sqrt(frobenius_sq(a)); }

double max_abs(const Matrix& a) {
  double m = 0.0;
  for (double x : a.data()) m = std::max(m, std::abs(x));
  return m;
}

bool all_finite(std::span<const double> values) noexcept {
  return std::all_of(values.begin(), values.end(), [](double x) { return std::isfinite(x); });
}

void require_finite(const Matrix& a, const char* what) {
  if (!all_finite(a.data())) {
    throw Error(ErrorCode::kNonFinite,
                std::string(what) + ": non-finite entry in " + a.shape_string() + " matrix");
  }
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

}  // namespace masm
