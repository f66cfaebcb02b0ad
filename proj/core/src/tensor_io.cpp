#include "masm/tensor_io.hpp"

#include <bit>
#include <istream>
#include <ostream>

#include "masm/error.hpp"

namespace masm {

namespace {

constexpr std::uint64_t kMaxDimension = 1u << 20;

void put_le(std::ostream& out, std::uint64_t bits) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
  if (!out) throw Error(ErrorCode::kIo, "write failed");
}

std::uint64_t get_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (in.gcount() != 8) throw Error(ErrorCode::kIo, "unexpected end of binary stream");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return bits;
}

}  // namespace

void write_u64(std::ostream& out, std::uint64_t value) { put_le(out, value); }
std::uint64_t read_u64(std::istream& in) { return get_le(in); }
void write_f64(std::ostream& out, double value) { put_le(out, std::bit_cast<std::uint64_t>(value)); }
double read_f64(std::istream& in) { return std::bit_cast<double>(get_le(in)); }

void write_matrix(std::ostream& out, const Matrix& m) {
  write_u64(out, m.rows());
  write_u64(out, m.cols());
  for (double x : m.data()) write_f64(out, x);
}

Matrix read_matrix(std::istream& in) {
  const std::uint64_t rows = read_u64(in);
  const std::uint64_t cols = read_u64(in);
  if (rows > kMaxDimension || cols > kMaxDimension) {
    throw Error(ErrorCode::kIo, "implausible matrix header " + std::to_string(rows) + "x" +
                                    std::to_string(cols));
  }
  std::vector<double> data(rows * cols);
  for (double& x : data) x = read_f64(in);
  return Matrix(rows, cols, std::move(data));
}

void write_vector(std::ostream& out, std::span<const double> values) {
  write_u64(out, values.size());
  write_u64(out, 1);
  for (double x : values) write_f64(out, x);
}

std::vector<double> read_vector(std::istream& in) {
  Matrix m = read_matrix(in);
  if (m.cols() != 1) throw Error(ErrorCode::kIo, "expected a column vector, got " + m.shape_string());
  auto d = m.data();
  return {d.begin(), d.end()};
}

}  // namespace masm
