#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "masm/matrix.hpp"

namespace masm {

// Binary layout: u64 rows, u64 cols, then rows*cols f64, all little-endian,
// row-major.
void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in);

void write_u64(std::ostream& out, std::uint64_t value);
std::uint64_t read_u64(std::istream& in);
void write_f64(std::ostream& out, double value);
double read_f64(std::istream& in);

// Vectors travel as n x 1 matrices.
void write_vector(std::ostream& out, std::span<const double> values);
std::vector<double> read_vector(std::istream& in);

}  // namespace masm
