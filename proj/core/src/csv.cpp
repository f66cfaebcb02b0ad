#include "masm/csv.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

#include "masm/error.hpp"

namespace masm {

std::string format_metric(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  return buf;
}

std::string format_exact(double value) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

namespace {

void write_row(std::ostream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out << ',';
    out << cells[i];
  }
  out << '\n';
}

}  // namespace

void write_csv(std::ostream& out, const CsvTable& table, const std::string& config_echo) {
  if (!config_echo.empty()) out << "# config=" << config_echo << '\n';
  write_row(out, table.header);
  for (const auto& row : table.rows) write_row(out, row);
}

void save_csv(const std::string& path, const CsvTable& table, const std::string& config_echo) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  write_csv(out, table, config_echo);
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path);
}

}  // namespace masm
