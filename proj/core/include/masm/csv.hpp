#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace masm {

struct CsvTable {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Metric cells: fixed 6 decimals.
std::string format_metric(double value);
// Lossless cells: 17 significant digits.
std::string format_exact(double value);

// Optional leading "# config=<json>" line, then header and rows.
void write_csv(std::ostream& out, const CsvTable& table, const std::string& config_echo = {});
void save_csv(const std::string& path, const CsvTable& table, const std::string& config_echo = {});

}  // namespace masm
