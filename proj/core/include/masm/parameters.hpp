#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace masm {

// A named, flattened view over some of a model's trainable storage. Groups
// with a `layer` index are subject to layer masking; the rest (the head) are
// always updated.
struct ParameterGroup {
  std::string name;
  std::optional<std::size_t> layer;
  std::vector<std::span<double>> slices;

  std::size_t size() const noexcept {
    std::size_t n = 0;
    for (const auto& s : slices) n += s.size();
    return n;
  }
  double& at(std::size_t flat_index);
};

inline double& ParameterGroup::at(std::size_t flat_index) {
  for (auto& s : slices) {
    if (flat_index < s.size()) return s[flat_index];
    flat_index -= s.size();
  }
  return slices.back().back();  // unreachable for in-range indices
}

// One flat gradient vector per ParameterGroup, in the same order.
using GroupGradients = std::vector<std::vector<double>>;

}  // namespace masm
