#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "masm/parameters.hpp"

namespace masm {

struct StatsConfig {
  double alpha = 0.9;         // EMA coefficient in [0, 1)
  double eps = 1e-12;         // floor on the BVG denominator
  std::size_t warmup_steps = 0;
};

// Per-layer EMA estimates of the gradient's first and second moments. The
// second moment is unrelated to singular values despite the usual sigma.
class GradientStats {
 public:
  GradientStats() = default;
  explicit GradientStats(std::span<const std::size_t> layer_sizes);

  std::size_t num_layers() const noexcept { return first_.size(); }
  std::size_t step() const noexcept { return step_; }
  const std::vector<double>& first_moment(std::size_t layer) const { return first_.at(layer); }
  const std::vector<double>& second_moment(std::size_t layer) const { return second_.at(layer); }

  friend void update_stats(GradientStats& stats, std::span<const std::vector<double>> layer_grads,
                           const StatsConfig& config);

 private:
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::size_t step_ = 0;
};

// mu <- a mu + (1-a) g, sigma <- a sigma + (1-a) g^2 for every layer, masked
// or not; increments the step.
void update_stats(GradientStats& stats, std::span<const std::vector<double>> layer_grads,
                  const StatsConfig& config);

// BVG_l = sum mu^2 / max(sum (sigma - mu^2), eps).
std::vector<double> compute_bvg(const GradientStats& stats, const StatsConfig& config);

struct LayerMask {
  std::vector<std::uint8_t> bits;
  std::size_t m = 0;

  std::size_t popcount() const noexcept;
  bool active(std::size_t layer) const { return bits.at(layer) != 0; }
  static LayerMask all(std::size_t n) { return {std::vector<std::uint8_t>(n, 1), n}; }
};

// All layers while t <= warmup_steps; afterwards the min(m, n) largest
// scores, ties to the lower layer index.
LayerMask build_mask(std::span<const double> bvg, std::size_t m, std::size_t t,
                     const StatsConfig& config);

enum class OptimizerMode { kPlain, kAdaptive };

struct OptimizerConfig {
  OptimizerMode mode = OptimizerMode::kAdaptive;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adaptive moments live per parameter group. Each group keeps its own step
// count, which only advances when the group is actually updated.
class OptimizerState {
 public:
  OptimizerState() = default;
  OptimizerState(const OptimizerConfig& config, std::span<const std::size_t> group_sizes);

  const OptimizerConfig& config() const noexcept { return config_; }
  bool has_moments() const noexcept { return !first_.empty(); }
  const std::vector<double>& first_moment(std::size_t group) const { return first_.at(group); }
  const std::vector<double>& second_moment(std::size_t group) const { return second_.at(group); }
  std::size_t group_steps(std::size_t group) const { return steps_.at(group); }

  friend void apply_update(std::vector<ParameterGroup>& params, const GroupGradients& grads,
                           const LayerMask& mask, OptimizerState& opt);

 private:
  OptimizerConfig config_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::vector<std::size_t> steps_;
};

// theta <- theta + M d for groups tied to a layer; unmasked groups (the head)
// always move. Masked groups keep parameters and moments bit-identical.
// Throws Error(kNonFinite) if an update would produce a non-finite value.
void apply_update(std::vector<ParameterGroup>& params, const GroupGradients& grads,
                  const LayerMask& mask, OptimizerState& opt);

}  // namespace masm
