#include "masm/slm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "masm/error.hpp"
#include "masm/matrix.hpp"

namespace masm {

GradientStats::GradientStats(std::span<const std::size_t> layer_sizes) {
  for (std::size_t n : layer_sizes) {
    first_.emplace_back(n, 0.0);
    second_.emplace_back(n, 0.0);
  }
}

void update_stats(GradientStats& stats, std::span<const std::vector<double>> layer_grads,
                  const StatsConfig& config) {
  if (!(config.alpha >= 0.0 && config.alpha < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "EMA alpha must lie in [0, 1)");
  }
  if (layer_grads.size() != stats.first_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "gradient stats expect " +
                                               std::to_string(stats.first_.size()) +
                                               " layers, got " + std::to_string(layer_grads.size()));
  }
  for (std::size_t l = 0; l < layer_grads.size(); ++l) {
    const auto& g = layer_grads[l];
    if (g.size() != stats.first_[l].size()) {
      throw Error(ErrorCode::kShapeMismatch,
                  "layer " + std::to_string(l) + " gradient length " + std::to_string(g.size()) +
                      " != " + std::to_string(stats.first_[l].size()));
    }
    if (!all_finite(g)) {
      throw Error(ErrorCode::kNonFinite, "non-finite gradient for layer " + std::to_string(l));
    }
  }
  const double a = config.alpha;
  for (std::size_t l = 0; l < layer_grads.size(); ++l) {
    const auto& g = layer_grads[l];
    auto& mu = stats.first_[l];
    auto& sigma = stats.second_[l];
    for (std::size_t i = 0; i < g.size(); ++i) {
      mu[i] = a * mu[i] + (1.0 - a) * g[i];
      sigma[i] = a * sigma[i] + (1.0 - a) * g[i] * g[i];
    }
  }
  ++stats.step_;
}

std::vector<double> compute_bvg(const GradientStats& stats, const StatsConfig& config) {
  std::vector<double> out(stats.num_layers());
  for (std::size_t l = 0; l < out.size(); ++l) {
    const auto& mu = stats.first_moment(l);
    const auto& sigma = stats.second_moment(l);
    double bias = 0.0;
    double variance = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
      bias += mu[i] * mu[i];
      variance += sigma[i] - mu[i] * mu[i];
    }
    out[l] = bias / std::max(variance, config.eps);
  }
  return out;
}

std::size_t LayerMask::popcount() const noexcept {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

LayerMask build_mask(std::span<const double> bvg, std::size_t m, std::size_t t,
                     const StatsConfig& config) {
  const std::size_t n = bvg.size();
  LayerMask mask{std::vector<std::uint8_t>(n, 0), m};
  if (t <= config.warmup_steps || m >= n) {
    std::fill(mask.bits.begin(), mask.bits.end(), std::uint8_t{1});
    return mask;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return bvg[a] > bvg[b]; });
  for (std::size_t i = 0; i < m; ++i) mask.bits[order[i]] = 1;
  return mask;
}

OptimizerState::OptimizerState(const OptimizerConfig& config,
                               std::span<const std::size_t> group_sizes)
    : config_(config), steps_(group_sizes.size(), 0) {
  if (!(config.lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be > 0");
  if (config.mode == OptimizerMode::kAdaptive) {
    for (std::size_t n : group_sizes) {
      first_.emplace_back(n, 0.0);
      second_.emplace_back(n, 0.0);
    }
  }
}

void apply_update(std::vector<ParameterGroup>& params, const GroupGradients& grads,
                  const LayerMask& mask, OptimizerState& opt) {
  if (params.size() != grads.size() || params.size() != opt.steps_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "parameter, gradient and optimizer groups disagree");
  }
  const OptimizerConfig& cfg = opt.config_;
  struct Pending {
    std::size_t group;
    std::vector<double> step;
    std::vector<double> m_next;
    std::vector<double> v_next;
  };
  // Every step is computed before any state changes, so a failure anywhere
  // leaves parameters and moments untouched.
  std::vector<Pending> pending;
  for (std::size_t gi = 0; gi < params.size(); ++gi) {
    const ParameterGroup& group = params[gi];
    if (group.layer) {
      if (*group.layer >= mask.bits.size()) {
        throw Error(ErrorCode::kShapeMismatch, "mask has no bit for layer of " + group.name);
      }
      if (!mask.active(*group.layer)) continue;
    }
    const auto& g = grads[gi];
    if (g.size() != group.size()) {
      throw Error(ErrorCode::kShapeMismatch, "gradient length mismatch for " + group.name);
    }
    Pending p{gi, std::vector<double>(g.size()), {}, {}};
    const std::size_t t = opt.steps_[gi] + 1;
    if (cfg.mode == OptimizerMode::kPlain) {
      for (std::size_t i = 0; i < g.size(); ++i) p.step[i] = -cfg.lr * g[i];
    } else {
      p.m_next = opt.first_[gi];
      p.v_next = opt.second_[gi];
      const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
      for (std::size_t i = 0; i < g.size(); ++i) {
        p.m_next[i] = cfg.beta1 * p.m_next[i] + (1.0 - cfg.beta1) * g[i];
        p.v_next[i] = cfg.beta2 * p.v_next[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        p.step[i] = -cfg.lr * (p.m_next[i] / c1) / (std::sqrt(p.v_next[i] / c2) + cfg.eps);
      }
    }
    if (!all_finite(p.step)) {
      throw Error(ErrorCode::kNonFinite, "non-finite update for parameter group " + group.name);
    }
    pending.push_back(std::move(p));
  }
  for (Pending& p : pending) {
    std::size_t i = 0;
    for (auto& slice : params[p.group].slices)
      for (double& theta : slice) theta += p.step[i++];
    if (cfg.mode == OptimizerMode::kAdaptive) {
      opt.first_[p.group] = std::move(p.m_next);
      opt.second_[p.group] = std::move(p.v_next);
    }
    ++opt.steps_[p.group];
  }
}

}  // namespace masm
