#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "masm/error.hpp"
#include "masm/rng.hpp"
#include "masm/slm.hpp"
#include "oracles.hpp"

using namespace masm;

namespace {

struct Params {
  std::vector<std::vector<double>> storage;
  std::vector<ParameterGroup> groups;

  // Groups 0..n_layers-1 are maskable layers; the last one is the head.
  Params(std::vector<std::vector<double>> values, std::size_t n_layers) : storage(std::move(values)) {
    for (std::size_t i = 0; i < storage.size(); ++i) {
      ParameterGroup g;
      g.name = i < n_layers ? "layer" + std::to_string(i) : "head";
      if (i < n_layers) g.layer = i;
      g.slices.push_back(storage[i]);
      groups.push_back(std::move(g));
    }
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s;
    for (const auto& g : groups) s.push_back(g.size());
    return s;
  }
};

LayerMask mask_of(std::vector<std::uint8_t> bits) {
  LayerMask m;
  m.m = static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1));
  m.bits = std::move(bits);
  return m;
}

// Stable descending order, ties to lower index.
std::vector<std::uint8_t> top_m_oracle(const std::vector<double>& scores, std::size_t m) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::uint8_t> bits(scores.size(), 0);
  for (std::size_t i = 0; i < std::min(m, scores.size()); ++i) bits[order[i]] = 1;
  return bits;
}

}  // namespace

TEST_SUITE("slm") {

TEST_CASE("EMA recursion and BVG for the two-step hand example") {
  const std::vector<std::size_t> sizes{2};
  GradientStats stats(sizes);
  StatsConfig cfg;
  cfg.alpha = 0.5;
  const std::vector<std::vector<double>> g{{1.0, 0.0}};

  update_stats(stats, g, cfg);
  CHECK(stats.step() == 1);
  CHECK(stats.first_moment(0) == std::vector<double>{0.5, 0.0});
  CHECK(stats.second_moment(0) == std::vector<double>{0.5, 0.0});
  CHECK(std::abs(compute_bvg(stats, cfg)[0] - 1.0) <= 1e-12);

  update_stats(stats, g, cfg);
  CHECK(stats.first_moment(0) == std::vector<double>{0.75, 0.0});
  CHECK(stats.second_moment(0) == std::vector<double>{0.75, 0.0});
  CHECK(std::abs(compute_bvg(stats, cfg)[0] - 3.0) <= 1e-12);
}

TEST_CASE("zero gradients keep zero moments and BVG 0") {
  const std::vector<std::size_t> sizes{3, 1};
  GradientStats stats(sizes);
  const StatsConfig cfg;
  const std::vector<std::vector<double>> g{{0.0, 0.0, 0.0}, {0.0}};
  for (int i = 0; i < 10; ++i) update_stats(stats, g, cfg);
  for (std::size_t l = 0; l < 2; ++l) {
    for (double x : stats.first_moment(l)) CHECK(x == 0.0);
    for (double x : stats.second_moment(l)) CHECK(x == 0.0);
  }
  CHECK(compute_bvg(stats, cfg) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("EMA matches an independent recursion over random gradients") {
  const std::vector<std::size_t> sizes{4, 2};
  GradientStats stats(sizes);
  StatsConfig cfg;
  cfg.alpha = 0.8;
  Rng rng(3);
  std::vector<std::vector<double>> mu{{0, 0, 0, 0}, {0, 0}};
  std::vector<std::vector<double>> sigma = mu;
  for (int t = 0; t < 25; ++t) {
    std::vector<std::vector<double>> g{{}, {}};
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t i = 0; i < sizes[l]; ++i) {
        const double x = rng.normal();
        g[l].push_back(x);
        mu[l][i] = 0.8 * mu[l][i] + 0.2 * x;
        sigma[l][i] = 0.8 * sigma[l][i] + 0.2 * x * x;
      }
    update_stats(stats, g, cfg);
  }
  const auto bvg = compute_bvg(stats, cfg);
  for (std::size_t l = 0; l < 2; ++l) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < sizes[l]; ++i) {
      CHECK(stats.first_moment(l)[i] == doctest::Approx(mu[l][i]).epsilon(1e-14));
      CHECK(stats.second_moment(l)[i] == doctest::Approx(sigma[l][i]).epsilon(1e-14));
      num += mu[l][i] * mu[l][i];
      den += sigma[l][i] - mu[l][i] * mu[l][i];
    }
    CHECK(bvg[l] == doctest::Approx(num / std::max(den, 1e-12)).epsilon(1e-12));
  }
}

TEST_CASE("update_stats rejects shape mismatches and non-finite gradients") {
  const std::vector<std::size_t> sizes{2};
  GradientStats stats(sizes);
  const StatsConfig cfg;
  CHECK_THROWS_AS(update_stats(stats, std::vector<std::vector<double>>{{1.0}}, cfg), Error);
  CHECK_THROWS_AS(update_stats(stats, std::vector<std::vector<double>>{{1.0, 0.0}, {1.0}}, cfg),
                  Error);
  CHECK_THROWS_AS(
      update_stats(stats,
                   std::vector<std::vector<double>>{{std::numeric_limits<double>::infinity(), 0.0}},
                   cfg),
      Error);
  CHECK(stats.step() == 0);
}

TEST_CASE("build_mask examples") {
  const StatsConfig cfg;
  CHECK(build_mask(std::vector{3.0, 1.0, 2.0}, 2, 1, cfg).bits == std::vector<std::uint8_t>{1, 0, 1});
  CHECK(build_mask(std::vector{1.0, 1.0, 1.0}, 1, 1, cfg).bits == std::vector<std::uint8_t>{1, 0, 0});
  CHECK(build_mask(std::vector{1.0, 5.0}, 2, 1, cfg).bits == std::vector<std::uint8_t>{1, 1});
  CHECK(build_mask(std::vector{1.0, 5.0}, 7, 1, cfg).bits == std::vector<std::uint8_t>{1, 1});
}

TEST_CASE("build_mask keeps every layer active through warmup") {
  StatsConfig cfg;
  cfg.warmup_steps = 3;
  const std::vector<double> scores{0.1, 0.9, 0.5, 0.2};
  for (std::size_t t = 1; t <= 3; ++t) CHECK(build_mask(scores, 1, t, cfg).popcount() == 4);
  CHECK(build_mask(scores, 1, 4, cfg).bits == std::vector<std::uint8_t>{0, 1, 0, 0});
}

TEST_CASE("build_mask property: cardinality min(m, n) and top-m with ties to the lower index") {
  Rng rng(5);
  const StatsConfig cfg;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng.index(30);
    const std::size_t m = rng.index(40);
    std::vector<double> scores(n);
    for (double& s : scores) s = static_cast<double>(rng.index(5));  // many ties
    const LayerMask mask = build_mask(scores, m, 1, cfg);
    CHECK(mask.popcount() == std::min(m, n));
    CHECK(mask.bits == top_m_oracle(scores, m));
  }
}

TEST_CASE("plain mode: one gradient step") {
  Params p({{1.0}, {0.0}}, 1);
  OptimizerConfig oc;
  oc.mode = OptimizerMode::kPlain;
  oc.lr = 0.1;
  OptimizerState opt(oc, p.sizes());
  CHECK_FALSE(opt.has_moments());
  apply_update(p.groups, {{0.5}, {0.0}}, mask_of({1}), opt);
  CHECK(p.storage[0][0] == doctest::Approx(0.95).epsilon(1e-15));
}

TEST_CASE("adaptive mode: first step matches an independent reference") {
  Params p({{1.0, -2.0}, {0.3}}, 1);
  OptimizerConfig oc;
  oc.lr = 2e-4;
  OptimizerState opt(oc, p.sizes());
  CHECK(opt.has_moments());
  apply_update(p.groups, {{0.5, -1e-3}, {2.0}}, mask_of({1}), opt);
  CHECK(p.storage[0][0] == doctest::Approx(oracle::adam_first_step(1.0, 0.5, 2e-4)).epsilon(1e-15));
  CHECK(p.storage[0][1] ==
        doctest::Approx(oracle::adam_first_step(-2.0, -1e-3, 2e-4)).epsilon(1e-15));
  CHECK(p.storage[1][0] == doctest::Approx(oracle::adam_first_step(0.3, 2.0, 2e-4)).epsilon(1e-15));
  CHECK(1.0 - p.storage[0][0] == doctest::Approx(2e-4).epsilon(1e-7));
}

TEST_CASE("masked groups keep parameters and moments bit-identical; the head always moves") {
  Params p({{1.0, 2.0}, {3.0}, {4.0}}, 2);
  OptimizerState opt(OptimizerConfig{}, p.sizes());
  const GroupGradients g{{0.1, -0.2}, {0.3}, {0.4}};
  apply_update(p.groups, g, mask_of({1, 1}), opt);
  const auto layer1 = p.storage[1];
  const auto m1 = opt.first_moment(1);
  const auto v1 = opt.second_moment(1);
  for (int i = 0; i < 5; ++i) apply_update(p.groups, g, mask_of({1, 0}), opt);
  CHECK(p.storage[1] == layer1);
  CHECK(opt.first_moment(1) == m1);
  CHECK(opt.second_moment(1) == v1);
  CHECK(opt.group_steps(0) == 6);
  CHECK(opt.group_steps(1) == 1);
  CHECK(opt.group_steps(2) == 6);

  SUBCASE("all layers masked: only the head changes") {
    const auto before = p.storage;
    apply_update(p.groups, g, mask_of({0, 0}), opt);
    CHECK(p.storage[0] == before[0]);
    CHECK(p.storage[1] == before[1]);
    CHECK(p.storage[2] != before[2]);
  }
}

TEST_CASE("a masked layer resumes with its own bias correction") {
  Params a({{1.0}, {0.0}}, 1);
  Params b({{1.0}, {0.0}}, 1);
  OptimizerState oa(OptimizerConfig{}, a.sizes());
  OptimizerState ob(OptimizerConfig{}, b.sizes());
  // b sits masked for three steps before its first update
  for (int i = 0; i < 3; ++i) apply_update(b.groups, {{0.5}, {0.0}}, mask_of({0}), ob);
  apply_update(a.groups, {{0.5}, {0.0}}, mask_of({1}), oa);
  apply_update(b.groups, {{0.5}, {0.0}}, mask_of({1}), ob);
  CHECK(a.storage[0] == b.storage[0]);
}

TEST_CASE("non-finite updates are rejected before anything changes") {
  Params p({{1.0}, {2.0}}, 1);
  OptimizerConfig oc;
  oc.mode = OptimizerMode::kPlain;
  OptimizerState opt(oc, p.sizes());
  const auto before = p.storage;
  CHECK_THROWS_AS(apply_update(p.groups, {{1.0}, {std::numeric_limits<double>::quiet_NaN()}},
                               mask_of({1}), opt),
                  Error);
  CHECK(p.storage == before);
  CHECK_THROWS_AS(apply_update(p.groups, {{1.0}}, mask_of({1}), opt), Error);
  CHECK_THROWS_AS(apply_update(p.groups, {{1.0, 2.0}, {1.0}}, mask_of({1}), opt), Error);
}

}  // TEST_SUITE
