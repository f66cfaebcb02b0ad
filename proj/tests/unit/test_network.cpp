#include <doctest.h>

#include <cmath>
#include <string>

#include "fixtures.hpp"
#include "masm/error.hpp"
#include "masm/network.hpp"
#include "oracles.hpp"

using namespace masm;
using fixture::random_batch;
using fixture::tiny_binary_model;
using fixture::tiny_model_config;

namespace {

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("decomposable layer count is 4 per block") {
  ModelConfig c;
  CHECK(c.n_decomposable() == 24);
  const Model m = tiny_binary_model(1);
  CHECK(m.decomposed_layers().size() == 8);
  for (std::size_t i = 0; i < 8; ++i) CHECK(m.decomposed_layers()[i]->layer_id == i);
}

TEST_CASE("all-zero head gives p = 0.5") {
  Model m = tiny_binary_model(3);
  m.head = Matrix(1, m.config.d_model + 1);
  Rng rng(4);
  const ForwardResult r = forward(m, random_batch(m.config, 5, rng));
  for (double p : r.probabilities) CHECK(p == 0.5);
}

TEST_CASE("duplicate samples score identically") {
  const Model m = tiny_binary_model(5);
  Rng rng(6);
  TrainBatch b = random_batch(m.config, 3, rng);
  b.inputs.push_back(b.inputs[1]);
  b.labels.push_back(b.labels[1]);
  b.clip_ids.push_back(9);
  const ForwardResult r = forward(m, b);
  CHECK(r.probabilities[3] == r.probabilities[1]);
}

TEST_CASE("forward matches an independent straight-line evaluation") {
  SUBCASE("decomposed binary model, seed 42") {
    const Model m = tiny_binary_model(42);
    Rng rng(42);
    const TrainBatch b = random_batch(m.config, 4, rng);
    CHECK(max_diff(forward(m, b).probabilities, oracle::reference_forward(m, b)) <= 1e-12);
  }
  SUBCASE("dense multi-class model") {
    Rng rng(43);
    const Model m = init_model(tiny_model_config(), rng);
    const TrainBatch b = random_batch(m.config, 4, rng, false);
    const ForwardResult r = forward(m, b);
    CHECK(r.n_outputs == 3);
    CHECK(max_diff(r.probabilities, oracle::reference_forward(m, b)) <= 1e-12);
    for (std::size_t i = 0; i < 4; ++i) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 3; ++c) sum += r.probabilities[i * 3 + c];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
}

TEST_CASE("decomposition at init leaves the forward pass unchanged") {
  Rng rng(44);
  Model dense = init_model(tiny_model_config(), rng);
  reset_binary_head(dense, rng);
  Model decomposed = dense;
  decompose_attention(decomposed, dense.config.decomposition);
  const TrainBatch b = random_batch(dense.config, 4, rng);
  CHECK(max_diff(forward(dense, b).probabilities, forward(decomposed, b).probabilities) <= 1e-10);
}

TEST_CASE("forward rejects malformed batches and non-finite activations") {
  Model m = tiny_binary_model(7);
  Rng rng(8);
  TrainBatch b = random_batch(m.config, 2, rng);
  SUBCASE("empty") { CHECK_THROWS_AS(forward(m, TrainBatch{}), Error); }
  SUBCASE("wrong token count") {
    b.inputs[0] = Matrix(3, m.config.d_model);
    CHECK_THROWS_AS(forward(m, b), Error);
  }
  SUBCASE("label out of range") {
    b.labels[0] = 2;
    CHECK_THROWS_AS(forward(m, b), Error);
  }
  SUBCASE("overflowing weights name the block") {
    m.blocks[1].mlp_out = Matrix(m.config.d_model, m.config.d_hidden, 1e308);
    try {
      forward(m, b);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kNonFinite);
      CHECK(std::string(e.what()).find("block 1") != std::string::npos);
    }
  }
}

TEST_CASE("parameter groups: fine-tuning exposes artifact factors per layer plus the head") {
  Model m = tiny_binary_model(9);
  const auto groups = parameter_groups(m, TrainScope::kArtifacts);
  REQUIRE(groups.size() == 9);
  for (std::size_t l = 0; l < 8; ++l) {
    CHECK(groups[l].layer == l);
    CHECK(groups[l].size() == m.decomposed_layers()[l]->trainable_count());
  }
  CHECK(groups[8].name == "head");
  CHECK_FALSE(groups[8].layer.has_value());
  CHECK(groups[8].size() == m.config.d_model + 1);
  CHECK_THROWS_AS(parameter_groups(m, TrainScope::kFull), Error);
  CHECK_THROWS_AS(parameter_groups(m, TrainScope::kAttentionDense), Error);
}

TEST_CASE("analytic gradients match central differences on the tiny model") {
  const LossWeights w{1.0, 1.0};
  SUBCASE("artifact factors and head, full objective") {
    Model m = tiny_binary_model(11);
    Rng rng(12);
    const TrainBatch b = random_batch(m.config, 4, rng);
    const GradCheckReport r = grad_check(m, b, w, TrainScope::kArtifacts, 1e-5, 1e-5);
    CAPTURE(r.worst_group);
    CAPTURE(r.max_rel_error);
    CHECK(r.passed);
    CHECK(r.coordinates > 0);
  }
  SUBCASE("dense attention fine-tuning") {
    Rng rng(13);
    Model m = init_model(tiny_model_config(), rng);
    reset_binary_head(m, rng, 0.5);
    const TrainBatch b = random_batch(m.config, 4, rng);
    const GradCheckReport r = grad_check(m, b, w, TrainScope::kAttentionDense, 1e-5, 1e-5);
    CAPTURE(r.worst_group);
    CHECK(r.passed);
  }
  SUBCASE("pretraining, every parameter, multi-class") {
    Rng rng(14);
    Model m = init_model(tiny_model_config(), rng);
    const TrainBatch b = random_batch(m.config, 3, rng, false);
    const GradCheckReport r = grad_check(m, b, w, TrainScope::kFull, 1e-5, 1e-5);
    CAPTURE(r.worst_group);
    CAPTURE(r.max_rel_error);
    CHECK(r.passed);
  }
}

TEST_CASE("grad_check restores the model bit-exactly") {
  Model m = tiny_binary_model(15);
  const Model before = m;
  Rng rng(16);
  const TrainBatch b = random_batch(m.config, 2, rng);
  grad_check(m, b, {}, TrainScope::kArtifacts, 1e-5, 1e-5);
  CHECK(m.head == before.head);
  for (std::size_t l = 0; l < 8; ++l) {
    const auto& x = m.decomposed_layers()[l]->artifacts;
    const auto& y = before.decomposed_layers()[l]->artifacts;
    for (std::size_t k = 0; k < x.size(); ++k) {
      CHECK(x[k].u == y[k].u);
      CHECK(x[k].s == y[k].s);
      CHECK(x[k].v == y[k].v);
    }
  }
}

TEST_CASE("grad_check flags a corrupted coordinate") {
  Model m = tiny_binary_model(17);
  Rng rng(18);
  const TrainBatch b = random_batch(m.config, 4, rng);
  Gradients g = backward(m, b, {}, TrainScope::kArtifacts);
  // pick a coordinate with a clearly nonzero gradient in group 5
  std::size_t idx = 0;
  for (std::size_t i = 0; i < g.groups[5].size(); ++i)
    if (std::abs(g.groups[5][i]) > std::abs(g.groups[5][idx])) idx = i;
  g.groups[5][idx] *= 2.0;
  const GradCheckReport r = grad_check(m, b, {}, TrainScope::kArtifacts, g.groups, 1e-5, 1e-5);
  CHECK_FALSE(r.passed);
  CHECK(r.worst_group == "block1.k");
  CHECK(r.worst_index == idx);
  CHECK(r.max_rel_error == doctest::Approx(0.5).epsilon(1e-3));
}

TEST_CASE("grad_check warns about a large step") {
  Model m = tiny_binary_model(19);
  Rng rng(20);
  const TrainBatch b = random_batch(m.config, 2, rng);
  const GradCheckReport r = grad_check(m, b, {}, TrainScope::kArtifacts, 1e-1, 1e-5);
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("truncation") != std::string::npos);
  CHECK_THROWS_AS(grad_check(m, b, {}, TrainScope::kArtifacts, 0.0, 1e-5), Error);
}

TEST_CASE("zero learning signal at init gives zero gradients") {
  Model m = tiny_binary_model(21, false);
  const std::size_t d = m.config.d_model;
  m.head = Matrix(1, d + 1);
  m.head(0, d) = 800.0;  // sigmoid saturates to exactly 1
  Rng rng(22);
  TrainBatch b = random_batch(m.config, 3, rng);
  for (int& y : b.labels) y = 1;
  const Gradients g = backward(m, b, {}, TrainScope::kArtifacts);
  for (const auto& group : g.groups)
    for (double x : group) CHECK(std::abs(x) <= 1e-12);
}

TEST_CASE("regularizer gradients vanish at init, so only cls drives the factors") {
  Model m = tiny_binary_model(23, false);
  Rng rng(24);
  const TrainBatch b = random_batch(m.config, 4, rng);
  const Gradients with = backward(m, b, {1.0, 1.0}, TrainScope::kArtifacts);
  const Gradients without = backward(m, b, {0.0, 0.0}, TrainScope::kArtifacts);
  for (std::size_t gi = 0; gi < with.groups.size(); ++gi)
    CHECK(max_diff(with.groups[gi], without.groups[gi]) <= 1e-12);
  CHECK(with.loss.total == doctest::Approx(with.loss.cls).epsilon(1e-9));
}

TEST_CASE("forward and backward are deterministic") {
  const Model a = tiny_binary_model(25);
  const Model b = tiny_binary_model(25);
  Rng r1(26);
  Rng r2(26);
  const TrainBatch x = random_batch(a.config, 4, r1);
  const TrainBatch y = random_batch(b.config, 4, r2);
  CHECK(forward(a, x).probabilities == forward(b, y).probabilities);
  CHECK(backward(a, x, {}, TrainScope::kArtifacts).groups ==
        backward(b, y, {}, TrainScope::kArtifacts).groups);
}

TEST_CASE("objective equals the loss reported by backward") {
  const Model m = tiny_binary_model(27);
  Rng rng(28);
  const TrainBatch b = random_batch(m.config, 4, rng);
  const LossReport o = objective(m, b, {0.5, 2.0});
  const LossReport g = backward(m, b, {0.5, 2.0}, TrainScope::kArtifacts).loss;
  CHECK(o.total == doctest::Approx(g.total).epsilon(1e-14));
  CHECK(std::abs(o.total - (o.cls + 0.5 * o.orth_mean + 2.0 * o.spec_mean)) <= 1e-12);
}

}  // TEST_SUITE
