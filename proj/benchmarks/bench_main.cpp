#include <benchmark/benchmark.h>

#include "masm/config.hpp"
#include "masm/data_synth.hpp"
#include "masm/metrics.hpp"
#include "masm/network.hpp"
#include "masm/rng.hpp"
#include "masm/subspace.hpp"
#include "masm/svd.hpp"

using namespace masm;

namespace {

Matrix random_matrix(std::size_t n, Rng& rng) {
  Matrix m(n, n);
  for (double& x : m.data()) x = rng.normal();
  return m;
}

Model finetune_model(std::size_t n_blocks) {
  TrainConfig cfg = default_config();
  cfg.model.n_blocks = n_blocks;
  Rng rng(1);
  Model model = init_model(cfg.model, rng);
  decompose_attention(model, cfg.model.decomposition);
  reset_binary_head(model, rng);
  return model;
}

TrainBatch batch_for(const Model& model, std::size_t n) {
  Rng rng(2);
  TrainBatch batch;
  for (std::size_t i = 0; i < n; ++i) {
    Matrix x(model.config.n_tokens, model.config.d_model);
    for (double& v : x.data()) v = rng.normal();
    batch.inputs.push_back(std::move(x));
    batch.labels.push_back(static_cast<int>(i % 2));
    batch.clip_ids.push_back(static_cast<std::int64_t>(i));
  }
  return batch;
}

void BM_Svd(benchmark::State& state) {
  Rng rng(3);
  const Matrix w = random_matrix(static_cast<std::size_t>(state.range(0)), rng);
  for (auto _ : state) benchmark::DoNotOptimize(svd(w));
}
BENCHMARK(BM_Svd)->Arg(16)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_Decompose(benchmark::State& state) {
  Rng rng(4);
  const Matrix w = random_matrix(static_cast<std::size_t>(state.range(0)), rng);
  const DecompositionConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(decompose(w, cfg));
}
BENCHMARK(BM_Decompose)->Arg(16)->Arg(64)->Unit(benchmark::kMicrosecond);

void BM_Forward(benchmark::State& state) {
  const Model model = finetune_model(static_cast<std::size_t>(state.range(0)));
  const TrainBatch batch = batch_for(model, 32);
  for (auto _ : state) benchmark::DoNotOptimize(forward(model, batch));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_Forward)->Arg(2)->Arg(6)->Unit(benchmark::kMicrosecond);

void BM_BackwardArtifacts(benchmark::State& state) {
  const Model model = finetune_model(static_cast<std::size_t>(state.range(0)));
  const TrainBatch batch = batch_for(model, 32);
  for (auto _ : state)
    benchmark::DoNotOptimize(backward(model, batch, LossWeights{}, TrainScope::kArtifacts));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_BackwardArtifacts)->Arg(2)->Arg(6)->Unit(benchmark::kMicrosecond);

void BM_Metrics(benchmark::State& state) {
  Rng rng(5);
  ScoredSet s;
  const auto n = static_cast<std::size_t>(state.range(0));
  for (std::size_t i = 0; i < n; ++i) {
    s.labels.push_back(static_cast<int>(i % 2));
    s.scores.push_back(rng.uniform() + 0.2 * s.labels.back());
  }
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_metrics(s));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Metrics)->Arg(512)->Arg(8192)->Unit(benchmark::kMicrosecond);

void BM_BuildSplits(benchmark::State& state) {
  DataConfig cfg;
  cfg.n_finetune = 1024;
  for (auto _ : state) benchmark::DoNotOptimize(build_splits(cfg));
}
BENCHMARK(BM_BuildSplits)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
