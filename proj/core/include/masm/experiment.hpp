#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "masm/config.hpp"
#include "masm/csv.hpp"
#include "masm/data_synth.hpp"
#include "masm/losses.hpp"
#include "masm/metrics.hpp"
#include "masm/network.hpp"
#include "masm/rng.hpp"
#include "masm/slm.hpp"

namespace masm {

struct PretrainResult {
  Model model;
  double base_accuracy = 0.0;
  std::size_t epochs_run = 0;
  std::uint64_t steps = 0;
  Rng rng{0};
};

// Full-model multi-class training on the real base classes. Stops once the
// accuracy on the real half of the in-domain test set reaches the floor.
// Throws Error(kUnreachable) if the floor is missed after a nonzero number of
// epochs.
PretrainResult run_pretrain(const TrainConfig& config, const Splits& splits);

// Fraction of real samples whose base class is the arg-max prediction.
double base_accuracy(const Model& model, const std::vector<SyntheticSample>& samples);

struct SplitMetrics {
  MetricTriple frame;
  MetricTriple video;
};

struct IterationRecord {
  std::size_t t = 0;
  std::size_t epoch = 0;
  LossReport loss;
  std::vector<double> bvg;
  LayerMask mask;
};

struct RunRecord {
  std::string config_json;
  std::vector<IterationRecord> iterations;
  SplitMetrics in_domain;
  SplitMetrics heldout;
  double wall_clock_seconds = 0.0;
  Model model;  // fine-tuned
  OptimizerState optimizer;  // final state, one group per parameter group
};

// Called after each update with the record and the per-layer gradients that
// fed the statistics (one vector per maskable layer, in layer order).
using StepObserver =
    std::function<void(const IterationRecord&, const std::vector<std::vector<double>>&)>;

struct FinetuneOptions {
  StepObserver observer;
  // Layers whose mask bit is forced to 0 for the whole run.
  std::vector<std::size_t> frozen_layers;
};

RunRecord run_finetune(const TrainConfig& config, const Model& pretrained, const Splits& splits,
                       const FinetuneOptions& options = {});

// Fake-probability scores for `samples`, in order.
std::vector<double> score_samples(const Model& model, const std::vector<SyntheticSample>& samples);
SplitMetrics evaluate_split(const Model& model, const std::vector<SyntheticSample>& samples);

// One CSV row per iteration: t, epoch, cls, orth_mean, spec_mean, total, n,
// bvg_<l>..., mask_<l>...
CsvTable iteration_log_table(const RunRecord& record);

struct AblationGrid {
  bool components = true;  // MASFT x SLM on/off
  bool losses = true;      // lambda1 x lambda2 in {0, 1}
  std::vector<std::size_t> k_values = {1, 3, 5, 7, 9};
  std::vector<std::size_t> m_values = {1, 4, 16, 48, 96};
};

// Seed for one grid cell: base seed plus a stable hash of the cell key.
std::uint64_t cell_seed(std::uint64_t base_seed, const std::string& cell_key);

// Tables named components, losses, artifact_subspaces, masked_layers; each
// row carries in-domain and held-out AUC/AP/EER plus their means. Failing
// cells are reported in an error column and the grid continues.
std::vector<CsvTable> run_ablation(const TrainConfig& config, const Model& pretrained,
                                   const Splits& splits, const AblationGrid& grid = {});

// Video-level AUC on the in-domain test set for the clean data and each
// (family, level) distortion.
CsvTable run_robustness(const TrainConfig& config, const Model& finetuned, const Splits& splits);

struct LayerInspection {
  std::size_t layer_id = 0;
  std::size_t total_rank = 0;
  std::size_t semantic_rank = 0;
  std::vector<std::size_t> artifact_ranks;
  double semantic_energy = 0.0;
  std::vector<double> artifact_energy;  // fractions of ||W||_F^2
  double orth_init = 0.0;
  double spec_init = 0.0;
};

std::vector<LayerInspection> decompose_inspect(const Model& pretrained,
                                               const DecompositionConfig& config);
CsvTable inspection_table(const std::vector<LayerInspection>& layers);

}  // namespace masm
