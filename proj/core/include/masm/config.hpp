#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "masm/data_synth.hpp"
#include "masm/losses.hpp"
#include "masm/network.hpp"
#include "masm/slm.hpp"

namespace masm {

struct MaskConfig {
  bool enabled = true;
  std::size_t m = 16;
  // Negative: one full epoch of iterations.
  std::int64_t warmup_steps = -1;
};

struct PretrainConfig {
  std::size_t epochs = 40;
  double lr = 3e-3;
  std::size_t batch_size = 32;
  double accuracy_floor = 0.9;
};

struct TrainConfig {
  ModelConfig model;
  DataConfig data;
  bool masft = true;  // false: dense fine-tuning of q,k,v,o
  MaskConfig mask;
  StatsConfig stats;  // warmup_steps is resolved from `mask` at run time
  OptimizerConfig optimizer;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  LossWeights weights;
  PretrainConfig pretrain;
  std::uint64_t seed = 1;
  std::string iteration_log;  // CSV path; empty disables
};

// Defaults: K=5, m=16, lambda1=lambda2=1, Adam lr 2e-4, batch 32, 10 epochs.
TrainConfig default_config();

// Strict: unknown keys and type mismatches raise Error(kConfig). Missing keys
// keep their defaults.
TrainConfig parse_config(std::string_view json_text);
TrainConfig load_config(const std::string& path);
std::string config_to_json(const TrainConfig& config, bool pretty = false);

// Sets the training and data seeds together.
TrainConfig with_seed(TrainConfig config, std::uint64_t seed);

void validate(const TrainConfig& config);

}  // namespace masm
