#pragma once

#include <cstddef>
#include <cstdint>

#include "masm/config.hpp"
#include "masm/matrix.hpp"
#include "masm/network.hpp"
#include "masm/rng.hpp"

namespace masm::fixture {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0);

// d_model 8, 2 blocks, 4 tokens, hidden 16, 3 pretrain classes, K = 2.
ModelConfig tiny_model_config();

// Decomposed tiny model with a binary head. With `perturb`, every artifact
// factor gets N(0, 0.05^2) noise so the spectral term sits off its kink.
Model tiny_binary_model(std::uint64_t seed, bool perturb = true);

TrainBatch random_batch(const ModelConfig& config, std::size_t n, Rng& rng,
                        bool binary_labels = true);

// Small model and data, a few epochs: for harness tests that must stay fast.
TrainConfig small_train_config(std::uint64_t seed = 1);

}  // namespace masm::fixture
