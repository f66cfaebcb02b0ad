#include "fixtures.hpp"

namespace masm::fixture {

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = scale * rng.normal();
  return m;
}

ModelConfig tiny_model_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_blocks = 2;
  c.n_tokens = 4;
  c.d_hidden = 16;
  c.n_classes_pretrain = 3;
  c.decomposition.num_artifacts = 2;
  return c;
}

Model tiny_binary_model(std::uint64_t seed, bool perturb) {
  const ModelConfig c = tiny_model_config();
  Rng rng(seed);
  Model model = init_model(c, rng);
  decompose_attention(model, c.decomposition);
  reset_binary_head(model, rng, 0.5);
  if (perturb) {
    for (Block& b : model.blocks)
      for (Projection& p : b.attn)
        for (ArtifactSubspace& a : p.layer().artifacts) {
          for (double& x : a.u.data()) x += 0.05 * rng.normal();
          for (double& x : a.s) x += 0.05 * rng.normal();
          for (double& x : a.v.data()) x += 0.05 * rng.normal();
        }
  }
  return model;
}

TrainBatch random_batch(const ModelConfig& config, std::size_t n, Rng& rng, bool binary_labels) {
  TrainBatch batch;
  for (std::size_t i = 0; i < n; ++i) {
    batch.inputs.push_back(gaussian_matrix(config.n_tokens, config.d_model, rng));
    batch.labels.push_back(binary_labels ? static_cast<int>(i % 2)
                                         : static_cast<int>(i % config.n_classes_pretrain));
    batch.clip_ids.push_back(static_cast<std::int64_t>(i));
  }
  return batch;
}

TrainConfig small_train_config(std::uint64_t seed) {
  TrainConfig c = default_config();
  c.model.d_model = 8;
  c.model.n_blocks = 2;
  c.model.n_tokens = 6;
  c.model.d_hidden = 16;
  c.model.decomposition.num_artifacts = 2;
  c.data.d_model = 8;
  c.data.n_tokens = 6;
  c.data.n_pretrain = 256;
  c.data.n_finetune = 128;
  c.data.n_test = 64;
  c.data.n_heldout = 64;
  c.data.clip_size = 4;
  c.epochs = 2;
  c.batch_size = 16;
  c.mask.m = 3;
  c.pretrain.epochs = 20;
  c.pretrain.accuracy_floor = 0.5;
  return with_seed(c, seed);
}

}  // namespace masm::fixture
