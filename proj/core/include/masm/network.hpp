#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "masm/losses.hpp"
#include "masm/matrix.hpp"
#include "masm/parameters.hpp"
#include "masm/rng.hpp"
#include "masm/subspace.hpp"

namespace masm {

struct ModelConfig {
  std::size_t d_model = 16;
  std::size_t n_blocks = 6;
  std::size_t n_tokens = 8;
  std::size_t d_hidden = 32;
  std::size_t n_classes_pretrain = 4;
  DecompositionConfig decomposition;

  // q, k, v, o per block.
  std::size_t n_decomposable() const noexcept { return 4 * n_blocks; }
};

struct LayerNorm {
  std::vector<double> gain;
  std::vector<double> bias;
};

// An attention projection y = W x, W stored either densely (pretraining and
// the full fine-tune baseline) or as a decomposed layer.
class Projection {
 public:
  Projection() = default;
  explicit Projection(Matrix dense) : repr_(std::move(dense)) {}
  explicit Projection(DecomposedLayer layer) : repr_(std::move(layer)) {}

  bool decomposed() const noexcept { return std::holds_alternative<DecomposedLayer>(repr_); }
  Matrix& dense() { return std::get<Matrix>(repr_); }
  const Matrix& dense() const { return std::get<Matrix>(repr_); }
  DecomposedLayer& layer() { return std::get<DecomposedLayer>(repr_); }
  const DecomposedLayer& layer() const { return std::get<DecomposedLayer>(repr_); }

  Matrix effective_weight() const;

 private:
  std::variant<Matrix, DecomposedLayer> repr_;
};

enum ProjectionSlot : std::size_t { kQuery = 0, kKey = 1, kValue = 2, kOutput = 3 };
const char* projection_name(std::size_t slot) noexcept;

struct Block {
  LayerNorm norm1;
  std::array<Projection, 4> attn;
  LayerNorm norm2;
  Matrix mlp_in;   // d_hidden x d_model
  Matrix mlp_out;  // d_model x d_hidden
};

struct Model {
  ModelConfig config;
  Matrix token_embed;  // n_tokens x d_model, added to the inputs
  std::vector<Block> blocks;
  Matrix head;  // n_outputs x (d_model + 1); last column is the bias

  bool binary() const noexcept { return head.rows() == 1; }
  // Decomposed layers in layer_id order (q,k,v,o of block 0, then block 1...).
  std::vector<const DecomposedLayer*> decomposed_layers() const;
};

// Fresh model with a multi-class head, ready for pretraining.
Model init_model(const ModelConfig& config, Rng& rng);

// Replace every dense q,k,v,o with its decomposition; layer_id = 4*block+slot.
void decompose_attention(Model& model, const DecompositionConfig& config);

// New binary head with small random weights and zero bias.
void reset_binary_head(Model& model, Rng& rng, double scale = 0.1);

struct TrainBatch {
  std::vector<Matrix> inputs;  // each n_tokens x d_model
  std::vector<int> labels;     // {0,1} for a binary head, class ids otherwise
  std::vector<std::int64_t> clip_ids;

  std::size_t size() const noexcept { return inputs.size(); }
};

struct ForwardResult {
  // Binary: one fake probability per sample. Multi-class: N x C row-major.
  std::vector<double> probabilities;
  std::size_t n_outputs = 1;
};

// Throws Error(kNonFinite) naming the block if activations blow up.
ForwardResult forward(const Model& model, const TrainBatch& batch);

// Which parameters train.
enum class TrainScope {
  kFull,            // pretraining: everything, multi-class cross-entropy
  kArtifacts,       // subspace fine-tuning: artifact factors + head
  kAttentionDense,  // baseline: dense q,k,v,o + head
};

// Groups in a fixed order. Pretraining: embed, then per block norm1, q, k, v,
// o, norm2, mlp_in, mlp_out, then head. Fine-tuning scopes: one group per
// attention layer (masked by layer_id), then head.
std::vector<ParameterGroup> parameter_groups(Model& model, TrainScope scope);

struct Gradients {
  LossReport loss;
  GroupGradients groups;
};

// Loss at the current parameters. For a binary head this is the full
// objective cls + l1 * mean orth + l2 * mean spec over decomposed layers;
// the regularizers are absent when nothing is decomposed.
LossReport objective(const Model& model, const TrainBatch& batch, const LossWeights& weights);

// Exact analytic gradient of objective() for the groups of `scope`.
Gradients backward(const Model& model, const TrainBatch& batch, const LossWeights& weights,
                   TrainScope scope);

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst_group;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
  std::vector<std::string> warnings;
};

// Relative error per coordinate is |a - n| / max(|a|, |n|, kGradCheckFloor).
inline constexpr double kGradCheckFloor = 1e-4;

// Central differences over every coordinate of `scope`, compared with
// `analytic`. The model is restored bit-exactly afterwards.
GradCheckReport grad_check(Model& model, const TrainBatch& batch, const LossWeights& weights,
                           TrainScope scope, const GroupGradients& analytic, double h,
                           double tol);
GradCheckReport grad_check(Model& model, const TrainBatch& batch, const LossWeights& weights,
                           TrainScope scope, double h, double tol);

}  // namespace masm
