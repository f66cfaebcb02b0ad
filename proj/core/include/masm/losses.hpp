#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "masm/matrix.hpp"
#include "masm/subspace.hpp"

namespace masm {

struct LossWeights {
  double orth = 1.0;  // lambda_1
  double spec = 1.0;  // lambda_2
};

struct LossReport {
  double cls = 0.0;
  double orth_mean = 0.0;
  double spec_mean = 0.0;
  double total = 0.0;
  std::size_t n = 0;  // decomposed layers averaged over
};

// Probabilities are clamped to [1e-12, 1 - 1e-12] before taking logs.
inline constexpr double kProbabilityClamp = 1e-12;

// Mean pairwise Gram penalty between artifact subspaces:
//   2 / (K (K - 1)) * sum_{i<j} ||V_i^T V_j||_F^2 + ||U_i^T U_j||_F^2.
// V is stored with singular vectors as columns, so V_i^T V_j here is the
// same r_i x r_j Gram that the row-vector form V_i V_j^T denotes. Zero for K=1.
double orth_loss(const DecomposedLayer& layer);

// | ||W_hat||_F^2 - ||W_pretrained||_F^2 |
double spec_loss(const DecomposedLayer& layer);
double spec_loss(const DecomposedLayer& layer, const Matrix& effective_weight);

// Binary cross-entropy averaged over the batch. y in {0, 1}.
double cls_loss(std::span<const double> probabilities, std::span<const int> labels);

LossReport total_loss(double cls, std::span<const DecomposedLayer* const> layers,
                      const LossWeights& weights);

// Gradient with respect to every artifact factor of one layer, laid out like
// the layer's artifacts.
struct FactorGradient {
  std::vector<Matrix> du;
  std::vector<std::vector<double>> ds;
  std::vector<Matrix> dv;

  static FactorGradient zeros_like(const DecomposedLayer& layer);
};

// Chain rule from dL/dW_hat onto (U_k, s_k, V_k):
//   dU_k = G V_k diag(s_k), dV_k = G^T U_k diag(s_k), ds_k[j] = u_kj^T G v_kj.
void accumulate_weight_gradient(const DecomposedLayer& layer, const Matrix& grad_weight,
                                FactorGradient& out);

// Relative band around E0 treated as the kink, so the rounding left by
// recomposition does not produce a full-size subgradient at init.
inline constexpr double kSpecDeadZone = 1e-12;

// dL_spec/dW_hat = sign(E - E0) * 2 W_hat, with sign(0) = 0.
Matrix spec_loss_weight_gradient(const DecomposedLayer& layer, const Matrix& effective_weight);

// scale * dL_orth/d(U_k, V_k); s_k does not enter the orthogonality term.
void accumulate_orth_gradient(const DecomposedLayer& layer, double scale, FactorGradient& out);

}  // namespace masm
