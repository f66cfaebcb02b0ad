#include "masm/losses.hpp"

#include <algorithm>
#include <cmath>

#include "masm/error.hpp"

namespace masm {

double orth_loss(const DecomposedLayer& layer) {
  const std::size_t k = layer.artifacts.size();
  if (k < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      const auto& a = layer.artifacts[i];
      const auto& b = layer.artifacts[j];
      sum += frobenius_sq(matmul_tn(a.v, b.v)) + frobenius_sq(matmul_tn(a.u, b.u));
    }
  }
  return 2.0 / static_cast<double>(k * (k - 1)) * sum;
}

double spec_loss(const DecomposedLayer& layer, const Matrix& effective_weight) {
  return std::abs(frobenius_sq(effective_weight) - layer.pretrained_frob_sq);
}

double spec_loss(const DecomposedLayer& layer) { return spec_loss(layer, recompose(layer)); }

double cls_loss(std::span<const double> probabilities, std::span<const int> labels) {
  if (probabilities.empty()) throw Error(ErrorCode::kInvalidArgument, "cls_loss: empty batch");
  if (probabilities.size() != labels.size()) {
    throw Error(ErrorCode::kShapeMismatch, "cls_loss: probabilities and labels differ in length");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double p = std::clamp(probabilities[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    if (labels[i] != 0 && labels[i] != 1) {
      throw Error(ErrorCode::kInvalidArgument, "cls_loss: labels must be 0 or 1");
    }
    const double y = labels[i];
    sum += y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return -sum / static_cast<double>(probabilities.size());
}

LossReport total_loss(double cls, std::span<const DecomposedLayer* const> layers,
                      const LossWeights& weights) {
  if (layers.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "total_loss needs at least one decomposed layer");
  }
  LossReport report;
  report.cls = cls;
  report.n = layers.size();
  for (const DecomposedLayer* layer : layers) {
    report.orth_mean += orth_loss(*layer);
    report.spec_mean += spec_loss(*layer);
  }
  report.orth_mean /= static_cast<double>(report.n);
  report.spec_mean /= static_cast<double>(report.n);
  report.total = cls + weights.orth * report.orth_mean + weights.spec * report.spec_mean;
  return report;
}

FactorGradient FactorGradient::zeros_like(const DecomposedLayer& layer) {
  FactorGradient g;
  for (const auto& a : layer.artifacts) {
    g.du.emplace_back(a.u.rows(), a.u.cols());
    g.ds.emplace_back(a.s.size(), 0.0);
    g.dv.emplace_back(a.v.rows(), a.v.cols());
  }
  return g;
}

void accumulate_weight_gradient(const DecomposedLayer& layer, const Matrix& grad_weight,
                                FactorGradient& out) {
  for (std::size_t k = 0; k < layer.artifacts.size(); ++k) {
    const auto& a = layer.artifacts[k];
    const Matrix gv = matmul(grad_weight, a.v);     // d_out x r_k
    const Matrix gtu = matmul_tn(grad_weight, a.u);  // d_in x r_k
    for (std::size_t c = 0; c < a.rank(); ++c) {
      double ds = 0.0;
      for (std::size_t i = 0; i < a.u.rows(); ++i) {
        out.du[k](i, c) += gv(i, c) * a.s[c];
        ds += a.u(i, c) * gv(i, c);
      }
      for (std::size_t i = 0; i < a.v.rows(); ++i) out.dv[k](i, c) += gtu(i, c) * a.s[c];
      out.ds[k][c] += ds;
    }
  }
}

Matrix spec_loss_weight_gradient(const DecomposedLayer& layer, const Matrix& effective_weight) {
  const double diff = frobenius_sq(effective_weight) - layer.pretrained_frob_sq;
  const double dead = kSpecDeadZone * layer.pretrained_frob_sq;
  const double sign = diff > dead ? 1.0 : (diff < -dead ? -1.0 : 0.0);
  return (2.0 * sign) * effective_weight;
}

void accumulate_orth_gradient(const DecomposedLayer& layer, double scale, FactorGradient& out) {
  const std::size_t k = layer.artifacts.size();
  if (k < 2 || scale == 0.0) return;
  const double c = scale * 2.0 / static_cast<double>(k * (k - 1));
  // d ||A_i^T A_j||^2 / dA_i = 2 A_j A_j^T A_i, summed over partners j.
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      const auto& a = layer.artifacts[i];
      const auto& b = layer.artifacts[j];
      axpy(out.du[i], matmul(b.u, matmul_tn(b.u, a.u)), 2.0 * c);
      axpy(out.dv[i], matmul(b.v, matmul_tn(b.v, a.v)), 2.0 * c);
    }
  }
}

}  // namespace masm
