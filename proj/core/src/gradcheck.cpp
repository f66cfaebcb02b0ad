#include <algorithm>
#include <cmath>

#include "masm/error.hpp"
#include "masm/network.hpp"

namespace masm {

GradCheckReport grad_check(Model& model, const TrainBatch& batch, const LossWeights& weights,
                           TrainScope scope, const GroupGradients& analytic, double h,
                           double tol) {
  if (!(h > 0.0)) throw Error(ErrorCode::kInvalidArgument, "finite-difference step must be > 0");
  GradCheckReport report;
  if (h > 1e-3) {
    report.warnings.push_back("step " + std::to_string(h) +
                              " is large; truncation error may dominate the comparison");
  }
  auto groups = parameter_groups(model, scope);
  if (groups.size() != analytic.size()) {
    throw Error(ErrorCode::kShapeMismatch, "analytic gradient has wrong group count");
  }
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    ParameterGroup& group = groups[gi];
    if (group.size() != analytic[gi].size()) {
      throw Error(ErrorCode::kShapeMismatch, "analytic gradient for " + group.name +
                                                 " has wrong length");
    }
    for (std::size_t i = 0; i < group.size(); ++i) {
      double& theta = group.at(i);
      const double saved = theta;
      theta = saved + h;
      const double plus = objective(model, batch, weights).total;
      theta = saved - h;
      const double minus = objective(model, batch, weights).total;
      theta = saved;

      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[gi][i];
      const double abs_err = std::abs(a - numeric);
      const double rel_err =
          abs_err / std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      ++report.coordinates;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel_err > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = rel_err;
        report.worst_group = group.name;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

GradCheckReport grad_check(Model& model, const TrainBatch& batch, const LossWeights& weights,
                           TrainScope scope, double h, double tol) {
  const Gradients g = backward(model, batch, weights, scope);
  return grad_check(model, batch, weights, scope, g.groups, h, tol);
}

}  // namespace masm
