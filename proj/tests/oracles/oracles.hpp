#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the implementation paths it checks.

#include <cstddef>
#include <vector>

#include "masm/matrix.hpp"
#include "masm/network.hpp"

namespace masm::oracle {

// Pair counting: wins + 0.5 ties over all positive/negative pairs.
double brute_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// For every distinct threshold (descending) recount TP/FP from scratch.
double brute_ap(const std::vector<double>& scores, const std::vector<int>& labels);

// ROC vertices recounted from scratch per threshold, then the FPR = FNR
// crossing solved on the segment that brackets it.
double brute_eer(const std::vector<double>& scores, const std::vector<int>& labels);

// Continuous sweep: at parameter lambda = k + f, blocks above the k-th
// distinct score are accepted fully and a fraction f of block k; bisection
// on FPR(lambda) - FNR(lambda).
double bisection_eer(const std::vector<double>& scores, const std::vector<int>& labels);

// Smallest r with cumulative sigma^2 >= tau * total, clamped to [1, R-K].
std::size_t energy_scan_rank(const std::vector<double>& singular, double tau, std::size_t k);

// One bias-corrected adaptive-moment step from zero state.
double adam_first_step(double theta, double grad, double lr, double beta1 = 0.9,
                       double beta2 = 0.999, double eps = 1e-8);

// Straight-line forward pass with plain loops: effective weights rebuilt
// element by element from the stored factors.
std::vector<double> reference_forward(const Model& model, const TrainBatch& batch);

}  // namespace masm::oracle
