#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace masm {

// Scores where larger means "more likely fake"; label 1 = fake (positive).
struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::int64_t> group_ids;  // optional; empty or one per score
};

// Mann-Whitney statistic with midranks: P(score_pos > score_neg) + 0.5 P(tie).
double auc(const ScoredSet& s);

// Sum over descending score thresholds of (R_k - R_{k-1}) * P_k, tied scores
// forming one threshold.
double average_precision(const ScoredSet& s);

// Point where FPR equals FNR, linearly interpolated on the ROC polyline.
double eer(const ScoredSet& s);

enum class Pooling { kMean, kMax };

// One entry per group id (ascending), scores pooled, label inherited.
// Throws if a group mixes labels or group ids are missing.
ScoredSet video_level(const ScoredSet& s, Pooling pooling = Pooling::kMean);

struct MetricTriple {
  double auc = 0.0;
  double ap = 0.0;
  double eer = 0.0;
};

MetricTriple evaluate_metrics(const ScoredSet& s);

}  // namespace masm
