#include "masm/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "masm/error.hpp"
#include "masm/matrix.hpp"

namespace masm {

namespace {

struct ClassCounts {
  std::size_t pos = 0;
  std::size_t neg = 0;
};

ClassCounts validate(const ScoredSet& s) {
  if (s.scores.size() != s.labels.size()) {
    throw Error(ErrorCode::kShapeMismatch, "scores and labels differ in length");
  }
  if (!s.group_ids.empty() && s.group_ids.size() != s.scores.size()) {
    throw Error(ErrorCode::kShapeMismatch, "group ids and scores differ in length");
  }
  if (!all_finite(s.scores)) throw Error(ErrorCode::kNonFinite, "scores must be finite");
  ClassCounts c;
  for (int y : s.labels) {
    if (y == 1) {
      ++c.pos;
    } else if (y == 0) {
      ++c.neg;
    } else {
      throw Error(ErrorCode::kInvalidArgument, "labels must be 0 or 1");
    }
  }
  return c;
}

void require_both(const ClassCounts& c, const char* metric) {
  if (c.pos == 0 || c.neg == 0) {
    throw Error(ErrorCode::kInvalidArgument,
                std::string(metric) + " needs at least one positive and one negative");
  }
}

// Indices by descending score.
std::vector<std::size_t> descending(const ScoredSet& s) {
  std::vector<std::size_t> order(s.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return s.scores[a] > s.scores[b]; });
  return order;
}

// Cumulative (tp, fp) after each tied-score block in descending order.
std::vector<std::pair<std::size_t, std::size_t>> threshold_sweep(const ScoredSet& s) {
  const auto order = descending(s);
  std::vector<std::pair<std::size_t, std::size_t>> points;
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double score = s.scores[order[i]];
    for (; i < order.size() && s.scores[order[i]] == score; ++i) {
      if (s.labels[order[i]] == 1) {
        ++tp;
      } else {
        ++fp;
      }
    }
    points.emplace_back(tp, fp);
  }
  return points;
}

}  // namespace

double auc(const ScoredSet& s) {
  const ClassCounts c = validate(s);
  require_both(c, "AUC");
  std::vector<std::size_t> order(s.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
  // Midranks are multiples of 0.5, so the rank sum is exact.
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && s.scores[order[j]] == s.scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (s.labels[order[t]] == 1) pos_rank_sum += midrank;
    i = j;
  }
  const double p = static_cast<double>(c.pos);
  const double u = pos_rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(c.neg));
}

double average_precision(const ScoredSet& s) {
  const ClassCounts c = validate(s);
  if (c.pos == 0) throw Error(ErrorCode::kInvalidArgument, "AP needs at least one positive");
  const double p = static_cast<double>(c.pos);
  double ap = 0.0;
  std::size_t prev_tp = 0;
  for (const auto& [tp, fp] : threshold_sweep(s)) {
    if (tp != prev_tp) {
      const double recall_step = static_cast<double>(tp - prev_tp) / p;
      const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
      ap += recall_step * precision;
    }
    prev_tp = tp;
  }
  return ap;
}

double eer(const ScoredSet& s) {
  const ClassCounts c = validate(s);
  require_both(c, "EER");
  const double p = static_cast<double>(c.pos);
  const double n = static_cast<double>(c.neg);
  // f = FPR - FNR rises strictly from -1 at (0,0) to +1 at (1,1).
  double prev_fpr = 0.0;
  double prev_f = -1.0;
  for (const auto& [tp, fp] : threshold_sweep(s)) {
    const double fpr = static_cast<double>(fp) / n;
    const double f = fpr - (1.0 - static_cast<double>(tp) / p);
    if (f >= 0.0) {
      if (f == 0.0) return fpr;
      const double t = -prev_f / (f - prev_f);
      return prev_fpr + t * (fpr - prev_fpr);
    }
    prev_fpr = fpr;
    prev_f = f;
  }
  return prev_fpr;
}

ScoredSet video_level(const ScoredSet& s, Pooling pooling) {
  validate(s);
  if (s.group_ids.size() != s.scores.size()) {
    throw Error(ErrorCode::kInvalidArgument, "video-level pooling needs a group id per score");
  }
  struct Acc {
    double sum = 0.0;
    double max = 0.0;
    std::size_t count = 0;
    int label = 0;
  };
  std::map<std::int64_t, Acc> groups;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    auto [it, inserted] = groups.try_emplace(s.group_ids[i]);
    Acc& acc = it->second;
    if (inserted) {
      acc.label = s.labels[i];
      acc.max = s.scores[i];
    } else if (acc.label != s.labels[i]) {
      throw Error(ErrorCode::kInvalidArgument,
                  "group " + std::to_string(s.group_ids[i]) + " mixes real and fake labels");
    }
    acc.sum += s.scores[i];
    acc.max = std::max(acc.max, s.scores[i]);
    ++acc.count;
  }
  ScoredSet out;
  for (const auto& [id, acc] : groups) {
    out.scores.push_back(pooling == Pooling::kMean ? acc.sum / static_cast<double>(acc.count)
                                                   : acc.max);
    out.labels.push_back(acc.label);
    out.group_ids.push_back(id);
  }
  return out;
}

MetricTriple evaluate_metrics(const ScoredSet& s) {
  return {auc(s), average_precision(s), eer(s)};
}

}  // namespace masm
