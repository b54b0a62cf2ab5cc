#pragma once

#include <limits>
#include <span>
#include <vector>

namespace tdce::metrics {

// Labels are 0 (negative) or 1 (positive). Positive call: score >= threshold.

struct RocPoint {
  double fpr;
  double tpr;
  double threshold;  // +inf for the (0,0) origin
};

struct RocResult {
  double auc = 0.0;
  std::vector<RocPoint> curve;  // one point per distinct score, descending threshold
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

// Throws ValidationError on length mismatch, non-binary labels, non-finite
// scores or single-class input.
RocResult roc_auc(std::span<const double> scores, std::span<const int> labels);
double auc(std::span<const double> scores, std::span<const int> labels);

// Trapezoidal area under a curve produced by roc_auc.
double trapezoid_area(const std::vector<RocPoint>& curve);

// Threshold maximizing sensitivity + specificity - 1 over the distinct
// scores. Ties: higher specificity, then higher threshold.
double youden_threshold(std::span<const double> scores, std::span<const int> labels);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct OperatingPoint {
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double accuracy = 0.0;
  double balanced_accuracy = 0.0;
  double precision = 0.0;  // PPV
  double npv = 0.0;
  double f1 = 0.0;
  Confusion counts;
};

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

Confusion confusion(std::span<const double> scores, std::span<const int> labels, double threshold);
// 0/0 ratios are NaN, never 0.
OperatingPoint operating_metrics(std::span<const double> scores, std::span<const int> labels, double threshold);

// Shared input validation; returns (n_pos, n_neg).
std::pair<std::size_t, std::size_t> check_binary_input(std::span<const double> scores, std::span<const int> labels,
                                                       bool require_both_classes);

}  // namespace tdce::metrics
