#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace tdce::metrics {

// Structural components. v10[i] is the fraction of negatives beaten by
// positive i (ties count one half); v01[j] the fraction of positives that
// beat negative j. twice_v10 holds the integral counts 2*#beaten + #tied.
struct Placements {
  std::vector<double> v10;
  std::vector<double> v01;
  std::vector<std::uint64_t> twice_v10;
};

Placements placement_values(std::span<const double> scores, std::span<const int> labels);

// DeLong variance of a single AUC.
double delong_variance(std::span<const double> scores, std::span<const int> labels);

struct DelongResult {
  double auc_a = 0.0;
  double auc_b = 0.0;
  double delta = 0.0;  // auc_a - auc_b
  double var_a = 0.0;
  double var_b = 0.0;
  double cov = 0.0;
  double z = 0.0;
  double p = 1.0;
  // Zero variance of the difference with delta != 0; z and p are NaN.
  bool degenerate = false;
};

// Paired comparison over identical cases; >= 2 cases per class.
DelongResult delong_paired(std::span<const double> scores_a, std::span<const double> scores_b,
                           std::span<const int> labels);

// Two-sided standard normal tail probability.
double two_sided_normal_p(double z);

}  // namespace tdce::metrics
