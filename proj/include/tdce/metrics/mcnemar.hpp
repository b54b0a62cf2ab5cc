#pragma once

#include <cstddef>
#include <span>

namespace tdce::metrics {

struct McNemarResult {
  std::size_t b = 0;  // a correct, b wrong
  std::size_t c = 0;  // a wrong, b correct
  double statistic = 0.0;  // chi-square with continuity correction; NaN for the exact branch
  double p = 1.0;
  bool exact = false;
  bool no_discordance = false;
};

// Exact two-sided binomial when b + c < 25, else continuity-corrected
// chi-square on one degree of freedom.
McNemarResult mcnemar_counts(std::size_t b, std::size_t c);

// Calls are 0/1 decisions, labels 0/1 truth.
McNemarResult mcnemar(std::span<const int> calls_a, std::span<const int> calls_b, std::span<const int> labels);

}  // namespace tdce::metrics
