#pragma once

#include <map>
#include <string>
#include <vector>

#include "tdce/mrmc/ratings.hpp"

namespace tdce::mrmc {

struct KappaResult {
  double kappa = 0.0;  // NaN when undefined
  double p_bar = 0.0;
  double p_e = 0.0;
  std::size_t cases = 0;
  std::size_t raters = 0;
  bool defined = true;  // false when P_e == 1 (every rating in one category)
};

// counts[i][k]: raters placing case i in category k. Every row must sum to
// the same n >= 2.
KappaResult fleiss_kappa(const std::vector<std::vector<int>>& counts);

// Case x rater matrix of category indices in [0, n_categories).
std::vector<std::vector<int>> category_counts(const std::vector<std::vector<int>>& matrix, int n_categories);

// Kappa per condition over cases rated by every reader of that condition.
// Binary calls by default (2 categories); BI-RADS uses 7 (0..6).
std::map<Condition, KappaResult> kappa_by_condition(const std::vector<ReaderRating>& ratings,
                                                    bool birads_scale = false);

}  // namespace tdce::mrmc
