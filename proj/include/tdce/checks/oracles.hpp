#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tdce/imaging/image.hpp"

// Slow, direct reference implementations. They share no code with the
// library routines they are compared against.
namespace tdce::checks {

// Mann-Whitney over every (positive, negative) pair: 1 per win, 1/2 per tie.
// Formed as (2*wins + ties) / (2*P*N) so the single rounding matches an
// exact computation.
double brute_force_auc(std::span<const double> scores, std::span<const int> labels);

// Tries every distinct score as a threshold (positive call: score >= t).
// Ties in J go to higher specificity, then the higher threshold.
double exhaustive_youden(std::span<const double> scores, std::span<const int> labels);

// Between-class variance for every split t (foreground > t), compared as
// exact rationals; smallest t wins ties. 8-bit images up to 2^16 pixels.
std::uint32_t exhaustive_otsu(const imaging::RawImage& image);

// Two-sample jackknife variance of the AUC: leave out one positive or one
// negative at a time.
double jackknife_auc_variance(std::span<const double> scores, std::span<const int> labels);

// Fleiss' kappa from a case x rater matrix of category indices, counting
// agreeing rater pairs directly.
double fleiss_kappa_pairs(const std::vector<std::vector<int>>& ratings, int n_categories);

// Two-sided exact binomial McNemar p in long double.
long double mcnemar_exact(unsigned b, unsigned c);

// Maximum-likelihood logistic regression by Newton-Raphson. x row-major n x p.
std::vector<double> logistic_fit(const std::vector<int>& y, const std::vector<double>& x, std::size_t p);

}  // namespace tdce::checks
