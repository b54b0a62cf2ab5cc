#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace tdce::metrics {

struct CiEstimate {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  int n_resamples = 0;
  std::uint64_t seed = 0;
  std::string method = "percentile";
  double level = 0.95;
  std::size_t redraws = 0;  // undefined replicates that were redrawn
};

// Evaluates a statistic on a multiset of record indices. Returns NaN (or
// throws ValidationError) when undefined on that resample.
using Statistic = std::function<double(std::span<const std::size_t> records)>;

struct BootstrapOptions {
  int n_resamples = 2000;
  std::uint64_t seed = 0;
  double level = 0.95;
  unsigned threads = 1;
  int max_redraws_per_replicate = 1000;
};

// Cluster bootstrap: patients (unique ids, sorted) are drawn with
// replacement and every record of a drawn patient is kept. Replicate i uses
// seed derive_seed(seed, {i, attempt}). Bounds are type-7 percentiles; they
// are widened to contain the point estimate if needed.
CiEstimate bootstrap_ci(std::span<const std::string> patient_ids, const Statistic& statistic,
                        const BootstrapOptions& opt);

CiEstimate bootstrap_auc(std::span<const double> scores, std::span<const int> labels,
                         std::span<const std::string> patient_ids, const BootstrapOptions& opt);

// Type-7 sample quantile of sorted data.
double quantile_sorted(const std::vector<double>& sorted, double q);

}  // namespace tdce::metrics
