#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdce/mrmc/ratings.hpp"

namespace tdce::mrmc {

// Bernoulli-logit model with crossed random intercepts:
//   logit P(y=1) = x'beta + b_reader + b_case,
//   b_reader ~ N(0, s_r^2), b_case ~ N(0, s_c^2).
struct GlmmData {
  std::vector<int> y;
  std::vector<int> reader;  // 0..n_readers-1
  std::vector<int> item;    // 0..n_cases-1
  std::vector<double> x;    // row-major n x p
  std::size_t p = 0;
  std::size_t n_readers = 0;
  std::size_t n_cases = 0;
  std::vector<std::string> fixed_names;

  std::size_t n() const { return y.size(); }
};

struct GlmmOptions {
  int max_iterations = 200;
  // On the projected gradient of the log-likelihood, per coordinate. The
  // gradient is a central difference, so much tighter values sit below its
  // noise floor.
  double gradient_tolerance = 1e-3;
  double inner_tolerance = 1e-10;
  double min_log_sigma = -12.0;
  double max_log_sigma = 4.0;
  double separation_bound = 12.0;  // |beta| beyond this is treated as divergence
};

struct GlmmFit {
  std::vector<std::string> names;
  std::vector<double> beta;
  std::vector<double> se;
  std::vector<double> z;
  std::vector<double> p;
  double sigma2_reader = 0.0;
  double sigma2_case = 0.0;
  double loglik = 0.0;  // Laplace approximation
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  bool separation = false;
  std::string message;
  std::vector<double> loglik_trace;  // after each accepted outer step
};

GlmmFit glmm_fit(const GlmmData& data, const GlmmOptions& opt = {});

// Laplace log-likelihood at fixed parameters (for tests and profiling).
double glmm_laplace_loglik(const GlmmData& data, const std::vector<double>& beta, double sigma_reader,
                           double sigma_case);

enum class GlmmSubset { all, reference_positive, reference_negative };
std::string to_string(GlmmSubset s);

// Outcome = rating correct against the reference. Treatment coding with
// grayscale-only as the reference level; conditions absent from the subset
// are dropped from the design.
GlmmData glmm_data_from_ratings(const std::vector<ReaderRating>& ratings, const ReferenceLabels& reference,
                                GlmmSubset subset, CallSource source = CallSource::binary);

struct GlmmSimulation {
  int readers = 20;
  int cases = 200;
  double intercept = 0.5;
  std::vector<double> condition_effects{0.8};  // one per non-reference condition
  double sigma_reader = 0.5;
  double sigma_case = 1.0;
};

// Every reader reads every case under every condition.
GlmmData simulate_glmm(const GlmmSimulation& sim, std::uint64_t seed);

nlohmann::json to_json(const GlmmFit& f);

}  // namespace tdce::mrmc
