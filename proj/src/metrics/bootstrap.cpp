#include "tdce/metrics/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "tdce/common/error.hpp"
#include "tdce/common/parallel.hpp"
#include "tdce/common/random.hpp"
#include "tdce/metrics/roc.hpp"

namespace tdce::metrics {

double quantile_sorted(const std::vector<double>& s, double q) {
  if (s.empty()) throw ValidationError("quantile of empty sample");
  const double h = (static_cast<double>(s.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (h - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

namespace {

double safe_eval(const Statistic& f, std::span<const std::size_t> idx) {
  try {
    return f(idx);
  } catch (const ValidationError&) {
    return std::nan("");
  }
}

}  // namespace

CiEstimate bootstrap_ci(std::span<const std::string> patient_ids, const Statistic& statistic,
                        const BootstrapOptions& opt) {
  if (opt.n_resamples < 1) throw ValidationError("n_resamples must be >= 1");
  if (!(opt.level > 0 && opt.level < 1)) throw ValidationError("CI level must be in (0,1)");
  std::map<std::string, std::vector<std::size_t>> by_patient;
  for (std::size_t i = 0; i < patient_ids.size(); ++i) by_patient[patient_ids[i]].push_back(i);
  std::vector<const std::vector<std::size_t>*> clusters;
  for (const auto& [id, recs] : by_patient) clusters.push_back(&recs);

  std::vector<std::size_t> all(patient_ids.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  CiEstimate ci;
  ci.point = safe_eval(statistic, all);
  if (!std::isfinite(ci.point)) throw ValidationError("statistic is undefined on the full data");
  ci.n_resamples = opt.n_resamples;
  ci.seed = opt.seed;
  ci.level = opt.level;

  const std::size_t k = clusters.size();
  std::vector<double> reps(static_cast<std::size_t>(opt.n_resamples));
  std::vector<std::size_t> redraws(reps.size(), 0);
  parallel_for(reps.size(), opt.threads, [&](std::size_t r) {
    std::vector<std::size_t> idx;
    for (int attempt = 0;; ++attempt) {
      if (attempt > opt.max_redraws_per_replicate)
        throw RuntimeFailure("bootstrap replicate " + std::to_string(r) + " undefined after " +
                             std::to_string(attempt) + " draws");
      auto rng = make_rng(opt.seed, {r, static_cast<std::uint64_t>(attempt)});
      std::uniform_int_distribution<std::size_t> pick(0, k - 1);
      idx.clear();
      for (std::size_t j = 0; j < k; ++j) {
        const auto& c = *clusters[pick(rng)];
        idx.insert(idx.end(), c.begin(), c.end());
      }
      const double v = safe_eval(statistic, idx);
      if (std::isfinite(v)) {
        reps[r] = v;
        redraws[r] = static_cast<std::size_t>(attempt);
        return;
      }
    }
  });
  for (auto d : redraws) ci.redraws += d;
  std::sort(reps.begin(), reps.end());
  const double alpha = (1.0 - opt.level) / 2.0;
  ci.lower = std::min(quantile_sorted(reps, alpha), ci.point);
  ci.upper = std::max(quantile_sorted(reps, 1.0 - alpha), ci.point);
  return ci;
}

CiEstimate bootstrap_auc(std::span<const double> scores, std::span<const int> labels,
                         std::span<const std::string> patient_ids, const BootstrapOptions& opt) {
  check_binary_input(scores, labels, true);
  if (patient_ids.size() != scores.size()) throw ValidationError("patient_ids and scores differ in length");
  Statistic stat = [&](std::span<const std::size_t> idx) {
    std::vector<double> s;
    std::vector<int> l;
    s.reserve(idx.size());
    l.reserve(idx.size());
    std::size_t pos = 0;
    for (auto i : idx) {
      s.push_back(scores[i]);
      l.push_back(labels[i]);
      pos += static_cast<std::size_t>(labels[i]);
    }
    if (pos == 0 || pos == idx.size()) return std::nan("");
    return auc(s, l);
  };
  return bootstrap_ci(patient_ids, stat, opt);
}

}  // namespace tdce::metrics
