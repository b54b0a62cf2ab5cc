#include "tdce/metrics/delong.hpp"

#include <algorithm>
#include <cmath>

#include "tdce/common/error.hpp"
#include "tdce/metrics/roc.hpp"

namespace tdce::metrics {

Placements placement_values(std::span<const double> scores, std::span<const int> labels) {
  const auto [n_pos, n_neg] = check_binary_input(scores, labels, true);
  std::vector<double> pos, neg;
  pos.reserve(n_pos);
  neg.reserve(n_neg);
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(scores[i]);
  std::vector<double> sp = pos, sn = neg;
  std::sort(sp.begin(), sp.end());
  std::sort(sn.begin(), sn.end());

  // 2*#{others strictly below} + #{others equal}
  auto twice_below = [](const std::vector<double>& sorted, double x) {
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), x) - sorted.begin();
    const auto hi = std::upper_bound(sorted.begin(), sorted.end(), x) - sorted.begin();
    return static_cast<std::uint64_t>(2 * lo + (hi - lo));
  };

  Placements p;
  p.v10.reserve(n_pos);
  p.twice_v10.reserve(n_pos);
  for (double x : pos) {
    const auto t = twice_below(sn, x);
    p.twice_v10.push_back(t);
    p.v10.push_back(static_cast<double>(t) / (2.0 * static_cast<double>(n_neg)));
  }
  p.v01.reserve(n_neg);
  for (double y : neg) {
    // Positives above y: n_pos - #below - #equal/2.
    const auto t = 2 * n_pos - twice_below(sp, y);
    p.v01.push_back(static_cast<double>(t) / (2.0 * static_cast<double>(n_pos)));
  }
  return p;
}

namespace {

double mean(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double covariance(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean(a), mb = mean(b);
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - ma) * (b[i] - mb);
  return s / static_cast<double>(a.size() - 1);
}

}  // namespace

double two_sided_normal_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

double delong_variance(std::span<const double> scores, std::span<const int> labels) {
  const auto p = placement_values(scores, labels);
  if (p.v10.size() < 2 || p.v01.size() < 2) throw ValidationError("DeLong variance needs >= 2 cases per class");
  return covariance(p.v10, p.v10) / static_cast<double>(p.v10.size()) +
         covariance(p.v01, p.v01) / static_cast<double>(p.v01.size());
}

DelongResult delong_paired(std::span<const double> a, std::span<const double> b, std::span<const int> labels) {
  if (a.size() != b.size()) throw ValidationError("paired score vectors differ in length");
  const auto pa = placement_values(a, labels);
  const auto pb = placement_values(b, labels);
  const double m = static_cast<double>(pa.v10.size()), n = static_cast<double>(pa.v01.size());
  if (m < 2 || n < 2) throw ValidationError("DeLong test needs >= 2 cases per class");

  DelongResult r;
  r.auc_a = auc(a, labels);
  r.auc_b = auc(b, labels);
  r.delta = r.auc_a - r.auc_b;
  r.var_a = covariance(pa.v10, pa.v10) / m + covariance(pa.v01, pa.v01) / n;
  r.var_b = covariance(pb.v10, pb.v10) / m + covariance(pb.v01, pb.v01) / n;
  r.cov = covariance(pa.v10, pb.v10) / m + covariance(pa.v01, pb.v01) / n;
  const double var = r.var_a + r.var_b - 2.0 * r.cov;
  if (r.delta == 0.0) {
    r.z = 0.0;
    r.p = 1.0;
  } else if (!(var > 0.0)) {
    r.degenerate = true;
    r.z = r.p = std::nan("");
  } else {
    r.z = r.delta / std::sqrt(var);
    r.p = two_sided_normal_p(r.z);
  }
  return r;
}

}  // namespace tdce::metrics
