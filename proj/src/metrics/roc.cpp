#include "tdce/metrics/roc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tdce/common/error.hpp"

namespace tdce::metrics {

std::pair<std::size_t, std::size_t> check_binary_input(std::span<const double> scores, std::span<const int> labels,
                                                       bool require_both_classes) {
  if (scores.size() != labels.size())
    throw ValidationError("scores and labels differ in length (" + std::to_string(scores.size()) + " vs " +
                          std::to_string(labels.size()) + ")");
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw ValidationError("non-finite score at index " + std::to_string(i));
    if (labels[i] == 1)
      ++pos;
    else if (labels[i] == 0)
      ++neg;
    else
      throw ValidationError("label at index " + std::to_string(i) + " is not 0/1");
  }
  if (require_both_classes && (pos == 0 || neg == 0))
    throw ValidationError("need at least one positive and one negative (got " + std::to_string(pos) + "/" +
                          std::to_string(neg) + ")");
  return {pos, neg};
}

namespace {

// Indices sorted by descending score.
std::vector<std::size_t> order_desc(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

RocResult roc_auc(std::span<const double> scores, std::span<const int> labels) {
  const auto [n_pos, n_neg] = check_binary_input(scores, labels, true);
  RocResult r;
  r.n_pos = n_pos;
  r.n_neg = n_neg;
  r.curve.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});

  // Twice the Mann-Whitney count, kept integral so the single final division
  // is the only rounding step.
  std::uint64_t twice_count = 0;
  std::size_t tp = 0, fp = 0;
  const auto idx = order_desc(scores);
  for (std::size_t i = 0; i < idx.size();) {
    const double s = scores[idx[i]];
    std::size_t gp = 0, gn = 0;
    for (; i < idx.size() && scores[idx[i]] == s; ++i) (labels[idx[i]] == 1 ? gp : gn)++;
    // Positives in this tie group beat every negative below it, tie with gn.
    twice_count += 2 * gp * (n_neg - fp - gn) + gp * gn;
    tp += gp;
    fp += gn;
    r.curve.push_back({static_cast<double>(fp) / static_cast<double>(n_neg),
                       static_cast<double>(tp) / static_cast<double>(n_pos), s});
  }
  r.auc = static_cast<double>(twice_count) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
  return r;
}

double auc(std::span<const double> scores, std::span<const int> labels) { return roc_auc(scores, labels).auc; }

double trapezoid_area(const std::vector<RocPoint>& curve) {
  double a = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    a += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  return a;
}

double youden_threshold(std::span<const double> scores, std::span<const int> labels) {
  const auto [n_pos, n_neg] = check_binary_input(scores, labels, true);
  const auto idx = order_desc(scores);
  // Sweep thresholds from high to low; at threshold s every score >= s is
  // called positive. Compare J via integer cross-multiplication so ties are
  // detected exactly: J * n_pos * n_neg = tp*n_neg + tn*n_pos - n_pos*n_neg.
  std::size_t tp = 0, fp = 0;
  long long best_j = 0;
  std::size_t best_tn = 0;
  double best_t = 0.0;
  bool have = false;
  for (std::size_t i = 0; i < idx.size();) {
    const double s = scores[idx[i]];
    for (; i < idx.size() && scores[idx[i]] == s; ++i) (labels[idx[i]] == 1 ? tp : fp)++;
    const std::size_t tn = n_neg - fp;
    const long long j = static_cast<long long>(tp * n_neg + tn * n_pos);
    // Thresholds are visited in decreasing order, so on a full tie the
    // earlier (higher) one is kept.
    if (!have || j > best_j || (j == best_j && tn > best_tn)) {
      best_j = j;
      best_tn = tn;
      best_t = s;
      have = true;
    }
  }
  return best_t;
}

Confusion confusion(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_binary_input(scores, labels, false);
  if (!std::isfinite(threshold)) throw ValidationError("threshold must be finite");
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool call = scores[i] >= threshold;
    if (labels[i] == 1)
      (call ? c.tp : c.fn)++;
    else
      (call ? c.fp : c.tn)++;
  }
  return c;
}

namespace {
double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? kUndefined : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

OperatingPoint operating_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
  OperatingPoint op;
  op.threshold = threshold;
  op.counts = confusion(scores, labels, threshold);
  const auto& c = op.counts;
  op.sensitivity = ratio(c.tp, c.tp + c.fn);
  op.specificity = ratio(c.tn, c.tn + c.fp);
  op.accuracy = ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn);
  op.balanced_accuracy = (op.sensitivity + op.specificity) / 2.0;
  op.precision = ratio(c.tp, c.tp + c.fp);
  op.npv = ratio(c.tn, c.tn + c.fn);
  op.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  return op;
}

}  // namespace tdce::metrics
