#include "tdce/checks/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace tdce::checks {

double brute_force_auc(std::span<const double> scores, std::span<const int> labels) {
  std::uint64_t twice = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 1) ++pos;
    else ++neg;
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j]) twice += 2;
      else if (scores[i] == scores[j]) twice += 1;
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double exhaustive_youden(std::span<const double> scores, std::span<const int> labels) {
  std::set<double> thresholds(scores.begin(), scores.end());
  long long pos = 0, neg = 0;
  for (int l : labels) (l == 1 ? pos : neg)++;
  bool have = false;
  long long best_j = 0, best_tn = 0;
  double best_t = 0;
  for (double t : thresholds) {
    long long tp = 0, tn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (labels[i] == 1 && scores[i] >= t) ++tp;
      if (labels[i] == 0 && scores[i] < t) ++tn;
    }
    // J scaled by pos*neg.
    const long long j = tp * neg + tn * pos - pos * neg;
    const bool better = !have || j > best_j || (j == best_j && tn > best_tn) ||
                        (j == best_j && tn == best_tn && t > best_t);
    if (better) {
      have = true;
      best_j = j;
      best_tn = tn;
      best_t = t;
    }
  }
  return best_t;
}

std::uint32_t exhaustive_otsu(const imaging::RawImage& image) {
  if (image.bit_depth != 8) throw std::invalid_argument("exhaustive_otsu: 8-bit images only");
  if (image.pixels.size() > (1u << 16)) throw std::invalid_argument("exhaustive_otsu: image too large");
  using i128 = __int128;
  bool have = false;
  i128 best_num = 0, best_den = 1;
  std::uint32_t best_t = 0;
  for (std::uint32_t t = 0; t < 255; ++t) {
    i128 n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (auto p : image.pixels) {
      if (p > t) {
        ++n1;
        s1 += p;
      } else {
        ++n0;
        s0 += p;
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    // w0 w1 (mu0 - mu1)^2 = (n1 s0 - n0 s1)^2 / (N^2 n0 n1); N^2 is common.
    const i128 d = n1 * s0 - n0 * s1;
    const i128 num = d * d, den = n0 * n1;
    if (!have || num * best_den > best_num * den) {
      have = true;
      best_num = num;
      best_den = den;
      best_t = t;
    }
  }
  if (!have) throw std::invalid_argument("exhaustive_otsu: single-valued image");
  return best_t;
}

double jackknife_auc_variance(std::span<const double> scores, std::span<const int> labels) {
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(scores[i]);
  auto psi = [](double x, double y) { return x > y ? 1.0 : (x == y ? 0.5 : 0.0); };
  auto auc_without = [&](long skip_pos, long skip_neg) {
    double s = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < pos.size(); ++i) {
      if (static_cast<long>(i) == skip_pos) continue;
      for (std::size_t j = 0; j < neg.size(); ++j) {
        if (static_cast<long>(j) == skip_neg) continue;
        s += psi(pos[i], neg[j]);
        ++count;
      }
    }
    return s / static_cast<double>(count);
  };
  auto part = [](const std::vector<double>& th) {
    const double m = static_cast<double>(th.size());
    double mean = 0;
    for (double v : th) mean += v;
    mean /= m;
    double ss = 0;
    for (double v : th) ss += (v - mean) * (v - mean);
    return (m - 1.0) / m * ss;
  };
  std::vector<double> tp, tn;
  for (std::size_t i = 0; i < pos.size(); ++i) tp.push_back(auc_without(static_cast<long>(i), -1));
  for (std::size_t j = 0; j < neg.size(); ++j) tn.push_back(auc_without(-1, static_cast<long>(j)));
  return part(tp) + part(tn);
}

double fleiss_kappa_pairs(const std::vector<std::vector<int>>& ratings, int n_categories) {
  const double cases = static_cast<double>(ratings.size());
  const double n = static_cast<double>(ratings.front().size());
  std::vector<double> share(static_cast<std::size_t>(n_categories), 0.0);
  double agree_sum = 0;
  for (const auto& row : ratings) {
    long agreeing = 0;
    for (std::size_t a = 0; a < row.size(); ++a)
      for (std::size_t b = 0; b < row.size(); ++b)
        if (a != b && row[a] == row[b]) ++agreeing;
    agree_sum += static_cast<double>(agreeing) / (n * (n - 1.0));
    for (int r : row) share[static_cast<std::size_t>(r)] += 1.0;
  }
  const double p_bar = agree_sum / cases;
  double p_e = 0;
  for (double s : share) p_e += (s / (cases * n)) * (s / (cases * n));
  return (p_bar - p_e) / (1.0 - p_e);
}

long double mcnemar_exact(unsigned b, unsigned c) {
  const unsigned n = b + c;
  if (n == 0) return 1.0L;
  const unsigned k = std::min(b, c);
  long double tail = 0;
  for (unsigned i = 0; i <= k; ++i) {
    // C(n, i) / 2^n via lgamma-free product.
    long double term = 1.0L;
    for (unsigned j = 0; j < i; ++j) term = term * (n - j) / (j + 1);
    tail += term;
  }
  for (unsigned j = 0; j < n; ++j) tail /= 2.0L;
  return std::min(1.0L, 2.0L * tail);
}

std::vector<double> logistic_fit(const std::vector<int>& y, const std::vector<double>& x, std::size_t p) {
  const std::size_t n = y.size();
  std::vector<double> beta(p, 0.0);
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<double> g(p, 0.0), h(p * p, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double eta = 0;
      for (std::size_t a = 0; a < p; ++a) eta += x[i * p + a] * beta[a];
      const double mu = 1.0 / (1.0 + std::exp(-eta));
      const double w = mu * (1.0 - mu);
      for (std::size_t a = 0; a < p; ++a) {
        g[a] += (y[i] - mu) * x[i * p + a];
        for (std::size_t b = 0; b < p; ++b) h[a * p + b] += w * x[i * p + a] * x[i * p + b];
      }
    }
    // Solve h * step = g by Gaussian elimination with partial pivoting.
    std::vector<double> step = g;
    for (std::size_t col = 0; col < p; ++col) {
      std::size_t piv = col;
      for (std::size_t r = col + 1; r < p; ++r)
        if (std::abs(h[r * p + col]) > std::abs(h[piv * p + col])) piv = r;
      for (std::size_t c = 0; c < p; ++c) std::swap(h[col * p + c], h[piv * p + c]);
      std::swap(step[col], step[piv]);
      for (std::size_t r = col + 1; r < p; ++r) {
        const double f = h[r * p + col] / h[col * p + col];
        for (std::size_t c = col; c < p; ++c) h[r * p + c] -= f * h[col * p + c];
        step[r] -= f * step[col];
      }
    }
    for (std::size_t col = p; col-- > 0;) {
      for (std::size_t c = col + 1; c < p; ++c) step[col] -= h[col * p + c] * step[c];
      step[col] /= h[col * p + col];
    }
    double max_step = 0;
    for (std::size_t a = 0; a < p; ++a) {
      beta[a] += step[a];
      max_step = std::max(max_step, std::abs(step[a]));
    }
    if (max_step < 1e-12) break;
  }
  return beta;
}

}  // namespace tdce::checks
