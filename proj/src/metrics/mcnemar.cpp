#include "tdce/metrics/mcnemar.hpp"

#include <algorithm>
#include <cmath>

#include "tdce/common/error.hpp"

namespace tdce::metrics {

McNemarResult mcnemar_counts(std::size_t b, std::size_t c) {
  McNemarResult r;
  r.b = b;
  r.c = c;
  const std::size_t n = b + c;
  if (n == 0) {
    r.no_discordance = true;
    r.exact = true;
    r.statistic = std::nan("");
    r.p = 1.0;
    return r;
  }
  if (n < 25) {
    // Binomial coefficients below 2^53 and powers of two keep this exact.
    r.exact = true;
    r.statistic = std::nan("");
    double tail = 0.0, coef = 1.0;
    for (std::size_t k = 0; k <= std::min(b, c); ++k) {
      tail += coef;
      coef = coef * static_cast<double>(n - k) / static_cast<double>(k + 1);
    }
    r.p = std::min(1.0, 2.0 * std::ldexp(tail, -static_cast<int>(n)));
    return r;
  }
  // The correction never pushes |b - c| below zero, so b == c gives p = 1.
  const double d = std::max(0.0, std::abs(static_cast<double>(b) - static_cast<double>(c)) - 1.0);
  r.statistic = d * d / static_cast<double>(n);
  r.p = std::erfc(std::sqrt(r.statistic / 2.0));
  return r;
}

McNemarResult mcnemar(std::span<const int> a, std::span<const int> b, std::span<const int> labels) {
  if (a.size() != b.size() || a.size() != labels.size())
    throw ValidationError("McNemar inputs differ in length");
  std::size_t nb = 0, nc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] != 0 && a[i] != 1) || (b[i] != 0 && b[i] != 1) || (labels[i] != 0 && labels[i] != 1))
      throw ValidationError("McNemar inputs must be 0/1 at index " + std::to_string(i));
    const bool ca = a[i] == labels[i], cb = b[i] == labels[i];
    if (ca && !cb) ++nb;
    if (!ca && cb) ++nc;
  }
  return mcnemar_counts(nb, nc);
}

}  // namespace tdce::metrics
