#include "tdce/pipeline/split.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "tdce/common/error.hpp"
#include "tdce/common/random.hpp"

namespace tdce::pipeline {

Split split_patients(const Manifest& manifest, const SplitRatios& r, std::uint64_t seed) {
  if (manifest.empty()) throw ValidationError("cannot split an empty manifest");
  if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
    throw ValidationError("split ratios must be non-negative and sum to 1");

  std::set<std::string> unique;
  for (const auto& rec : manifest) unique.insert(rec.patient_id);
  std::vector<std::string> patients(unique.begin(), unique.end());
  auto rng = make_rng(seed, {0x5b11});
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle.
  for (std::size_t i = patients.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(patients[i - 1], patients[j]);
  }

  const double n = static_cast<double>(patients.size());
  const auto cut1 = static_cast<std::size_t>(std::llround(n * r.train));
  const auto cut2 = std::max(cut1, std::min(patients.size(), static_cast<std::size_t>(std::llround(n * (r.train + r.val)))));

  std::map<std::string, int> part;
  for (std::size_t i = 0; i < patients.size(); ++i) part[patients[i]] = i < cut1 ? 0 : (i < cut2 ? 1 : 2);

  Split s;
  for (const auto& rec : manifest) {
    switch (part.at(rec.patient_id)) {
      case 0:
        s.train.push_back(rec);
        break;
      case 1:
        s.val.push_back(rec);
        break;
      default:
        s.test.push_back(rec);
    }
  }
  return s;
}

}  // namespace tdce::pipeline
