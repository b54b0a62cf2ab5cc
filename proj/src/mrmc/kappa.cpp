#include "tdce/mrmc/kappa.hpp"

#include <cmath>
#include <set>

#include "tdce/common/error.hpp"

namespace tdce::mrmc {

KappaResult fleiss_kappa(const std::vector<std::vector<int>>& counts) {
  if (counts.empty()) throw ValidationError("Fleiss' kappa needs at least one case");
  const std::size_t k = counts[0].size();
  if (k < 1) throw ValidationError("Fleiss' kappa needs at least one category");
  long long n = -1;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i].size() != k) throw ValidationError("ragged category-count matrix");
    long long row = 0;
    for (int c : counts[i]) {
      if (c < 0) throw ValidationError("negative category count");
      row += c;
    }
    if (n < 0) n = row;
    if (row != n) throw ValidationError("case " + std::to_string(i) + " rated by " + std::to_string(row) +
                                        " raters, expected " + std::to_string(n));
  }
  if (n < 2) throw ValidationError("Fleiss' kappa needs >= 2 raters per case");

  const double N = static_cast<double>(counts.size()), nr = static_cast<double>(n);
  std::vector<double> p(k, 0.0);
  double p_bar = 0.0;
  for (const auto& row : counts) {
    double agree = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] += row[j];
      agree += static_cast<double>(row[j]) * (row[j] - 1);
    }
    p_bar += agree / (nr * (nr - 1));
  }
  p_bar /= N;
  double p_e = 0.0;
  for (auto& pj : p) {
    pj /= N * nr;
    p_e += pj * pj;
  }
  KappaResult r;
  r.p_bar = p_bar;
  r.p_e = p_e;
  r.cases = counts.size();
  r.raters = static_cast<std::size_t>(n);
  if (p_e >= 1.0) {
    r.defined = false;
    r.kappa = std::nan("");
  } else {
    r.kappa = (p_bar - p_e) / (1.0 - p_e);
  }
  return r;
}

std::vector<std::vector<int>> category_counts(const std::vector<std::vector<int>>& matrix, int n_categories) {
  if (n_categories < 1) throw ValidationError("need >= 1 category");
  std::vector<std::vector<int>> out;
  out.reserve(matrix.size());
  for (const auto& row : matrix) {
    std::vector<int> c(static_cast<std::size_t>(n_categories), 0);
    for (int v : row) {
      if (v < 0 || v >= n_categories) throw ValidationError("category index out of range: " + std::to_string(v));
      ++c[static_cast<std::size_t>(v)];
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::map<Condition, KappaResult> kappa_by_condition(const std::vector<ReaderRating>& ratings, bool birads_scale) {
  std::map<Condition, std::map<std::string, std::map<std::string, int>>> by;  // cond -> case -> reader -> category
  for (const auto& r : ratings) {
    const int cat = birads_scale ? r.birads : (r.suspicious ? 1 : 0);
    if (!by[r.condition][r.case_id].emplace(r.reader_id, cat).second)
      throw ValidationError("duplicate rating for reader " + r.reader_id + ", case " + r.case_id);
  }
  std::map<Condition, KappaResult> out;
  for (const auto& [cond, cases] : by) {
    std::set<std::string> readers;
    for (const auto& [c, rs] : cases)
      for (const auto& [rid, v] : rs) readers.insert(rid);
    std::vector<std::vector<int>> matrix;
    for (const auto& [c, rs] : cases) {
      if (rs.size() != readers.size()) continue;  // incomplete cases are left out
      std::vector<int> row;
      for (const auto& [rid, v] : rs) row.push_back(v);
      matrix.push_back(std::move(row));
    }
    if (matrix.empty() || readers.size() < 2) continue;
    out[cond] = fleiss_kappa(category_counts(matrix, birads_scale ? 7 : 2));
  }
  return out;
}

}  // namespace tdce::mrmc
