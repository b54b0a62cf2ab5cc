#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "tdce/common/error.hpp"
#include "tdce/mrmc/glmm.hpp"
#include "tdce/mrmc/kappa.hpp"
#include "tdce/mrmc/plan.hpp"
#include "tdce/mrmc/ratings.hpp"

using namespace tdce;
using namespace tdce::mrmc;

TEST_CASE("Fleiss' kappa on the 10 x 14 textbook table") {
  const std::vector<std::vector<int>> counts{
      {0, 0, 0, 0, 14}, {0, 2, 6, 4, 2}, {0, 0, 3, 5, 6}, {0, 3, 9, 2, 0}, {2, 2, 8, 1, 1},
      {7, 7, 0, 0, 0},  {3, 2, 6, 3, 0}, {2, 5, 3, 2, 2}, {6, 5, 2, 1, 0}, {0, 2, 2, 3, 7}};
  const auto k = fleiss_kappa(counts);
  CHECK(k.p_bar == doctest::Approx(0.378).epsilon(1e-3));
  CHECK(k.p_e == doctest::Approx(0.213).epsilon(2e-3));
  CHECK(k.kappa == doctest::Approx(0.20993).epsilon(1e-4));
}

TEST_CASE("kappa edge cases") {
  CHECK(fleiss_kappa({{3, 0}, {0, 3}, {3, 0}}).kappa == 1.0);
  const auto all_one = fleiss_kappa({{3, 0}, {3, 0}});
  CHECK_FALSE(all_one.defined);
  CHECK(std::isnan(all_one.kappa));
  CHECK_THROWS_AS(fleiss_kappa({{2, 1}, {1, 1}}), ValidationError);  // unequal rater counts
}

TEST_CASE("category counts from a case x rater matrix") {
  const auto c = category_counts({{0, 1, 1}, {2, 2, 2}}, 3);
  CHECK(c == std::vector<std::vector<int>>{{1, 2, 0}, {0, 0, 3}});
}

namespace {

std::vector<StudyCase> cases(int n) {
  std::vector<StudyCase> out;
  for (int i = 0; i < n; ++i) {
    const std::string id = "C" + std::to_string(i);
    out.push_back({id, {{"CC", id + "_g.png", id + "_t.png"}}});
  }
  return out;
}

}  // namespace

TEST_CASE("plan: Latin square by tier, per-session permutations") {
  const std::vector<Reader> readers{{"s1", Tier::senior}, {"j1", Tier::junior}, {"i1", Tier::intermediate},
                                    {"j2", Tier::junior}};
  const auto p = build_plan(readers, cases(9), 5);
  validate(p);
  // Grouped junior, intermediate, senior; rows round-robin in that order.
  CHECK(p.reader("j1").latin_row == 0);
  CHECK(p.reader("j2").latin_row == 1);
  CHECK(p.reader("i1").latin_row == 2);
  CHECK(p.reader("s1").latin_row == 0);
  for (const auto& r : p.readers) {
    CHECK(r.order == kLatinSquare[static_cast<std::size_t>(r.latin_row)]);
    for (const auto& order : r.case_order) {
      auto sorted = order;
      std::sort(sorted.begin(), sorted.end());
      std::vector<std::string> ids;
      for (const auto& c : p.cases) ids.push_back(c.case_id);
      std::sort(ids.begin(), ids.end());
      CHECK(sorted == ids);
    }
  }
  nlohmann::json a = p, b = build_plan(readers, cases(9), 5);
  CHECK(a == b);
  StudyPlan back = a.get<StudyPlan>();
  CHECK(nlohmann::json(back) == a);
  CHECK(p.washout_days == 28);
}

TEST_CASE("each condition is read exactly once per reader") {
  for (const auto& row : kLatinSquare) {
    std::set<Condition> s(row.begin(), row.end());
    CHECK(s.size() == 3);
  }
  for (std::size_t k = 0; k < 3; ++k) {
    std::set<Condition> col;
    for (const auto& row : kLatinSquare) col.insert(row[k]);
    CHECK(col.size() == 3);
  }
}

TEST_CASE("reading time counts closed intervals only") {
  CHECK(interval_seconds({{0, 1500}, {4000, 5000}}) == doctest::Approx(2.5));
  CHECK_THROWS_AS(interval_seconds({{0, 2000}, {1000, 3000}}), ValidationError);
  CHECK_THROWS_AS(interval_seconds({{5, 5}}), ValidationError);
}

TEST_CASE("ratings CSV: header, 2 readers x 3 cases x 1 condition -> 6 rows") {
  std::vector<ReaderRating> rs;
  for (const char* reader : {"R1", "R2"})
    for (int c = 0; c < 3; ++c)
      rs.push_back({reader, "C" + std::to_string(c), Condition::tdce_only, c == 1, c == 1 ? 4 : 2, {{0, 1000}}, {}});
  const auto text = ratings_csv(rs);
  CHECK(text.rfind(std::string(kRatingsHeader) + "\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 7);
  std::istringstream in(text);
  const auto back = parse_ratings_csv(in);
  REQUIRE(back.size() == 6);
  CHECK(back[1].suspicious);
  CHECK(back[1].birads == 4);
  CHECK(*back[0].total_seconds == 1.0);
  CHECK(ratings_csv(back) == text);
}

TEST_CASE("reader table against a reference") {
  std::vector<ReaderRating> rs{{"R1", "C0", Condition::grayscale_only, true, 4, {}, 1.0},
                               {"R1", "C1", Condition::grayscale_only, true, 4, {}, 1.0},
                               {"R1", "C2", Condition::grayscale_only, false, 2, {}, 1.0},
                               {"R1", "C3", Condition::grayscale_only, false, 2, {}, 1.0}};
  const ReferenceLabels ref{{"C0", 1}, {"C1", 0}, {"C2", 0}, {"C3", 1}};
  const auto t = reader_table(rs, ref, {{"R1", Tier::senior}});
  const auto& cell = t.per_reader.at({"R1", Condition::grayscale_only});
  CHECK(cell.tp == 1);
  CHECK(cell.fp == 1);
  CHECK(cell.tn == 1);
  CHECK(cell.fn == 1);
  CHECK(cell.accuracy == 0.5);
  const ReferenceLabels partial{{"C0", 1}};
  CHECK_THROWS_AS(reader_table(rs, partial, {}), ValidationError);
  CHECK_NOTHROW(reader_table(rs, partial, {}, CallSource::binary, {"C1", "C2", "C3"}));
}

TEST_CASE("GLMM recovers a simulated condition effect") {
  GlmmSimulation sim;
  sim.readers = 12;
  sim.cases = 80;
  const auto data = simulate_glmm(sim, 17);
  const auto fit = glmm_fit(data);
  CHECK(fit.converged);
  REQUIRE(fit.beta.size() == 2);
  CHECK(fit.beta[1] == doctest::Approx(0.8).epsilon(0.5));
  CHECK(fit.sigma2_case > 0.0);
  for (std::size_t i = 1; i < fit.loglik_trace.size(); ++i) CHECK(fit.loglik_trace[i] >= fit.loglik_trace[i - 1] - 1e-9);
}

TEST_CASE("GLMM design needs two conditions") {
  std::vector<ReaderRating> rs{{"R1", "C0", Condition::grayscale_only, true, 4, {}, 1.0},
                               {"R2", "C0", Condition::grayscale_only, false, 2, {}, 1.0}};
  CHECK_THROWS_AS(glmm_data_from_ratings(rs, {{"C0", 1}}, GlmmSubset::all), ValidationError);
}
