#include <doctest.h>

#include <cmath>
#include <random>

#include "tdce/common/error.hpp"
#include "tdce/metrics/evaluation.hpp"

using namespace tdce;
using namespace tdce::metrics;

TEST_CASE("AUC of a small hand-counted example") {
  // Pairs (pos, neg): (0.35,0.1)>, (0.35,0.4)<, (0.8,0.1)>, (0.8,0.4)> -> 3/4.
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> l{0, 0, 1, 1};
  const auto r = roc_auc(s, l);
  CHECK(r.auc == 0.75);
  CHECK(trapezoid_area(r.curve) == doctest::Approx(0.75));
  CHECK(r.curve.front().fpr == 0.0);
  CHECK(r.curve.back().tpr == 1.0);
}

TEST_CASE("ties count one half") {
  const std::vector<double> s{0.5, 0.5, 0.5, 0.5};
  const std::vector<int> l{0, 1, 0, 1};
  CHECK(auc(s, l) == 0.5);
}

TEST_CASE("AUC input validation") {
  const std::vector<double> s{0.1, 0.2};
  CHECK_THROWS_AS(auc(s, std::vector<int>{1, 1}), ValidationError);
  CHECK_THROWS_AS(auc(s, std::vector<int>{0, 2}), ValidationError);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1, NAN}, std::vector<int>{0, 1}), ValidationError);
}

TEST_CASE("Youden threshold prefers higher specificity on ties") {
  // t=0.3 and t=0.9 both give J=0.5; 0.9 has the higher specificity.
  const std::vector<double> s{0.1, 0.3, 0.6, 0.9};
  const std::vector<int> l{0, 1, 0, 1};
  CHECK(youden_threshold(s, l) == 0.9);
  const std::vector<double> s2{0.1, 0.2, 0.7, 0.8};
  CHECK(youden_threshold(s2, std::vector<int>{0, 0, 1, 1}) == 0.7);
}

TEST_CASE("operating metrics report 0/0 as NaN") {
  const std::vector<double> s{0.2, 0.3};
  const std::vector<int> l{0, 0};
  const auto op = operating_metrics(s, l, 0.9);
  CHECK(std::isnan(op.sensitivity));
  CHECK(op.specificity == 1.0);
}

TEST_CASE("DeLong on identical scores gives p = 1") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  std::vector<double> s;
  std::vector<int> l;
  for (int i = 0; i < 40; ++i) {
    l.push_back(i % 3 == 0);
    s.push_back(n(rng) + l.back());
  }
  const auto d = delong_paired(s, s, l);
  CHECK(d.delta == 0.0);
  CHECK(d.p == 1.0);
  CHECK_FALSE(d.degenerate);
}

TEST_CASE("DeLong variance of a perfect classifier is zero") {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> l{0, 0, 1, 1};
  CHECK(delong_variance(s, l) == 0.0);
}

TEST_CASE("McNemar exact and corrected branches") {
  auto r = mcnemar_counts(10, 0);
  CHECK(r.exact);
  CHECK(r.p == 0.001953125);
  CHECK(mcnemar_counts(0, 0).no_discordance);
  CHECK(mcnemar_counts(0, 0).p == 1.0);
  r = mcnemar_counts(30, 30);
  CHECK_FALSE(r.exact);
  CHECK(r.p == 1.0);
  r = mcnemar_counts(40, 20);  // (|40-20|-1)^2/60 = 6.0167
  CHECK(r.statistic == doctest::Approx(361.0 / 60.0));
}

TEST_CASE("bootstrap CI is deterministic and thread-count independent") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  std::vector<double> s;
  std::vector<int> l;
  std::vector<std::string> pid;
  for (int i = 0; i < 60; ++i) {
    l.push_back(i % 2);
    s.push_back(n(rng) + l.back());
    pid.push_back("P" + std::to_string(i / 2));  // two records per patient
  }
  BootstrapOptions o;
  o.n_resamples = 300;
  o.seed = 99;
  const auto a = bootstrap_auc(s, l, pid, o);
  o.threads = 3;
  const auto b = bootstrap_auc(s, l, pid, o);
  CHECK(a.lower == b.lower);
  CHECK(a.upper == b.upper);
  CHECK(a.lower <= a.point);
  CHECK(a.point <= a.upper);
  o.seed = 100;
  CHECK(bootstrap_auc(s, l, pid, o).lower != a.lower);
}

TEST_CASE("type-7 quantile") {
  const std::vector<double> v{1, 2, 3, 4};
  CHECK(quantile_sorted(v, 0.0) == 1.0);
  CHECK(quantile_sorted(v, 0.5) == 2.5);
  CHECK(quantile_sorted(v, 0.25) == doctest::Approx(1.75));
}

namespace {

pipeline::PredictionRecord rec(const std::string& p, const char* lat, double score, bool pos,
                               pipeline::Density d = pipeline::Density::B,
                               std::vector<pipeline::Finding> f = {pipeline::Finding::none}) {
  pipeline::PredictionRecord r;
  r.patient_id = p;
  r.study_id = "S";
  r.laterality = pipeline::parse_laterality(lat);
  r.score = score;
  r.label = pos ? pipeline::TriageLabel::positive : pipeline::TriageLabel::negative;
  r.density = d;
  r.findings = std::move(f);
  return r;
}

}  // namespace

TEST_CASE("evaluating one model against itself: DeLong p = 1, McNemar p = 1") {
  std::vector<pipeline::PredictionRecord> a;
  for (int i = 0; i < 30; ++i) a.push_back(rec("P" + std::to_string(i), i % 2 ? "L" : "R", 0.03 * i, i % 3 == 0));
  EvaluationOptions opt;
  opt.bootstrap.n_resamples = 100;
  const auto e = evaluate_paired(pair_predictions(a, a), opt);
  CHECK(e.delong.p == 1.0);
  CHECK(e.mcnemar.p == 1.0);
  CHECK(e.a.auc.point == e.b.auc.point);
  const auto j = to_json(e);
  CHECK(j.contains("delong"));
}

TEST_CASE("pairing rejects mismatched key sets") {
  std::vector<pipeline::PredictionRecord> a{rec("P1", "L", 0.1, true), rec("P2", "L", 0.2, false)};
  std::vector<pipeline::PredictionRecord> b{rec("P1", "L", 0.1, true), rec("P3", "L", 0.2, false)};
  CHECK_THROWS_AS(pair_predictions(a, b), ValidationError);
}

TEST_CASE("finding subgroups keep every negative") {
  using pipeline::Finding;
  std::vector<pipeline::PredictionRecord> a;
  for (int i = 0; i < 6; ++i) a.push_back(rec("N" + std::to_string(i), "L", 0.1 * i, false));
  a.push_back(rec("M1", "L", 0.9, true, pipeline::Density::C, {Finding::mass}));
  a.push_back(rec("M2", "L", 0.8, true, pipeline::Density::C, {Finding::mass, Finding::calcification}));
  a.push_back(rec("C1", "L", 0.7, true, pipeline::Density::A, {Finding::calcification}));
  EvaluationOptions opt;
  opt.bootstrap.n_resamples = 50;
  const auto rows = subgroup_eval(a, a, SubgroupSelector::finding, opt);
  for (const auto& r : rows) {
    if (r.subgroup == "mass" || r.subgroup == "calcification") {
      CHECK(r.n_pos == 2);
      CHECK(r.n_neg == 6);
    }
  }
}
