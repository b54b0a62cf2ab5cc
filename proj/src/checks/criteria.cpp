#include "tdce/checks/criteria.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

#include "tdce/checks/oracles.hpp"
#include "tdce/common/random.hpp"
#include "tdce/diffcore/grad_check.hpp"
#include "tdce/imaging/preprocess.hpp"
#include "tdce/metrics/bootstrap.hpp"
#include "tdce/metrics/delong.hpp"
#include "tdce/metrics/mcnemar.hpp"
#include "tdce/metrics/roc.hpp"
#include "tdce/models/network.hpp"
#include "tdce/mrmc/glmm.hpp"
#include "tdce/mrmc/kappa.hpp"
#include "tdce/pipeline/prediction.hpp"
#include "tdce/pipeline/split.hpp"
#include "tdce/pipeline/synthetic.hpp"
#include "tdce/pipeline/training.hpp"
#include "tdce/study/service.hpp"

namespace tdce::checks {

namespace fs = std::filesystem;
using nlohmann::json;

CheckResult timed(const std::string& name, const std::function<CheckResult()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = fn();
  } catch (const std::exception& e) {
    r.passed = false;
    r.summary = std::string("exception: ") + e.what();
  }
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

namespace {

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Random labels with both classes, and scores on a coarse grid so ties occur.
void random_instance(Rng& rng, std::size_t n, std::vector<double>& scores, std::vector<int>& labels) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  static constexpr int kGrids[] = {2, 3, 7, 20, 1000};
  const int grid = kGrids[rng() % 5];
  const double prevalence = 0.1 + 0.8 * u(rng);
  scores.resize(n);
  labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = u(rng) < prevalence ? 1 : 0;
    scores[i] = std::floor((u(rng) + 0.3 * labels[i]) * grid) / grid;
  }
  labels[0] = 1;
  labels[1] = 0;
}

pipeline::Dataset in_memory_dataset(const pipeline::Manifest& m, const std::map<std::string, const imaging::RawImage*>& images,
                                    const models::ModelConfig& c) {
  pipeline::Dataset d;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto label = pipeline::map_birads_to_label(m[i].birads);
    if (label == pipeline::TriageLabel::excluded) continue;
    if (m[i].birads.category == 6) continue;
    const auto img = imaging::preprocess(*images.at(m[i].image_path), c.input_height, c.input_width);
    d.samples.push_back({models::model_input(c, img), label == pipeline::TriageLabel::positive ? 1 : 0, i});
  }
  return d;
}

models::ModelConfig synthetic_model(models::FrontEnd front) {
  models::ModelConfig c;
  c.front_end = front;
  c.input_height = c.input_width = 32;
  c.tdce.base_channels = 8;
  return c;
}

}  // namespace

CheckResult check_gradients(const CheckOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  models::ModelConfig c;
  c.front_end = models::FrontEnd::tdce;
  c.input_height = c.input_width = 32;
  c.tdce.base_channels = 4;
  c.backbone.widths = {8, 16};
  c.head.hidden = 8;
  auto params = models::init_params(c, o.seed);
  Rng rng = make_rng(o.seed, {0x9c});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  diff::Tensor x({1, 32, 32});
  for (auto& v : x.storage()) v = u(rng);

  diff::LossBuilder loss = [&](diff::Tape& t) {
    const auto logit = models::logit_forward(t, c, t.input(x));
    return t.bce_with_logits(logit, 1.0);
  };
  const auto report = diff::grad_check(params, loss, {});
  const double secs = elapsed(t0);
  CheckResult r;
  r.passed = report.passed && report.max_rel_error < 1e-4 && secs < 120.0;
  std::size_t checked = 0;
  json per = json::object();
  for (const auto& p : report.params) {
    checked += p.checked;
    per[p.name] = p.rel_error;
  }
  r.summary = "max rel error " + fmt(report.max_rel_error, 3) + " (< 1e-4) over " + std::to_string(checked) +
              " elements, " + fmt(secs, 3) + " s (< 120 s)";
  r.detail = {{"max_rel_error", report.max_rel_error}, {"elements", checked}, {"per_param", per}};
  return r;
}

CheckResult check_freezing(const CheckOptions& o) {
  pipeline::SyntheticConfig sc;
  sc.patients = 40;
  sc.seed = o.seed;
  const auto cases = pipeline::synthesize(sc, o.threads);
  pipeline::Manifest m;
  std::map<std::string, const imaging::RawImage*> images;
  for (const auto& cs : cases) {
    m.push_back(cs.record);
    images[cs.record.image_path] = &cs.image;
  }
  const auto split = pipeline::split_patients(m, {}, o.seed);
  const auto c = synthetic_model(models::FrontEnd::tdce);
  const auto train = in_memory_dataset(split.train, images, c);
  const auto val = in_memory_dataset(split.val, images, c);
  pipeline::TrainConfig tc;
  tc.epochs = 20;
  tc.seed = o.seed;
  tc.threads = o.threads;
  const auto before = pipeline::initial_params(c, o.seed);
  const auto res = pipeline::train_tdce(c, tc, train, val);
  const auto& after = res.checkpoint.params;

  CheckResult r;
  const bool backbone_same = before.hash_prefix("backbone.") == after.hash_prefix("backbone.");
  const bool tdce_changed = before.hash_prefix("tdce.") != after.hash_prefix("tdce.");
  const bool head_changed = before.hash_prefix("head.") != after.hash_prefix("head.");
  bool flags_ok = true;
  for (const auto& p : after) flags_ok &= p.trainable == (p.name.rfind("backbone.", 0) != 0);
  r.passed = backbone_same && tdce_changed && head_changed && flags_ok && res.log.size() == 20;
  r.summary = std::string("epochs ") + std::to_string(res.log.size()) + ", backbone hash " +
              (backbone_same ? "identical" : "CHANGED") + ", tdce hash " + (tdce_changed ? "changed" : "UNCHANGED") +
              ", head hash " + (head_changed ? "changed" : "UNCHANGED");
  r.detail = {{"backbone_before", before.hash_prefix("backbone.")},
              {"backbone_after", after.hash_prefix("backbone.")},
              {"tdce_before", before.hash_prefix("tdce.")},
              {"tdce_after", after.hash_prefix("tdce.")},
              {"head_before", before.hash_prefix("head.")},
              {"head_after", after.hash_prefix("head.")},
              {"train_images", train.samples.size()}};
  return r;
}

CheckResult check_directionality(const CheckOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kSeeds = 5;
  constexpr int kEpochs = 10;
  std::vector<double> deltas, ps;
  json runs = json::array();
  for (int s = 0; s < kSeeds; ++s) {
    const std::uint64_t seed = derive_seed(o.seed, {0xd1, static_cast<std::uint64_t>(s)});
    pipeline::SyntheticConfig sc;  // 500 patients x 4 views = 2000 images
    sc.seed = seed;
    const auto cases = pipeline::synthesize(sc, o.threads);
    pipeline::Manifest m;
    std::map<std::string, const imaging::RawImage*> images;
    for (const auto& cs : cases) {
      m.push_back(cs.record);
      images[cs.record.image_path] = &cs.image;
    }
    const auto split = pipeline::split_patients(m, {}, seed);

    std::map<pipeline::Regime, pipeline::ScoredSet> breast;
    for (auto regime : {pipeline::Regime::tdce, pipeline::Regime::gray_baseline}) {
      const auto c = synthetic_model(regime == pipeline::Regime::tdce ? models::FrontEnd::tdce
                                                                      : models::FrontEnd::replicate);
      pipeline::TrainConfig tc;
      tc.epochs = kEpochs;
      tc.seed = seed;
      tc.threads = o.threads;
      tc.trainable_backbone_stages = 0;  // frozen backbone in both regimes
      const auto train = in_memory_dataset(split.train, images, c);
      const auto val = in_memory_dataset(split.val, images, c);
      const auto test = in_memory_dataset(split.test, images, c);
      const auto res = regime == pipeline::Regime::tdce ? pipeline::train_tdce(c, tc, train, val)
                                                        : pipeline::train_gray_baseline(c, tc, train, val);
      const auto probs = pipeline::predict_samples(res.checkpoint.params, c, test.samples, o.threads);
      std::vector<pipeline::PredictionRecord> views;
      for (std::size_t i = 0; i < test.samples.size(); ++i) {
        auto rec = pipeline::prediction_stub(split.test[test.samples[i].record]);
        rec.score = probs[i];
        views.push_back(std::move(rec));
      }
      breast[regime] = pipeline::scored_subset(pipeline::aggregate_breast(views));
    }
    const auto& a = breast[pipeline::Regime::tdce];
    const auto& b = breast[pipeline::Regime::gray_baseline];
    if (a.labels != b.labels) throw std::logic_error("breast sets of the two regimes are not aligned");
    const auto d = metrics::delong_paired(a.scores, b.scores, a.labels);
    deltas.push_back(d.delta);
    ps.push_back(d.p);
    runs.push_back({{"seed", seed}, {"tdce_auc", d.auc_a}, {"baseline_auc", d.auc_b}, {"delta", d.delta}, {"p", d.p},
                    {"breasts", a.labels.size()}});
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double md = median(deltas), mp = median(ps), secs = elapsed(t0);
  CheckResult r;
  r.passed = md >= 0.05 && mp < 0.05 && secs < 1800.0;
  r.summary = "median dAUC " + fmt(md) + " (>= 0.05), median DeLong p " + fmt(mp, 3) + " (< 0.05), " +
              fmt(secs, 4) + " s (< 1800 s)";
  r.detail = {{"runs", runs}, {"median_delta", md}, {"median_p", mp}, {"epochs", kEpochs}};
  return r;
}

CheckResult check_auc_oracle(const CheckOptions& o) {
  Rng rng = make_rng(o.seed, {0xa0c});
  int mismatches = 0;
  std::vector<double> s;
  std::vector<int> l;
  for (int i = 0; i < 200; ++i) {
    random_instance(rng, 2 + rng() % 199, s, l);
    const double expect = brute_force_auc(s, l);
    if (metrics::roc_auc(s, l).auc != expect || metrics::auc(s, l) != expect) ++mismatches;
  }
  CheckResult r;
  r.passed = mismatches == 0;
  r.summary = std::to_string(200 - mismatches) + "/200 instances bit-identical to the pairwise count";
  return r;
}

CheckResult check_youden_oracle(const CheckOptions& o) {
  Rng rng = make_rng(o.seed, {0x70d});
  int mismatches = 0;
  std::vector<double> s;
  std::vector<int> l;
  for (int i = 0; i < 200; ++i) {
    random_instance(rng, 2 + rng() % 199, s, l);
    if (metrics::youden_threshold(s, l) != exhaustive_youden(s, l)) ++mismatches;
  }
  CheckResult r;
  r.passed = mismatches == 0;
  r.summary = std::to_string(200 - mismatches) + "/200 instances equal to the exhaustive scan";
  return r;
}

CheckResult check_delong(const CheckOptions& o) {
  Rng rng = make_rng(o.seed, {0xde1});
  std::normal_distribution<double> z(0.0, 1.0);
  int identical_bad = 0, symmetry_bad = 0, variance_bad = 0;
  double worst_ratio = 1.0;
  std::vector<double> s;
  std::vector<int> l;
  for (int i = 0; i < 100; ++i) {
    random_instance(rng, 10 + rng() % 191, s, l);
    std::size_t pos = std::count(l.begin(), l.end(), 1);
    if (pos < 2 || l.size() - pos < 2) {
      l[2 % l.size()] = 1;
      l[3 % l.size()] = 0;
    }
    if (metrics::delong_paired(s, s, l).p != 1.0) ++identical_bad;
  }
  for (int i = 0; i < 100; ++i) {
    // n = 50: 25 per class, correlated binormal scores for two models.
    std::vector<double> a(50), b(50);
    std::vector<int> lab(50);
    for (int k = 0; k < 50; ++k) {
      lab[k] = k < 25 ? 1 : 0;
      const double shared = z(rng);
      a[k] = shared + (lab[k] ? 1.0 : 0.0) + 0.5 * z(rng);
      b[k] = 0.7 * shared + (lab[k] ? 0.6 : 0.0) + 0.7 * z(rng);
    }
    const double v = metrics::delong_variance(a, lab), jk = jackknife_auc_variance(a, lab);
    const double ratio = v / jk;
    if (std::abs(ratio - 1.0) > std::abs(worst_ratio - 1.0)) worst_ratio = ratio;
    if (std::abs(ratio - 1.0) > 0.10) ++variance_bad;
    const auto ab = metrics::delong_paired(a, b, lab), ba = metrics::delong_paired(b, a, lab);
    if (ab.p != ba.p || ab.z != -ba.z) ++symmetry_bad;
  }
  CheckResult r;
  r.passed = identical_bad == 0 && symmetry_bad == 0 && variance_bad == 0;
  r.summary = "identical inputs p=1: " + std::to_string(100 - identical_bad) + "/100; variance/jackknife worst " +
              fmt(worst_ratio, 6) + " (within 10%): " + std::to_string(100 - variance_bad) +
              "/100; swap symmetry: " + std::to_string(100 - symmetry_bad) + "/100";
  return r;
}

CheckResult check_bootstrap(const CheckOptions& o) {
  constexpr int kSims = 300;
  const double true_auc = 0.5 * std::erfc(-(1.0 / std::sqrt(2.0)) / std::sqrt(2.0));  // Phi(1/sqrt 2)
  Rng rng = make_rng(o.seed, {0xb00});
  std::normal_distribution<double> z(0.0, 1.0);
  int covered = 0;
  bool deterministic = true;
  for (int sim = 0; sim < kSims; ++sim) {
    std::vector<double> s(100);
    std::vector<int> l(100);
    std::vector<std::string> ids(100);
    for (int k = 0; k < 100; ++k) {
      l[k] = k < 50 ? 1 : 0;
      s[k] = z(rng) + (l[k] ? 1.0 : 0.0);
      ids[k] = "P" + std::to_string(k);
    }
    metrics::BootstrapOptions bo;
    bo.n_resamples = 2000;
    bo.seed = derive_seed(o.seed, {0xb01, static_cast<std::uint64_t>(sim)});
    bo.threads = o.threads;
    const auto ci = metrics::bootstrap_auc(s, l, ids, bo);
    if (sim < 3) {
      bo.threads = o.threads == 1 ? 2 : 1;
      const auto again = metrics::bootstrap_auc(s, l, ids, bo);
      deterministic &= again.lower == ci.lower && again.upper == ci.upper && again.point == ci.point;
    }
    if (ci.lower <= true_auc && true_auc <= ci.upper) ++covered;
  }
  const double coverage = static_cast<double>(covered) / kSims;
  CheckResult r;
  r.passed = deterministic && coverage >= 0.92 && coverage <= 0.98;
  r.summary = "coverage " + fmt(coverage) + " over 300 simulations (in [0.92, 0.98]), 2000 resamples, " +
              (deterministic ? "deterministic under seed" : "NOT deterministic");
  r.detail = {{"true_auc", true_auc}, {"covered", covered}};
  return r;
}

CheckResult check_mcnemar(const CheckOptions&) {
  const double p10 = metrics::mcnemar_counts(10, 0).p;
  bool equal_ok = true;
  for (std::size_t b = 0; b <= 100; ++b) equal_ok &= metrics::mcnemar_counts(b, b).p == 1.0;
  bool oracle_ok = true;
  for (unsigned b = 0; b < 25; ++b)
    for (unsigned c = 0; b + c < 25; ++c)
      oracle_ok &= std::abs(metrics::mcnemar_counts(b, c).p - static_cast<double>(mcnemar_exact(b, c))) < 1e-15;
  CheckResult r;
  r.passed = p10 == 0.001953125 && equal_ok && oracle_ok;
  r.summary = "b=10,c=0 p=" + fmt(p10, 12) + " (exactly 0.001953125); b=c p=1 for b<=100: " +
              (equal_ok ? "yes" : "NO") + "; exact branch vs binomial oracle: " + (oracle_ok ? "match" : "MISMATCH");
  return r;
}

CheckResult check_kappa(const CheckOptions& o) {
  Rng rng = make_rng(o.seed, {0x4a9});
  bool perfect_ok = true;
  for (int i = 0; i < 50; ++i) {
    const int cases = 3 + static_cast<int>(rng() % 40), raters = 2 + static_cast<int>(rng() % 10),
              k = 2 + static_cast<int>(rng() % 6);
    std::vector<std::vector<int>> m(cases);
    for (int c = 0; c < cases; ++c) m[c].assign(raters, c < 2 ? c : static_cast<int>(rng() % k));
    perfect_ok &= mrmc::fleiss_kappa(mrmc::category_counts(m, k)).kappa == 1.0;
  }
  double worst = 0;
  for (int i = 0; i < 200; ++i) {
    const int cases = 2 + static_cast<int>(rng() % 60), raters = 2 + static_cast<int>(rng() % 12),
              k = 2 + static_cast<int>(rng() % 6);
    std::vector<std::vector<int>> m(cases, std::vector<int>(raters));
    for (auto& row : m)
      for (auto& v : row) v = static_cast<int>(rng() % k);
    m[0][0] = 0;
    m[0][1] = 1;  // at least two categories in use
    const auto res = mrmc::fleiss_kappa(mrmc::category_counts(m, k));
    worst = std::max(worst, std::abs(res.kappa - fleiss_kappa_pairs(m, k)));
  }
  CheckResult r;
  r.passed = perfect_ok && worst <= 1e-12;
  r.summary = std::string("perfect agreement -> 1: ") + (perfect_ok ? "yes" : "NO") +
              "; max |kappa - oracle| over 200 random matrices " + fmt(worst, 3) + " (<= 1e-12)";
  return r;
}

CheckResult check_glmm(const CheckOptions& o) {
  constexpr int kReps = 50;
  mrmc::GlmmSimulation sim;  // 20 readers x 200 cases, beta 0.8, sigmas 0.5 / 1.0
  double sum_beta = 0;
  int fitted = 0;
  for (int i = 0; i < kReps; ++i) {
    const auto data = mrmc::simulate_glmm(sim, derive_seed(o.seed, {0x61, static_cast<std::uint64_t>(i)}));
    const auto fit = mrmc::glmm_fit(data);
    if (fit.converged) ++fitted;
    sum_beta += fit.beta.at(1);
  }
  const double mean_beta = sum_beta / kReps;

  mrmc::GlmmSimulation zero = sim;
  zero.sigma_reader = 0.0;
  zero.sigma_case = 0.0;
  std::vector<double> sum_abs(2, 0.0);
  double worst = 0;
  int zero_fitted = 0;
  for (int i = 0; i < kReps; ++i) {
    const auto data = mrmc::simulate_glmm(zero, derive_seed(o.seed, {0x62, static_cast<std::uint64_t>(i)}));
    const auto fit = mrmc::glmm_fit(data);
    if (fit.converged) ++zero_fitted;
    const auto lr = logistic_fit(data.y, data.x, data.p);
    for (std::size_t k = 0; k < 2; ++k) {
      const double d = std::abs(fit.beta[k] - lr[k]);
      sum_abs[k] += d;
      worst = std::max(worst, d);
    }
  }
  const double mad = std::max(sum_abs[0], sum_abs[1]) / kReps;
  CheckResult r;
  r.passed = std::abs(mean_beta - 0.8) <= 0.15 && mad <= 1e-3 && fitted == kReps && zero_fitted == kReps;
  r.summary = "mean beta_condition " + fmt(mean_beta) + " (0.8 +/- 0.15, " + std::to_string(fitted) +
              "/50 converged); zero-variance mean |beta_glmm - beta_logistic| " + fmt(mad, 3) + " (<= 1e-3, " +
              std::to_string(zero_fitted) + "/50 converged; worst single fit " + fmt(worst, 3) + ")";
  r.detail = {{"mean_beta", mean_beta},
              {"zero_variance_mean_abs_diff", {sum_abs[0] / kReps, sum_abs[1] / kReps}},
              {"zero_variance_worst", worst}};
  return r;
}

CheckResult check_otsu(const CheckOptions& o) {
  Rng rng = make_rng(o.seed, {0x075});
  std::normal_distribution<double> z(0.0, 1.0);
  int mismatches = 0;
  for (int i = 0; i < 100; ++i) {
    imaging::RawImage img;
    img.width = 8 + static_cast<int>(rng() % 57);
    img.height = 8 + static_cast<int>(rng() % 57);
    img.bit_depth = 8;
    const double m0 = static_cast<double>(rng() % 256), m1 = static_cast<double>(rng() % 256);
    const double s0 = 1 + rng() % 40, s1 = 1 + rng() % 40, w = 0.1 + 0.8 * (rng() % 1000) / 1000.0;
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    for (auto& p : img.pixels) {
      const double v = (rng() % 1000) / 1000.0 < w ? m0 + s0 * z(rng) : m1 + s1 * z(rng);
      p = static_cast<std::uint16_t>(std::clamp(std::lround(v), 0L, 255L));
    }
    img.pixels[0] = 0;
    img.pixels[1] = 255;
    if (imaging::otsu_threshold(img) != exhaustive_otsu(img)) ++mismatches;
  }
  CheckResult r;
  r.passed = mismatches == 0;
  r.summary = std::to_string(100 - mismatches) + "/100 random 8-bit images equal to the exact exhaustive scan";
  return r;
}

CheckResult check_split(const CheckOptions& o) {
  Rng rng = make_rng(o.seed, {0x591});
  int overlap = 0, lost = 0;
  for (int i = 0; i < 1000; ++i) {
    pipeline::Manifest m;
    const int patients = 1 + static_cast<int>(rng() % 80);
    for (int p = 0; p < patients; ++p) {
      const int records = 1 + static_cast<int>(rng() % 6);
      for (int k = 0; k < records; ++k) {
        pipeline::CaseRecord rec;
        rec.patient_id = "P" + std::to_string(rng() % 100000) + "_" + std::to_string(p);
        rec.study_id = "S" + std::to_string(k / 4);
        rec.laterality = (k / 2) % 2 ? pipeline::Laterality::R : pipeline::Laterality::L;
        rec.view = k % 2 ? pipeline::View::MLO : pipeline::View::CC;
        rec.findings = {pipeline::Finding::none};
        rec.image_path = rec.patient_id + "_" + std::to_string(k) + ".png";
        m.push_back(rec);
      }
    }
    std::shuffle(m.begin(), m.end(), rng);
    const auto s = pipeline::split_patients(m, {}, rng());
    std::map<std::string, int> owner;
    std::size_t total = 0;
    int part = 0;
    for (const auto* set : {&s.train, &s.val, &s.test}) {
      for (const auto& rec : *set) {
        auto [it, fresh] = owner.try_emplace(rec.patient_id, part);
        if (!fresh && it->second != part) ++overlap;
      }
      total += set->size();
      ++part;
    }
    if (total != m.size()) ++lost;
  }
  CheckResult r;
  r.passed = overlap == 0 && lost == 0;
  r.summary = std::to_string(overlap) + " patients in more than one partition, " + std::to_string(lost) +
              " manifests with lost or duplicated records (1000 random manifests)";
  return r;
}

CheckResult check_breast_aggregation(const CheckOptions& o) {
  Rng rng = make_rng(o.seed, {0xa66});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int max_bad = 0, perm_bad = 0;
  for (int i = 0; i < 500; ++i) {
    std::vector<pipeline::PredictionRecord> views;
    std::map<std::tuple<std::string, std::string, int>, double> expect;
    const int breasts = 1 + static_cast<int>(rng() % 30);
    for (int b = 0; b < breasts; ++b) {
      const int n = 1 + static_cast<int>(rng() % 4);
      const auto density = static_cast<pipeline::Density>(rng() % 5);
      for (int k = 0; k < n; ++k) {
        pipeline::PredictionRecord v;
        v.patient_id = "P" + std::to_string(b / 2);
        v.study_id = "S1";
        v.laterality = b % 2 ? pipeline::Laterality::R : pipeline::Laterality::L;
        v.view = k % 2 ? pipeline::View::MLO : pipeline::View::CC;
        v.score = std::floor(u(rng) * 20) / 20;  // repeated maxima
        v.label = static_cast<pipeline::TriageLabel>(rng() % 3);
        v.density = density;
        v.findings = {static_cast<pipeline::Finding>(rng() % 5)};
        auto key = std::make_tuple(v.patient_id, v.study_id, static_cast<int>(v.laterality));
        auto it = expect.find(key);
        expect[key] = it == expect.end() ? *v.score : std::max(it->second, *v.score);
        views.push_back(v);
      }
    }
    const auto out = pipeline::aggregate_breast(views);
    if (out.size() != expect.size()) ++max_bad;
    for (const auto& r : out)
      if (*r.score != expect.at(std::make_tuple(r.patient_id, r.study_id, static_cast<int>(r.laterality)))) ++max_bad;
    auto shuffled = views;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    if (pipeline::predictions_csv(pipeline::aggregate_breast(shuffled)) != pipeline::predictions_csv(out)) ++perm_bad;
  }
  CheckResult r;
  r.passed = max_bad == 0 && perm_bad == 0;
  r.summary = std::to_string(max_bad) + " breast scores differing from the max over views, " +
              std::to_string(perm_bad) + " of 500 instances changed by permuting the views";
  return r;
}

namespace {

struct CrashInjected {};

struct TempDir {
  fs::path path;
  explicit TempDir(std::uint64_t tag) {
    path = fs::temp_directory_path() / ("tdce-check-" + std::to_string(::getpid()) + "-" + std::to_string(tag));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

mrmc::StudyPlan small_plan(std::uint64_t seed) {
  std::vector<mrmc::Reader> readers{{"R1", mrmc::Tier::junior}, {"R2", mrmc::Tier::intermediate},
                                    {"R3", mrmc::Tier::senior}};
  std::vector<mrmc::StudyCase> cases;
  for (int c = 1; c <= 3; ++c) {
    const std::string id = "C" + std::to_string(c);
    cases.push_back({id, {{"CC", id + "_CC.png", id + "_CC_tdce.png"}, {"MLO", id + "_MLO.png", id + "_MLO_tdce.png"}}});
  }
  auto plan = mrmc::build_plan(readers, cases, seed);
  plan.study_id = "S";
  return plan;
}

// One scripted request. `clock` is the time at which it is issued.
struct Op {
  int kind;  // 0 open, 1 rate current, 2 pause, 3 resume, 4 switch, 5 rate wrong case, 6 rate again
  std::string reader;
  std::int64_t clock;
  bool call;
  int birads;
};

// Current session index for a reader: the first one not complete (1-based).
int current_session(const study::StudyState& st, const std::string& reader) {
  const auto& rs = st.readers.at(reader);
  for (int k = 0; k < 3; ++k)
    if (rs.sessions[k].status != study::SessionStatus::complete) return k + 1;
  return 3;
}

// Executes op against svc; returns true when a rating was accepted.
bool execute(study::StudyService& svc, const Op& op) {
  const auto state = svc.state();
  const auto& st = *state->find("S");
  const int k = current_session(st, op.reader);
  const auto& ss = st.readers.at(op.reader).sessions[k - 1];
  const auto& order = st.plan.reader(op.reader).case_order[k - 1];
  const std::string cur = ss.cursor < order.size() ? order[ss.cursor] : order.back();
  try {
    switch (op.kind) {
      case 0: svc.open_session("S", op.reader, k); break;
      case 1: svc.rate("S", op.reader, k, cur, {{"binary_call", op.call}, {"birads", op.birads}}); return true;
      case 2: svc.pause("S", op.reader, k); break;
      case 3: svc.resume("S", op.reader, k); break;
      case 4: svc.switch_view("S", op.reader, k, cur, "tdce"); break;
      case 5: {
        const std::string other = order[(ss.cursor + 1) % order.size()];
        if (other == cur) break;
        svc.rate("S", op.reader, k, other, {{"binary_call", op.call}, {"birads", op.birads}});
        throw std::logic_error("out-of-order rating was accepted");
      }
      case 6:
        if (ss.cursor == 0) break;
        svc.rate("S", op.reader, k, order[ss.cursor - 1], {{"binary_call", op.call}, {"birads", 2}});
        throw std::logic_error("duplicate rating was accepted");
    }
  } catch (const study::StudyError&) {
  }
  return false;
}

}  // namespace

CheckResult check_study_service(const CheckOptions& o) {
  const auto plan = small_plan(o.seed);
  const std::int64_t t0 = 1'700'000'000'000;
  json notes = json::object();

  // Washout lock.
  bool washout_ok = false;
  std::string unlock_at;
  {
    TempDir dir(derive_seed(o.seed, {1}));
    std::int64_t now = t0;
    study::StudyService svc({dir.path, [&] { return now; }, std::nullopt, false, {}});
    svc.create_study(json(plan));
    auto d = svc.open_session("S", "R1", 1);
    while (d["status"] == "open") {
      now += 30'000;
      d = svc.rate("S", "R1", 1, d["case"]["case_id"], {{"binary_call", true}, {"birads", 4}});
    }
    const std::int64_t done = now;
    int status_1d = 0, status_edge = 0;
    now = done + study::kMsPerDay;
    try {
      svc.open_session("S", "R1", 2);
    } catch (const study::StudyError& e) {
      status_1d = e.status();
      unlock_at = e.detail().value("unlock_at", "");
    }
    now = done + 28 * study::kMsPerDay - 1;
    try {
      svc.open_session("S", "R1", 2);
    } catch (const study::StudyError& e) {
      status_edge = e.status();
    }
    now = done + 28 * study::kMsPerDay;
    const auto opened = svc.open_session("S", "R1", 2);
    washout_ok = status_1d == 423 && status_edge == 423 && opened["status"] == "open" &&
                 unlock_at == study::iso_utc(done + 28 * study::kMsPerDay);
    notes["washout"] = {{"status_after_1_day", status_1d}, {"unlock_at", unlock_at}};
  }

  // Fault injection: crash after the N-th append, then recover.
  Rng rng = make_rng(o.seed, {0x5e});
  int replay_bad = 0, twin_bad = 0, export_bad = 0, torn_trials = 0, crashes = 0;
  constexpr int kTrials = 40;
  for (int trial = 0; trial < kTrials; ++trial) {
    TempDir dir(derive_seed(o.seed, {2, static_cast<std::uint64_t>(trial)}));
    TempDir twin_dir(derive_seed(o.seed, {3, static_cast<std::uint64_t>(trial)}));
    std::int64_t now = t0;
    const int crash_at = 2 + static_cast<int>(rng() % 60);
    int appended = 0;
    std::vector<Op> ops;
    {
      study::StudyService svc({dir.path, [&] { return now; }, 1, false, [&](const json&) {
                                 if (++appended == crash_at) throw CrashInjected{};
                               }});
      try {
        svc.create_study(json(plan));
        for (int step = 0; step < 200; ++step) {
          Op op{static_cast<int>(rng() % 7), "R" + std::to_string(1 + rng() % 3), 0, rng() % 2 == 0,
                static_cast<int>(rng() % 7)};
          now += 1 + static_cast<std::int64_t>(rng() % 90'000);
          if (rng() % 10 == 0) now += 2 * study::kMsPerDay;  // enough to clear the 1-day washout
          op.clock = now;
          ops.push_back(op);
          execute(svc, op);
        }
      } catch (const CrashInjected&) {
        ++crashes;
      }
    }
    // Twin without faults runs the same requests, including the one that crashed.
    std::int64_t twin_now = t0;
    study::StudyService twin({twin_dir.path, [&] { return twin_now; }, 1, false, {}});
    twin.create_study(json(plan));
    std::size_t accepted = 0;
    for (const auto& op : ops) {
      twin_now = op.clock;
      const auto before = twin.state()->seq;
      const bool rated = execute(twin, op);
      if (rated && twin.state()->seq == before + 1) ++accepted;
    }
    const fs::path log_path = dir.path / study::kEventLogName;
    if (study::to_json(study::replay(study::read_log(log_path).events)) != study::to_json(*twin.state())) ++twin_bad;

    const bool torn = rng() % 2 == 0;
    if (torn) {
      ++torn_trials;
      std::ofstream(log_path, std::ios::app) << R"({"seq":999,"t":)";
    }
    study::StudyService recovered({dir.path, [&] { return now; }, 1, false, {}});
    const auto snap = study::read_snapshot(dir.path);
    const json replayed = study::to_json(study::replay(study::read_log(log_path).events));
    const bool warned = !recovered.recovery_warnings().empty();
    if (!snap || *snap != replayed || study::to_json(*recovered.state()) != replayed || warned != torn) ++replay_bad;

    std::istringstream csv(twin.export_csv("S"));
    std::string line;
    std::size_t rows = 0;
    std::getline(csv, line);
    while (std::getline(csv, line)) ++rows;
    if (rows != accepted || rows != twin.state()->find("S")->ratings.size()) ++export_bad;
  }

  CheckResult r;
  r.passed = washout_ok && replay_bad == 0 && twin_bad == 0 && export_bad == 0 && crashes > 0;
  r.summary = std::string("washout: ") + (washout_ok ? "423 until day 28, unlock " + unlock_at : "FAILED") +
              "; replay==snapshot after crash: " + std::to_string(kTrials - replay_bad) + "/" +
              std::to_string(kTrials) + " (" + std::to_string(crashes) + " crashes, " + std::to_string(torn_trials) +
              " torn tails); log==uninterrupted twin: " + std::to_string(kTrials - twin_bad) + "/" +
              std::to_string(kTrials) + "; export rows==submissions: " + std::to_string(kTrials - export_bad) + "/" +
              std::to_string(kTrials);
  r.detail = notes;
  return r;
}

const std::vector<NamedCheck>& all_checks() {
  static const std::vector<NamedCheck> checks{
      {"gradient-check", check_gradients, true},
      {"freezing-contract", check_freezing, false},
      {"synthetic-directionality", check_directionality, false},
      {"auc-oracle", check_auc_oracle, true},
      {"youden-oracle", check_youden_oracle, true},
      {"delong", check_delong, true},
      {"bootstrap", check_bootstrap, false},
      {"mcnemar", check_mcnemar, true},
      {"fleiss-kappa", check_kappa, true},
      {"glmm", check_glmm, false},
      {"otsu-oracle", check_otsu, true},
      {"patient-split", check_split, true},
      {"breast-aggregation", check_breast_aggregation, true},
      {"study-service", check_study_service, true},
  };
  return checks;
}

}  // namespace tdce::checks
