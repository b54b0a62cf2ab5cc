// evaluate, subgroup.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>

#include "common.hpp"
#include "tdce/common/error.hpp"
#include "tdce/metrics/evaluation.hpp"

namespace tdce::cli {

namespace fs = std::filesystem;
using nlohmann::json;
using pipeline::PredictionRecord;

namespace {

struct PairArgs {
  Global g;
  std::string pred_a, pred_b, val_a, val_b;
  std::string name_a = "gray-baseline", name_b = "tdce";
  std::string level = "breast";
  int resamples = 2000;
  double ci_level = 0.95;
};

void add_pair_options(Options& o, PairArgs& a) {
  o.add_global(a.g, true);
  o.add("--pred-a", a.pred_a, "predictions CSV of model a (reference model)", true);
  o.add("--pred-b", a.pred_b, "predictions CSV of model b", true);
  o.add("--name-a", a.name_a, "label of model a");
  o.add("--name-b", a.name_b, "label of model b");
  o.add("--val-a", a.val_a, "validation predictions of model a (Youden threshold)");
  o.add("--val-b", a.val_b, "validation predictions of model b (Youden threshold)");
  o.add("--level", a.level, "breast | view")->check(CLI::IsMember({"breast", "view"}));
  o.add("--resamples", a.resamples, "bootstrap resamples")->check(CLI::PositiveNumber);
  o.add("--ci-level", a.ci_level, "confidence level")->check(CLI::Range(0.5, 0.999));
}

// View-level files are aggregated for --level breast; breast-level files
// pass through. A breast-level file cannot answer --level view.
std::vector<PredictionRecord> at_level(const std::string& path, const std::string& level) {
  auto recs = pipeline::read_predictions_csv(path);
  const bool has_views = std::any_of(recs.begin(), recs.end(), [](const auto& r) { return r.view.has_value(); });
  if (level == "view") {
    if (!has_views) throw ValidationError(path + ": --level view needs view-level predictions");
    return recs;
  }
  if (!has_views) return recs;
  std::vector<std::string> unscoreable;
  auto out = pipeline::aggregate_breast(recs, &unscoreable);
  for (const auto& u : unscoreable) std::cerr << "warning: " << path << ": no scored view for breast " << u << "\n";
  return out;
}

metrics::EvaluationOptions eval_options(const PairArgs& a, RunRecord& rec) {
  metrics::EvaluationOptions opt;
  opt.name_a = a.name_a;
  opt.name_b = a.name_b;
  opt.bootstrap.n_resamples = a.resamples;
  opt.bootstrap.seed = *a.g.seed;
  opt.bootstrap.level = a.ci_level;
  opt.bootstrap.threads = a.g.threads;
  if (a.val_a.empty() != a.val_b.empty()) throw ValidationError("--val-a and --val-b go together");
  if (a.val_a.empty()) {
    opt.threshold_source = "fixed-0.5";
  } else {
    auto youden = [&](const std::string& path) {
      rec.input(path);
      const auto set = pipeline::scored_subset(at_level(path, a.level));
      return metrics::youden_threshold(set.scores, set.labels);
    };
    opt.threshold_a = youden(a.val_a);
    opt.threshold_b = youden(a.val_b);
    opt.threshold_source = "validation-youden";
  }
  return opt;
}

std::string fmt(double v, int prec = 4) {
  if (!std::isfinite(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

void print_eval(const metrics::PairedEvaluation& e) {
  std::printf("%-16s %-26s %-10s %-8s %-8s %-8s\n", "model", "AUC [CI]", "threshold", "sens", "spec", "acc");
  for (const auto* m : {&e.a, &e.b}) {
    const std::string auc = fmt(m->auc.point) + " [" + fmt(m->auc.lower) + ", " + fmt(m->auc.upper) + "]";
    std::printf("%-16s %-26s %-10s %-8s %-8s %-8s\n", m->name.c_str(), auc.c_str(), fmt(m->op.threshold).c_str(),
                fmt(m->op.sensitivity).c_str(), fmt(m->op.specificity).c_str(), fmt(m->op.accuracy).c_str());
  }
  std::printf("n_pos %zu, n_neg %zu; DeLong AUC(%s) - AUC(%s) = %s, p = %s; McNemar p = %s (thresholds: %s)\n",
              e.n_pos, e.n_neg, e.a.name.c_str(), e.b.name.c_str(), fmt(e.delong.delta).c_str(),
              fmt(e.delong.p).c_str(), fmt(e.mcnemar.p).c_str(), e.threshold_source.c_str());
}

void add_evaluate(CLI::App& app, Commands& out) {
  auto a = std::make_shared<PairArgs>();
  auto* sub = app.add_subcommand("evaluate", "paired AUC/DeLong/McNemar report with bootstrap CIs");
  auto o = std::make_shared<Options>(sub);
  add_pair_options(*o, *a);
  out.push_back({sub, o, [a] {
                   RunRecord rec("evaluate", a->g);
                   const auto ra = at_level(a->pred_a, a->level);
                   const auto rb = at_level(a->pred_b, a->level);
                   rec.input(a->pred_a);
                   rec.input(a->pred_b);
                   const auto opt = eval_options(*a, rec);
                   const auto set = metrics::pair_predictions(ra, rb);
                   const auto e = metrics::evaluate_paired(set, opt);
                   json report = metrics::to_json(e);
                   report["level"] = a->level;
                   report["dropped_unscored"] = set.dropped_unscored;
                   const fs::path rp = rec.out_dir() / "report.json";
                   write_json(rp, report);
                   rec.output(rp);
                   const fs::path roc_a = rec.out_dir() / ("roc_" + a->name_a + ".csv");
                   const fs::path roc_b = rec.out_dir() / ("roc_" + a->name_b + ".csv");
                   write_text(roc_a, metrics::roc_csv(e.a.roc));
                   write_text(roc_b, metrics::roc_csv(e.b.roc));
                   rec.output(roc_a);
                   rec.output(roc_b);
                   rec.param("level", a->level);
                   rec.param("resamples", a->resamples);
                   rec.param("ci_level", a->ci_level);
                   rec.write();
                   print_eval(e);
                   return 0;
                 }});
}

void add_subgroup(CLI::App& app, Commands& out) {
  struct Args : PairArgs {
    std::string by = "density";
  };
  auto a = std::make_shared<Args>();
  auto* sub = app.add_subcommand("subgroup", "paired evaluation per density group or finding");
  auto o = std::make_shared<Options>(sub);
  add_pair_options(*o, *a);
  o->add("--by", a->by, "density | finding")->check(CLI::IsMember({"density", "finding"}));
  out.push_back({sub, o, [a] {
                   RunRecord rec("subgroup", a->g);
                   const auto ra = at_level(a->pred_a, a->level);
                   const auto rb = at_level(a->pred_b, a->level);
                   rec.input(a->pred_a);
                   rec.input(a->pred_b);
                   const auto opt = eval_options(*a, rec);
                   const auto rows = metrics::subgroup_eval(ra, rb, metrics::parse_selector(a->by), opt);
                   json report{{"by", a->by}, {"level", a->level}, {"subgroups", metrics::to_json(rows)}};
                   const fs::path rp = rec.out_dir() / "subgroup.json";
                   write_json(rp, report);
                   rec.output(rp);
                   rec.param("by", a->by);
                   rec.param("level", a->level);
                   rec.param("resamples", a->resamples);
                   rec.write();
                   for (const auto& r : rows) {
                     std::printf("== %s (n_pos %zu, n_neg %zu)\n", r.subgroup.c_str(), r.n_pos, r.n_neg);
                     if (r.eval) print_eval(*r.eval);
                     else std::printf("%s\n", r.note.c_str());
                   }
                   return 0;
                 }});
}

}  // namespace

void register_eval_commands(CLI::App& app, Commands& out) {
  add_evaluate(app, out);
  add_subgroup(app, out);
}

}  // namespace tdce::cli
