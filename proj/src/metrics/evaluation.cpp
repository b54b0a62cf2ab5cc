#include "tdce/metrics/evaluation.hpp"

#include <cmath>
#include <map>
#include <tuple>

#include "tdce/common/csv.hpp"
#include "tdce/common/error.hpp"

namespace tdce::metrics {

using nlohmann::json;
using pipeline::PredictionRecord;
using pipeline::TriageLabel;

namespace {

using Key = std::tuple<std::string, std::string, pipeline::Laterality, int>;

Key key_of(const PredictionRecord& r) {
  return {r.patient_id, r.study_id, r.laterality, r.view ? static_cast<int>(*r.view) : -1};
}

std::string key_text(const PredictionRecord& r) {
  return r.patient_id + "/" + r.study_id + "/" + to_string(r.laterality) + (r.view ? "/" + to_string(*r.view) : "");
}

json number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

PairedSet pair_predictions(const std::vector<PredictionRecord>& a, const std::vector<PredictionRecord>& b) {
  std::map<Key, const PredictionRecord*> bmap;
  for (const auto& r : b)
    if (!bmap.emplace(key_of(r), &r).second) throw ValidationError("duplicate prediction key " + key_text(r));
  if (a.size() != b.size()) throw ValidationError("prediction sets differ in size (" + std::to_string(a.size()) +
                                                  " vs " + std::to_string(b.size()) + ")");
  PairedSet s;
  std::map<Key, bool> seen;
  for (const auto& ra : a) {
    const auto k = key_of(ra);
    if (!seen.emplace(k, true).second) throw ValidationError("duplicate prediction key " + key_text(ra));
    auto it = bmap.find(k);
    if (it == bmap.end()) throw ValidationError("record " + key_text(ra) + " missing from the second model");
    const auto& rb = *it->second;
    if (ra.label != rb.label) throw ValidationError("label mismatch between models for " + key_text(ra));
    if (ra.label == TriageLabel::excluded) continue;
    if (!ra.score || !rb.score) {
      ++s.dropped_unscored;
      continue;
    }
    s.a.push_back(*ra.score);
    s.b.push_back(*rb.score);
    s.labels.push_back(ra.label == TriageLabel::positive ? 1 : 0);
    s.patients.push_back(ra.patient_id);
    s.records.push_back(&ra);
  }
  return s;
}

PairedEvaluation evaluate_paired(const PairedSet& s, const EvaluationOptions& opt) {
  PairedEvaluation e;
  const auto [pos, neg] = check_binary_input(s.a, s.labels, true);
  e.n_pos = pos;
  e.n_neg = neg;
  e.threshold_source = opt.threshold_source;
  auto summarize = [&](const std::vector<double>& scores, const std::string& name, double t) {
    ModelSummary m;
    m.name = name;
    m.roc = roc_auc(scores, s.labels);
    m.auc = bootstrap_auc(scores, s.labels, s.patients, opt.bootstrap);
    m.op = operating_metrics(scores, s.labels, t);
    return m;
  };
  e.a = summarize(s.a, opt.name_a, opt.threshold_a);
  e.b = summarize(s.b, opt.name_b, opt.threshold_b);
  if (pos >= 2 && neg >= 2) {
    e.delong = delong_paired(s.a, s.b, s.labels);
  } else {
    e.delong.auc_a = e.a.roc.auc;
    e.delong.auc_b = e.b.roc.auc;
    e.delong.delta = e.delong.auc_a - e.delong.auc_b;
    e.delong.z = e.delong.p = std::nan("");
    e.delong.degenerate = true;
  }
  std::vector<int> ca(s.a.size()), cb(s.b.size());
  for (std::size_t i = 0; i < s.a.size(); ++i) {
    ca[i] = s.a[i] >= opt.threshold_a;
    cb[i] = s.b[i] >= opt.threshold_b;
  }
  e.mcnemar = mcnemar(ca, cb, s.labels);
  return e;
}

SubgroupSelector parse_selector(const std::string& s) {
  if (s == "all") return SubgroupSelector::all;
  if (s == "density") return SubgroupSelector::density;
  if (s == "finding") return SubgroupSelector::finding;
  throw ValidationError("selector must be all|density|finding, got '" + s + "'");
}

std::vector<SubgroupRow> subgroup_eval(const std::vector<PredictionRecord>& a, const std::vector<PredictionRecord>& b,
                                       SubgroupSelector selector, const EvaluationOptions& opt) {
  const PairedSet full = pair_predictions(a, b);
  using Pred = std::function<bool(const PredictionRecord&, int label)>;
  std::vector<std::pair<std::string, Pred>> groups;
  switch (selector) {
    case SubgroupSelector::all:
      groups.emplace_back("all", [](const PredictionRecord&, int) { return true; });
      break;
    case SubgroupSelector::density:
      for (auto g : {pipeline::DensityGroup::non_dense, pipeline::DensityGroup::dense})
        groups.emplace_back(to_string(g), [g](const PredictionRecord& r, int) { return r.density_group() == g; });
      break;
    case SubgroupSelector::finding:
      for (auto f : {pipeline::Finding::mass, pipeline::Finding::calcification, pipeline::Finding::asymmetry,
                     pipeline::Finding::distortion})
        groups.emplace_back(to_string(f),
                            [f](const PredictionRecord& r, int label) { return label == 0 || r.has_finding(f); });
      break;
  }

  std::vector<SubgroupRow> rows;
  for (const auto& [name, pred] : groups) {
    PairedSet sub;
    for (std::size_t i = 0; i < full.a.size(); ++i) {
      if (!pred(*full.records[i], full.labels[i])) continue;
      sub.a.push_back(full.a[i]);
      sub.b.push_back(full.b[i]);
      sub.labels.push_back(full.labels[i]);
      sub.patients.push_back(full.patients[i]);
      sub.records.push_back(full.records[i]);
    }
    SubgroupRow row;
    row.subgroup = name;
    for (int l : sub.labels) (l ? row.n_pos : row.n_neg)++;
    if (row.n_pos == 0 || row.n_neg == 0) {
      row.note = "not evaluable: single class";
    } else {
      row.evaluable = true;
      row.eval = evaluate_paired(sub, opt);
      if (row.eval->delong.degenerate) row.note = "DeLong test not available (fewer than 2 cases per class or zero variance)";
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

json to_json(const CiEstimate& ci) {
  return json{{"point", number(ci.point)},   {"lower", number(ci.lower)}, {"upper", number(ci.upper)},
              {"level", ci.level},           {"method", ci.method},       {"n_resamples", ci.n_resamples},
              {"seed", ci.seed},             {"redraws", ci.redraws}};
}

json to_json(const OperatingPoint& op) {
  return json{{"threshold", number(op.threshold)},
              {"sensitivity", number(op.sensitivity)},
              {"specificity", number(op.specificity)},
              {"accuracy", number(op.accuracy)},
              {"balanced_accuracy", number(op.balanced_accuracy)},
              {"f1", number(op.f1)},
              {"ppv", number(op.precision)},
              {"npv", number(op.npv)},
              {"counts", {{"tp", op.counts.tp}, {"fp", op.counts.fp}, {"tn", op.counts.tn}, {"fn", op.counts.fn}}}};
}

json to_json(const DelongResult& d) {
  return json{{"auc_a", number(d.auc_a)}, {"auc_b", number(d.auc_b)}, {"delta", number(d.delta)},
              {"var_a", number(d.var_a)}, {"var_b", number(d.var_b)}, {"cov", number(d.cov)},
              {"z", number(d.z)},         {"p", number(d.p)},         {"degenerate", d.degenerate}};
}

json to_json(const McNemarResult& m) {
  return json{{"b", m.b},
              {"c", m.c},
              {"statistic", number(m.statistic)},
              {"p", number(m.p)},
              {"exact", m.exact},
              {"no_discordance", m.no_discordance}};
}

json to_json(const PairedEvaluation& e) {
  auto model = [](const ModelSummary& m) {
    json j = to_json(m.op);
    j["name"] = m.name;
    j["auc"] = to_json(m.auc);
    return j;
  };
  return json{{"n_pos", e.n_pos},
              {"n_neg", e.n_neg},
              {"threshold_source", e.threshold_source},
              {"models", json::array({model(e.a), model(e.b)})},
              {"delong", to_json(e.delong)},
              {"mcnemar", to_json(e.mcnemar)}};
}

json to_json(const std::vector<SubgroupRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    json j{{"subgroup", r.subgroup}, {"n_pos", r.n_pos}, {"n_neg", r.n_neg}, {"evaluable", r.evaluable}};
    if (!r.note.empty()) j["note"] = r.note;
    if (r.eval) j["evaluation"] = to_json(*r.eval);
    out.push_back(j);
  }
  return out;
}

std::string roc_csv(const RocResult& r) {
  std::string out = "fpr,tpr,threshold\n";
  for (const auto& p : r.curve)
    out += csv::format_double(p.fpr) + "," + csv::format_double(p.tpr) + "," +
           (std::isinf(p.threshold) ? std::string("inf") : csv::format_double(p.threshold)) + "\n";
  return out;
}

}  // namespace tdce::metrics
