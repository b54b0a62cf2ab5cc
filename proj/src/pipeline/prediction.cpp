#include "tdce/pipeline/prediction.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

#include "tdce/common/csv.hpp"
#include "tdce/common/error.hpp"
#include "tdce/common/parallel.hpp"
#include "tdce/imaging/preprocess.hpp"

namespace tdce::pipeline {

namespace {
const std::vector<std::string> kHeader{"patient_id", "study_id", "laterality", "view",
                                       "score",      "label",    "density",    "findings"};
}

bool PredictionRecord::has_finding(Finding f) const {
  return std::find(findings.begin(), findings.end(), f) != findings.end();
}

PredictionRecord prediction_stub(const CaseRecord& r) {
  PredictionRecord p;
  p.patient_id = r.patient_id;
  p.study_id = r.study_id;
  p.laterality = r.laterality;
  p.view = r.view;
  p.label = map_birads_to_label(r.birads);
  p.density = r.density;
  p.findings = r.findings;
  return p;
}

std::vector<PredictionRecord> predict_views(const ModelCheckpoint& ckpt, const Manifest& manifest,
                                            const std::filesystem::path& dir, unsigned threads) {
  const auto cfg = ckpt.model_config();
  std::vector<PredictionRecord> out(manifest.size());
  parallel_for(manifest.size(), threads, [&](std::size_t i) {
    out[i] = prediction_stub(manifest[i]);
    try {
      const auto img = imaging::preprocess_file(resolve_image(manifest[i], dir), cfg.input_height, cfg.input_width);
      out[i].score = models::predict_probability(img, ckpt.params, cfg);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

std::vector<PredictionRecord> aggregate_breast(const std::vector<PredictionRecord>& views,
                                               std::vector<std::string>* unscoreable) {
  using Key = std::tuple<std::string, std::string, Laterality>;
  std::map<Key, PredictionRecord> groups;
  std::map<Key, bool> seen_positive, seen_negative;
  for (const auto& v : views) {
    const Key k{v.patient_id, v.study_id, v.laterality};
    auto [it, fresh] = groups.try_emplace(k);
    auto& g = it->second;
    if (fresh) {
      g.patient_id = v.patient_id;
      g.study_id = v.study_id;
      g.laterality = v.laterality;
    }
    if (v.score) g.score = g.score ? std::max(*g.score, *v.score) : *v.score;
    if (v.label == TriageLabel::positive) seen_positive[k] = true;
    if (v.label == TriageLabel::negative) seen_negative[k] = true;
    // Views should agree; if they do not, the denser category wins so the
    // result does not depend on row order.
    if (v.density != Density::NR && (g.density == Density::NR || v.density > g.density)) g.density = v.density;
    for (auto f : v.findings) g.findings.push_back(f);
  }
  std::vector<PredictionRecord> out;
  out.reserve(groups.size());
  for (auto& [k, g] : groups) {
    g.label = seen_positive[k] ? TriageLabel::positive
                               : (seen_negative[k] ? TriageLabel::negative : TriageLabel::excluded);
    std::sort(g.findings.begin(), g.findings.end());
    g.findings.erase(std::unique(g.findings.begin(), g.findings.end()), g.findings.end());
    if (g.findings.size() > 1) std::erase(g.findings, Finding::none);
    if (!g.score) {
      const std::string id = g.patient_id + "/" + g.study_id + "/" + to_string(g.laterality);
      if (!unscoreable) throw ValidationError("breast " + id + " has no scoreable view");
      unscoreable->push_back(id);
      continue;
    }
    out.push_back(std::move(g));
  }
  return out;
}

ScoredSet scored_subset(const std::vector<PredictionRecord>& records) {
  ScoredSet s;
  for (const auto& r : records) {
    if (!r.score || r.label == TriageLabel::excluded) continue;
    s.scores.push_back(*r.score);
    s.labels.push_back(r.label == TriageLabel::positive ? 1 : 0);
    s.patients.push_back(r.patient_id);
  }
  return s;
}

std::string predictions_csv(const std::vector<PredictionRecord>& records) {
  std::string out = csv::join(kHeader) + "\n";
  for (const auto& r : records) {
    std::string findings;
    for (auto f : r.findings) findings += (findings.empty() ? "" : ";") + to_string(f);
    out += csv::join({r.patient_id, r.study_id, to_string(r.laterality), r.view ? to_string(*r.view) : "",
                      r.score ? csv::format_double(*r.score) : "", to_string(r.label), to_string(r.density),
                      findings}) +
           "\n";
  }
  return out;
}

void write_predictions_csv(const std::vector<PredictionRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << predictions_csv(records);
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

std::vector<PredictionRecord> read_predictions_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open predictions " + path.string());
  std::vector<std::string> f;
  if (!csv::read_record(in, f) || f != kHeader)
    throw ValidationError(path.string() + ": header must be " + csv::join(kHeader));
  std::vector<PredictionRecord> out;
  std::size_t line = 1;
  while (csv::read_record(in, f)) {
    ++line;
    if (f.size() == 1 && f[0].empty()) continue;
    auto fail = [&](const std::string& field, const std::string& msg) {
      throw ValidationError(path.string() + " line " + std::to_string(line) + ", field '" + field + "': " + msg);
    };
    if (f.size() != kHeader.size()) fail("", "expected 8 fields, got " + std::to_string(f.size()));
    PredictionRecord r;
    r.patient_id = f[0];
    r.study_id = f[1];
    try {
      r.laterality = parse_laterality(f[2]);
    } catch (const std::exception& e) {
      fail("laterality", e.what());
    }
    if (!f[3].empty()) {
      try {
        r.view = parse_view(f[3]);
      } catch (const std::exception& e) {
        fail("view", e.what());
      }
    }
    if (!f[4].empty()) {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(f[4], &used);
      } catch (const std::exception&) {
        fail("score", "not a number: '" + f[4] + "'");
      }
      if (used != f[4].size() || !(v >= 0.0 && v <= 1.0)) fail("score", "must be a number in [0,1]");
      r.score = v;
    }
    try {
      r.label = parse_triage_label(f[5]);
    } catch (const std::exception& e) {
      fail("label", e.what());
    }
    try {
      r.density = parse_density(f[6]);
    } catch (const std::exception& e) {
      fail("density", e.what());
    }
    std::stringstream ss(f[7]);
    std::string item;
    while (std::getline(ss, item, ';')) {
      if (item.empty()) continue;
      try {
        r.findings.push_back(parse_finding(item));
      } catch (const std::exception& e) {
        fail("findings", e.what());
      }
    }
    if (r.findings.empty()) r.findings.push_back(Finding::none);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace tdce::pipeline
