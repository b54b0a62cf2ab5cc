#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tdce/pipeline/case_record.hpp"
#include "tdce/pipeline/checkpoint.hpp"

namespace tdce::pipeline {

struct PredictionRecord {
  std::string patient_id;
  std::string study_id;
  Laterality laterality = Laterality::L;
  std::optional<View> view;    // empty at breast level
  std::optional<double> score;  // empty when the image could not be scored
  TriageLabel label = TriageLabel::excluded;
  Density density = Density::NR;
  std::vector<Finding> findings;
  std::string error;

  DensityGroup density_group() const { return pipeline::density_group(density); }
  bool has_finding(Finding f) const;
};

// One record per manifest row, in manifest order. Unreadable images yield a
// record with no score and `error` set; the remaining views are still scored.
std::vector<PredictionRecord> predict_views(const ModelCheckpoint& checkpoint, const Manifest& manifest,
                                            const std::filesystem::path& manifest_dir, unsigned threads);

PredictionRecord prediction_stub(const CaseRecord& r);

// Groups by (patient_id, study_id, laterality); score = max over scored
// views; label: positive if any view is positive, else negative if any is
// negative, else excluded; density: densest non-NR; findings: union.
// Output sorted by key. A group with no scored view raises ValidationError,
// unless `unscoreable` is given, in which case it is skipped and listed.
std::vector<PredictionRecord> aggregate_breast(const std::vector<PredictionRecord>& views,
                                               std::vector<std::string>* unscoreable = nullptr);

// Scored, non-excluded records as parallel score/label arrays.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::string> patients;
};
ScoredSet scored_subset(const std::vector<PredictionRecord>& records);

// CSV header: patient_id,study_id,laterality,view,score,label,density,findings
void write_predictions_csv(const std::vector<PredictionRecord>& records, const std::filesystem::path& path);
std::vector<PredictionRecord> read_predictions_csv(const std::filesystem::path& path);
std::string predictions_csv(const std::vector<PredictionRecord>& records);

}  // namespace tdce::pipeline
