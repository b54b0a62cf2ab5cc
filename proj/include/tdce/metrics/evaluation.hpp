#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdce/metrics/bootstrap.hpp"
#include "tdce/metrics/delong.hpp"
#include "tdce/metrics/mcnemar.hpp"
#include "tdce/metrics/roc.hpp"
#include "tdce/pipeline/prediction.hpp"

namespace tdce::metrics {

// Two models' predictions matched on (patient, study, laterality, view).
// Excluded labels and unscored records are dropped from both sides.
struct PairedSet {
  std::vector<double> a;
  std::vector<double> b;
  std::vector<int> labels;
  std::vector<std::string> patients;
  std::vector<const pipeline::PredictionRecord*> records;  // model a's record
  std::size_t dropped_unscored = 0;
};

// Throws ValidationError when the key sets differ or keys repeat.
PairedSet pair_predictions(const std::vector<pipeline::PredictionRecord>& a,
                           const std::vector<pipeline::PredictionRecord>& b);

struct ModelSummary {
  std::string name;
  CiEstimate auc;
  OperatingPoint op;
  RocResult roc;
};

struct PairedEvaluation {
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  ModelSummary a;
  ModelSummary b;
  DelongResult delong;   // a vs b
  McNemarResult mcnemar;  // on calls at the fixed thresholds
  std::string threshold_source;
};

struct EvaluationOptions {
  std::string name_a = "gray-baseline";
  std::string name_b = "tdce";
  double threshold_a = 0.5;
  double threshold_b = 0.5;
  std::string threshold_source = "validation";
  BootstrapOptions bootstrap;
};

PairedEvaluation evaluate_paired(const PairedSet& set, const EvaluationOptions& opt);

enum class SubgroupSelector { all, density, finding };
SubgroupSelector parse_selector(const std::string& s);

struct SubgroupRow {
  std::string subgroup;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  bool evaluable = false;
  std::string note;
  std::optional<PairedEvaluation> eval;
};

// Density: non-dense / dense (NR records excluded). Finding: for each
// finding f, positives carrying f plus every negative; a record with several
// findings belongs to each of them.
std::vector<SubgroupRow> subgroup_eval(const std::vector<pipeline::PredictionRecord>& a,
                                       const std::vector<pipeline::PredictionRecord>& b, SubgroupSelector selector,
                                       const EvaluationOptions& opt);

nlohmann::json to_json(const CiEstimate& ci);
nlohmann::json to_json(const OperatingPoint& op);
nlohmann::json to_json(const DelongResult& d);
nlohmann::json to_json(const McNemarResult& m);
nlohmann::json to_json(const PairedEvaluation& e);
nlohmann::json to_json(const std::vector<SubgroupRow>& rows);

// fpr,tpr,threshold
std::string roc_csv(const RocResult& r);

}  // namespace tdce::metrics
