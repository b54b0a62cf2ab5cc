#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdce/diffcore/optimizer.hpp"
#include "tdce/models/network.hpp"
#include "tdce/pipeline/case_record.hpp"
#include "tdce/pipeline/checkpoint.hpp"

namespace tdce::pipeline {

enum class Regime { tdce, gray_baseline };
std::string to_string(Regime r);
Regime parse_regime(const std::string& s);

struct TrainConfig {
  diff::OptimizerConfig optimizer;
  int batch_size = 16;
  int epochs = 20;
  std::optional<std::uint64_t> seed;  // required
  unsigned threads = 1;
  // Gray baseline only: number of final backbone stages left trainable.
  int trainable_backbone_stages = 1;
  bool include_birads6 = false;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct Sample {
  diff::Tensor input;
  int label = 0;
  std::size_t record = 0;  // index into the source manifest
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> skipped;  // "patient/study/lat/view: reason"
};

struct DatasetOptions {
  bool include_birads6 = false;
  unsigned threads = 1;
};

// Preprocesses every image into the model's input tensor. Excluded labels
// (BI-RADS 0) and, unless enabled, BI-RADS 6 are skipped. Missing or
// unreadable images raise ValidationError listing every failing record.
Dataset load_dataset(const Manifest& m, const std::filesystem::path& manifest_dir, const models::ModelConfig& c,
                     const DatasetOptions& opt);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_auc = 0.0;  // NaN when the validation set is single-class
};

struct TrainResult {
  ModelCheckpoint checkpoint;  // best validation epoch
  std::vector<EpochLog> log;
  double initial_train_loss = 0.0;
  int best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Parameters at initialization: seeded init, plus backbone weights from an
// external checkpoint when configured.
diff::ParamSet initial_params(const models::ModelConfig& c, std::uint64_t seed);

// TDCE front end, frozen backbone; TDCE and head are updated.
TrainResult train_tdce(const models::ModelConfig& c, const TrainConfig& t, const Dataset& train, const Dataset& val,
                       const EpochCallback& on_epoch = {});

// Channel-replication front end; the last `trainable_backbone_stages`
// stages and the head are updated.
TrainResult train_gray_baseline(const models::ModelConfig& c, const TrainConfig& t, const Dataset& train,
                                const Dataset& val, const EpochCallback& on_epoch = {});

// Shared loop. Trains the trainable subset of `params` in place semantics:
// the returned checkpoint holds the best-validation copy.
TrainResult train_model(const models::ModelConfig& c, const TrainConfig& t, diff::ParamSet params,
                        const Dataset& train, const Dataset& val, nlohmann::json metadata,
                        const EpochCallback& on_epoch = {});

// Probabilities for preloaded inputs, in sample order.
std::vector<double> predict_samples(const diff::ParamSet& params, const models::ModelConfig& c,
                                    const std::vector<Sample>& samples, unsigned threads);

}  // namespace tdce::pipeline
