#include "tdce/pipeline/training.hpp"

#include <cmath>
#include <mutex>
#include <numeric>
#include <sstream>

#include "tdce/common/error.hpp"
#include "tdce/common/parallel.hpp"
#include "tdce/common/random.hpp"
#include "tdce/diffcore/tape.hpp"
#include "tdce/imaging/png_io.hpp"
#include "tdce/imaging/preprocess.hpp"
#include "tdce/metrics/roc.hpp"

namespace tdce::pipeline {

using nlohmann::json;

std::string to_string(Regime r) { return r == Regime::tdce ? "tdce" : "gray-baseline"; }

Regime parse_regime(const std::string& s) {
  if (s == "tdce") return Regime::tdce;
  if (s == "gray-baseline") return Regime::gray_baseline;
  throw ValidationError("regime must be tdce|gray-baseline, got '" + s + "'");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"optimizer",
            {{"kind", diff::to_string(c.optimizer.kind)},
             {"lr", c.optimizer.lr},
             {"beta1", c.optimizer.beta1},
             {"beta2", c.optimizer.beta2},
             {"eps", c.optimizer.eps},
             {"weight_decay", c.optimizer.weight_decay}}},
           {"batch_size", c.batch_size},
           {"epochs", c.epochs},
           {"seed", c.seed ? json(*c.seed) : json(nullptr)},
           {"threads", c.threads},
           {"trainable_backbone_stages", c.trainable_backbone_stages},
           {"include_birads6", c.include_birads6}};
}

void from_json(const json& j, TrainConfig& c) {
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    if (o.contains("kind")) c.optimizer.kind = diff::parse_optimizer_kind(o.at("kind").get<std::string>());
    c.optimizer.lr = o.value("lr", c.optimizer.lr);
    c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
    c.optimizer.eps = o.value("eps", c.optimizer.eps);
    c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
  }
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  if (j.contains("seed") && !j.at("seed").is_null()) c.seed = j.at("seed").get<std::uint64_t>();
  c.threads = j.value("threads", c.threads);
  c.trainable_backbone_stages = j.value("trainable_backbone_stages", c.trainable_backbone_stages);
  c.include_birads6 = j.value("include_birads6", c.include_birads6);
}

namespace {

std::string describe(const CaseRecord& r) {
  return r.patient_id + "/" + r.study_id + "/" + to_string(r.laterality) + "/" + to_string(r.view);
}

void validate(const TrainConfig& t) {
  if (!t.seed) throw ValidationError("training requires an explicit seed");
  if (t.batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (t.epochs < 1) throw ValidationError("epochs must be >= 1");
  if (!(t.optimizer.lr > 0)) throw ValidationError("optimizer.lr must be > 0");
}

struct Eval {
  double loss = 0.0;
  double auc = metrics::kUndefined;
};

double bce(double logit, int label) {
  return std::max(logit, 0.0) - logit * label + std::log1p(std::exp(-std::abs(logit)));
}

std::vector<double> logits(const diff::ParamSet& params, const models::ModelConfig& c,
                           const std::vector<Sample>& samples, unsigned threads) {
  std::vector<double> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    diff::Tape tape(params);
    auto x = tape.input(samples[i].input);
    out[i] = tape.value(models::logit_forward(tape, c, x))[0];
  });
  return out;
}

Eval evaluate(const diff::ParamSet& params, const models::ModelConfig& c, const std::vector<Sample>& samples,
              unsigned threads) {
  Eval e;
  if (samples.empty()) return e;
  const auto z = logits(params, c, samples, threads);
  std::vector<double> p(z.size());
  std::vector<int> y(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    e.loss += bce(z[i], samples[i].label);
    p[i] = models::sigmoid(z[i]);
    y[i] = samples[i].label;
  }
  e.loss /= static_cast<double>(z.size());
  const auto [pos, neg] = metrics::check_binary_input(p, y, false);
  if (pos > 0 && neg > 0) e.auc = metrics::auc(p, y);
  return e;
}

}  // namespace

Dataset load_dataset(const Manifest& m, const std::filesystem::path& dir, const models::ModelConfig& c,
                     const DatasetOptions& opt) {
  std::vector<std::size_t> keep;
  Dataset d;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto label = map_birads_to_label(m[i].birads);
    if (label == TriageLabel::excluded) {
      d.skipped.push_back(describe(m[i]) + ": BI-RADS 0 excluded");
    } else if (m[i].birads.category == 6 && !opt.include_birads6) {
      d.skipped.push_back(describe(m[i]) + ": BI-RADS 6 held out of training");
    } else {
      keep.push_back(i);
    }
  }
  d.samples.resize(keep.size());
  std::vector<std::string> errors(keep.size());
  parallel_for(keep.size(), opt.threads, [&](std::size_t k) {
    const auto& rec = m[keep[k]];
    try {
      const auto img = imaging::preprocess_file(resolve_image(rec, dir), c.input_height, c.input_width);
      d.samples[k] = Sample{models::model_input(c, img),
                            map_birads_to_label(rec.birads) == TriageLabel::positive ? 1 : 0, keep[k]};
    } catch (const std::exception& e) {
      errors[k] = describe(rec) + ": " + e.what();
    }
  });
  std::string msg;
  std::size_t failed = 0;
  for (const auto& e : errors)
    if (!e.empty()) {
      if (failed++ < 20) msg += "\n  " + e;
    }
  if (failed)
    throw ValidationError(std::to_string(failed) + " image(s) could not be loaded:" + msg +
                          (failed > 20 ? "\n  ..." : ""));
  return d;
}

diff::ParamSet initial_params(const models::ModelConfig& c, std::uint64_t seed) {
  auto params = models::init_params(c, seed);
  if (c.backbone.init == models::BackboneInit::external_checkpoint) {
    if (c.backbone.checkpoint.empty()) throw ValidationError("backbone.checkpoint is required for external-checkpoint");
    const auto ext = load_checkpoint(c.backbone.checkpoint);
    models::copy_prefix(params, ext.params, "backbone.");
  }
  return params;
}

std::vector<double> predict_samples(const diff::ParamSet& params, const models::ModelConfig& c,
                                    const std::vector<Sample>& samples, unsigned threads) {
  auto z = logits(params, c, samples, threads);
  for (auto& v : z) v = models::sigmoid(v);
  return z;
}

TrainResult train_model(const models::ModelConfig& c, const TrainConfig& t, diff::ParamSet params,
                        const Dataset& train, const Dataset& val, json metadata, const EpochCallback& on_epoch) {
  validate(t);
  models::validate(c);
  if (train.samples.empty()) throw ValidationError("training set is empty");

  TrainResult result;
  result.initial_train_loss = evaluate(params, c, train.samples, t.threads).loss;

  diff::Optimizer opt(params, t.optimizer);
  const std::size_t n = train.samples.size();
  const std::size_t bs = static_cast<std::size_t>(t.batch_size);
  std::vector<diff::Gradients> sample_grads(std::min(bs, n));
  for (auto& g : sample_grads) g = diff::zero_gradients(params);
  std::vector<double> sample_loss(sample_grads.size());
  diff::Gradients batch = diff::zero_gradients(params);
  const diff::Tensor seed_grad({1}, 1.0);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  double best_auc = -1.0, best_val_loss = INFINITY;
  bool selected_by_auc = false;
  diff::ParamSet best = params;

  for (int epoch = 1; epoch <= t.epochs; ++epoch) {
    auto rng = make_rng(*t.seed, {0x7a1, static_cast<std::uint64_t>(epoch)});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0, b = 0; start < n; start += bs, ++b) {
      const std::size_t m = std::min(bs, n - start);
      parallel_for(m, t.threads, [&](std::size_t k) {
        const auto& s = train.samples[order[start + k]];
        auto& g = sample_grads[k];
        for (auto& x : g) x.fill(0.0);
        diff::Tape tape(params);
        auto x = tape.input(s.input);
        auto z = models::logit_forward(tape, c, x);
        auto loss = tape.bce_with_logits(z, static_cast<double>(s.label));
        sample_loss[k] = tape.value(loss)[0];
        tape.backward_into(loss, seed_grad, g);
      });
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < m; ++k) batch_loss += sample_loss[k];
      if (!std::isfinite(batch_loss)) {
        std::ostringstream os;
        os << "non-finite loss at epoch " << epoch << ", batch " << b << "; samples:";
        for (std::size_t k = 0; k < m; ++k)
          os << " [record " << train.samples[order[start + k]].record << ": loss " << sample_loss[k] << "]";
        throw RuntimeFailure(os.str());
      }
      epoch_loss += batch_loss;
      for (auto& x : batch) x.fill(0.0);
      for (std::size_t k = 0; k < m; ++k) diff::accumulate(batch, sample_grads[k]);
      for (auto& x : batch) x *= 1.0 / static_cast<double>(m);
      opt.step(params, batch);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss / static_cast<double>(n);
    const auto ev = evaluate(params, c, val.samples, t.threads);
    log.val_loss = ev.loss;
    log.val_auc = ev.auc;
    if (!std::isfinite(log.val_loss) && !val.samples.empty())
      throw RuntimeFailure("non-finite validation loss at epoch " + std::to_string(epoch));

    // Selection: validation AUC when defined, else validation loss, else the
    // latest epoch.
    bool better = false;
    if (!std::isnan(ev.auc)) {
      better = !selected_by_auc || ev.auc > best_auc;
      if (better) selected_by_auc = true, best_auc = ev.auc;
    } else if (!selected_by_auc) {
      better = val.samples.empty() || ev.loss < best_val_loss;
      if (better) best_val_loss = ev.loss;
    }
    if (better) {
      best = params;
      result.best_epoch = epoch;
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
  }

  metadata["schema_version"] = kCheckpointSchemaVersion;
  metadata["model"] = c;
  metadata["training"] = t;
  metadata["seed"] = *t.seed;
  metadata["best_epoch"] = result.best_epoch;
  metadata["selection"] = selected_by_auc ? "val_auc" : (val.samples.empty() ? "last_epoch" : "val_loss");
  if (selected_by_auc) metadata["best_val_auc"] = best_auc;
  json trainable = json::array();
  for (const auto& p : best)
    if (p.trainable) trainable.push_back(p.name);
  metadata["trainable_parameters"] = trainable;
  result.checkpoint.metadata = std::move(metadata);
  result.checkpoint.params = std::move(best);
  return result;
}

TrainResult train_tdce(const models::ModelConfig& c_in, const TrainConfig& t, const Dataset& train,
                       const Dataset& val, const EpochCallback& on_epoch) {
  validate(t);
  models::ModelConfig c = c_in;
  if (c.front_end != models::FrontEnd::tdce) throw ValidationError("train_tdce requires front_end = tdce");
  if (!c.backbone.frozen) throw ValidationError("train_tdce requires a frozen backbone");
  auto params = initial_params(c, *t.seed);
  params.set_trainable_prefix("backbone.", false);
  json meta{{"regime", to_string(Regime::tdce)}, {"trainable_backbone_stages", json::array()}};
  return train_model(c, t, std::move(params), train, val, std::move(meta), on_epoch);
}

TrainResult train_gray_baseline(const models::ModelConfig& c_in, const TrainConfig& t, const Dataset& train,
                                const Dataset& val, const EpochCallback& on_epoch) {
  validate(t);
  models::ModelConfig c = c_in;
  if (c.front_end != models::FrontEnd::replicate)
    throw ValidationError("train_gray_baseline requires front_end = replicate");
  const auto stages = models::backbone_stage_prefixes(c);
  if (t.trainable_backbone_stages < 0 || t.trainable_backbone_stages > static_cast<int>(stages.size()))
    throw ValidationError("trainable_backbone_stages must be in 0.." + std::to_string(stages.size()));
  auto params = initial_params(c, *t.seed);
  params.set_trainable_prefix("backbone.", false);
  json trainable = json::array();
  for (std::size_t s = stages.size() - static_cast<std::size_t>(t.trainable_backbone_stages); s < stages.size(); ++s) {
    params.set_trainable_prefix(stages[s], true);
    trainable.push_back(stages[s].substr(0, stages[s].size() - 1));
  }
  json meta{{"regime", to_string(Regime::gray_baseline)}, {"trainable_backbone_stages", trainable}};
  return train_model(c, t, std::move(params), train, val, std::move(meta), on_epoch);
}

}  // namespace tdce::pipeline
