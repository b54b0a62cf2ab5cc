// train, encode, predict.

#include <cmath>
#include <iostream>
#include <map>
#include <sstream>

#include "common.hpp"
#include "tdce/common/csv.hpp"
#include "tdce/common/error.hpp"
#include "tdce/imaging/png_io.hpp"
#include "tdce/imaging/preprocess.hpp"
#include "tdce/models/colormap.hpp"
#include "tdce/pipeline/prediction.hpp"
#include "tdce/pipeline/training.hpp"

namespace tdce::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void add_train(CLI::App& app, Commands& out) {
  struct Args {
    Global g;
    std::string regime;
    std::string train, val;
    int epochs = 20;
    int batch_size = 16;
    double lr = 1e-3;
    double weight_decay = 0.0;
    std::string optimizer = "adam";
    int input_size = imaging::kDefaultTargetSize;
    int tdce_depth = 3;
    int tdce_base = 16;
    std::vector<int> widths{16, 32, 64, 128};
    int head_hidden = 64;
    std::string backbone_checkpoint;
    int trainable_stages = 1;
    bool include_birads6 = false;
  };
  auto a = std::make_shared<Args>();
  auto* sub = app.add_subcommand("train", "train the TDCE model or the grayscale baseline");
  auto o = std::make_shared<Options>(sub);
  o->add_global(a->g, true);
  o->add("--regime", a->regime, "tdce | gray-baseline", true)->check(CLI::IsMember({"tdce", "gray-baseline"}));
  o->add("--train", a->train, "training manifest", true);
  o->add("--val", a->val, "validation manifest (model selection)", true);
  o->add("--epochs", a->epochs, "epochs")->check(CLI::PositiveNumber);
  o->add("--batch-size", a->batch_size, "minibatch size")->check(CLI::PositiveNumber);
  o->add("--lr", a->lr, "learning rate")->check(CLI::PositiveNumber);
  o->add("--weight-decay", a->weight_decay, "L2 coefficient")->check(CLI::NonNegativeNumber);
  o->add("--optimizer", a->optimizer, "adam | sgd")->check(CLI::IsMember({"adam", "sgd"}));
  o->add("--input-size", a->input_size, "square network input")->check(CLI::Range(8, 4096));
  o->add("--tdce-depth", a->tdce_depth, "encoder levels")->check(CLI::Range(1, 8));
  o->add("--tdce-base", a->tdce_base, "channels at the first level")->check(CLI::PositiveNumber);
  o->add("--backbone-widths", a->widths, "channels per backbone stage");
  o->add("--head-hidden", a->head_hidden, "hidden units of the head")->check(CLI::PositiveNumber);
  o->add("--backbone-checkpoint", a->backbone_checkpoint, "initialize the backbone from this .mmc file");
  o->add("--trainable-stages", a->trainable_stages, "gray-baseline: final backbone stages left trainable")
      ->check(CLI::NonNegativeNumber);
  o->flag("--include-birads6", a->include_birads6, "train on BI-RADS 6 images too");
  out.push_back({sub, o, [a] {
                   const auto regime = pipeline::parse_regime(a->regime);
                   models::ModelConfig c;
                   c.front_end = regime == pipeline::Regime::tdce ? models::FrontEnd::tdce
                                                                  : models::FrontEnd::replicate;
                   c.input_height = c.input_width = a->input_size;
                   c.tdce.depth = a->tdce_depth;
                   c.tdce.base_channels = a->tdce_base;
                   c.backbone.widths = a->widths;
                   c.head.hidden = a->head_hidden;
                   if (!a->backbone_checkpoint.empty()) {
                     c.backbone.init = models::BackboneInit::external_checkpoint;
                     c.backbone.checkpoint = a->backbone_checkpoint;
                   }
                   models::validate(c);
                   pipeline::TrainConfig t;
                   t.optimizer.kind = diff::parse_optimizer_kind(a->optimizer);
                   t.optimizer.lr = a->lr;
                   t.optimizer.weight_decay = a->weight_decay;
                   t.batch_size = a->batch_size;
                   t.epochs = a->epochs;
                   t.seed = require_seed(a->g, "train");
                   t.threads = a->g.threads;
                   t.trainable_backbone_stages = a->trainable_stages;
                   t.include_birads6 = a->include_birads6;

                   RunRecord rec("train", a->g);
                   const auto mtrain = pipeline::read_manifest(a->train);
                   const auto mval = pipeline::read_manifest(a->val);
                   rec.input(a->train);
                   rec.input(a->val);
                   if (!a->backbone_checkpoint.empty()) rec.input(a->backbone_checkpoint);
                   const pipeline::DatasetOptions dopt{a->include_birads6, a->g.threads};
                   const auto train = pipeline::load_dataset(mtrain, fs::path(a->train).parent_path(), c, dopt);
                   const auto val = pipeline::load_dataset(mval, fs::path(a->val).parent_path(), c, dopt);
                   std::cout << "train: " << train.samples.size() << " train / " << val.samples.size()
                             << " val images (" << train.skipped.size() + val.skipped.size() << " skipped)\n";
                   auto on_epoch = [](const pipeline::EpochLog& e) {
                     std::cout << "epoch " << e.epoch << "  train_loss " << e.train_loss << "  val_loss "
                               << e.val_loss << "  val_auc " << e.val_auc << std::endl;
                   };
                   const auto res = regime == pipeline::Regime::tdce
                                        ? pipeline::train_tdce(c, t, train, val, on_epoch)
                                        : pipeline::train_gray_baseline(c, t, train, val, on_epoch);

                   const fs::path model = rec.out_dir() / "model.mmc";
                   pipeline::save_checkpoint(res.checkpoint, model);
                   rec.output(model);

                   json epochs = json::array();
                   std::ostringstream log_csv;
                   log_csv << "epoch,train_loss,val_loss,val_auc\n";
                   auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
                   for (const auto& e : res.log) {
                     epochs.push_back({{"epoch", e.epoch},
                                       {"train_loss", num(e.train_loss)},
                                       {"val_loss", num(e.val_loss)},
                                       {"val_auc", num(e.val_auc)}});
                     log_csv << e.epoch << ',' << csv::format_double(e.train_loss) << ','
                         << csv::format_double(e.val_loss) << ','
                         << (std::isfinite(e.val_auc) ? csv::format_double(e.val_auc) : "") << '\n';
                   }
                   const json log{{"regime", a->regime},
                                  {"initial_train_loss", res.initial_train_loss},
                                  {"best_epoch", res.best_epoch},
                                  {"epochs", epochs},
                                  {"skipped", json{{"train", train.skipped}, {"val", val.skipped}}},
                                  {"checkpoint", res.checkpoint.metadata}};
                   write_json(rec.out_dir() / "train_log.json", log);
                   write_text(rec.out_dir() / "train_log.csv", log_csv.str());
                   rec.output(rec.out_dir() / "train_log.json");
                   rec.output(rec.out_dir() / "train_log.csv");
                   rec.param("model", c);
                   rec.param("training", t);
                   rec.write();
                   std::cout << "train: best epoch " << res.best_epoch << ", model " << model.string() << "\n";
                   return 0;
                 }});
}

void add_encode(CLI::App& app, Commands& out) {
  struct Args {
    Global g;
    std::string model, manifest, mode, colormap = "heat";
  };
  auto a = std::make_shared<Args>();
  auto* sub = app.add_subcommand("encode", "write grayscale and encoded PNGs for each image");
  auto o = std::make_shared<Options>(sub);
  o->add_global(a->g, false);
  o->add("--model", a->model, "trained .mmc checkpoint", true);
  o->add("--manifest", a->manifest, "case manifest (JSONL)", true);
  o->add("--mode", a->mode, "tdce | colormap | replicate (default: the model's front end)")
      ->check(CLI::IsMember({"tdce", "colormap", "replicate"}));
  o->add("--colormap", a->colormap, "table for --mode colormap (heat | grayscale)");
  out.push_back({sub, o, [a] {
                   RunRecord rec("encode", a->g);
                   const auto ckpt = pipeline::load_checkpoint(a->model);
                   const auto c = ckpt.model_config();
                   std::string mode = a->mode;
                   if (mode.empty()) mode = c.front_end == models::FrontEnd::tdce ? "tdce" : "replicate";
                   if (mode == "tdce" && c.front_end != models::FrontEnd::tdce)
                     throw ValidationError("encode: --mode tdce needs a model trained with --regime tdce");
                   const auto table = models::colormap_by_name(a->colormap);
                   const auto m = pipeline::read_manifest(a->manifest);
                   rec.input(a->model);
                   rec.input(a->manifest);
                   const fs::path dir = fs::path(a->manifest).parent_path();
                   const fs::path img_dir = rec.out_dir() / "images";
                   fs::create_directories(img_dir);
                   std::ostringstream cases;
                   cases << "case_id,view,grayscale,tdce\n";
                   std::vector<std::string> failures;
                   // Breast label: positive if any view is, else negative if any is.
                   std::map<std::string, pipeline::TriageLabel> labels;
                   for (const auto& r : m) {
                     const auto id = breast_case_id(r.patient_id, r.study_id, to_string(r.laterality));
                     const auto l = pipeline::map_birads_to_label(r.birads);
                     auto [it, fresh] = labels.emplace(id, l);
                     if (!fresh && (l == pipeline::TriageLabel::positive ||
                                    (l == pipeline::TriageLabel::negative &&
                                     it->second == pipeline::TriageLabel::excluded)))
                       it->second = l;
                   }
                   for (const auto& r : m) {
                     const std::string lat = to_string(r.laterality), view = to_string(r.view);
                     const std::string stem = image_stem(r.patient_id, r.study_id, lat, view);
                     try {
                       const auto pre = imaging::preprocess_file(pipeline::resolve_image(r, dir), c.input_height,
                                                                 c.input_width);
                       imaging::RawImage gray{pre.width, pre.height, 16, {}};
                       for (double v : pre.values) gray.pixels.push_back(imaging::quantize(v, 16));
                       const std::string gname = stem + "_gray.png", ename = stem + "_" + mode + ".png";
                       imaging::write_gray_png(gray, img_dir / gname);
                       imaging::RgbImage rgb;
                       if (mode == "tdce") rgb = models::tdce_encode(pre, ckpt.params, c);
                       else if (mode == "colormap") rgb = models::apply_colormap(pre, table);
                       else rgb = models::replicate_channels(pre);
                       imaging::write_rgb_png(rgb, img_dir / ename);
                       cases << csv::join({breast_case_id(r.patient_id, r.study_id, lat), view, "images/" + gname,
                                           "images/" + ename})
                             << '\n';
                     } catch (const imaging::ImageError& e) {
                       failures.push_back(stem + ": " + e.what());
                     }
                   }
                   if (!failures.empty()) {
                     std::string msg = "encode: " + std::to_string(failures.size()) + " image(s) failed";
                     for (const auto& f : failures) msg += "\n  " + f;
                     throw ValidationError(msg);
                   }
                   std::ostringstream ref;
                   ref << "case_id,label\n";
                   for (const auto& [id, l] : labels) ref << csv::join({id, to_string(l)}) << '\n';
                   write_text(rec.out_dir() / "study_cases.csv", cases.str());
                   write_text(rec.out_dir() / "study_reference.csv", ref.str());
                   rec.output(rec.out_dir() / "study_cases.csv");
                   rec.output(rec.out_dir() / "study_reference.csv");
                   rec.param("mode", mode);
                   if (mode == "colormap") rec.param("colormap", a->colormap);
                   rec.write();
                   std::cout << "encode: " << m.size() << " images (" << mode << ") under " << img_dir.string()
                             << "\n";
                   return 0;
                 }});
}

void add_predict(CLI::App& app, Commands& out) {
  struct Args {
    Global g;
    std::string model, manifest;
  };
  auto a = std::make_shared<Args>();
  auto* sub = app.add_subcommand("predict", "score every image, then aggregate per breast");
  auto o = std::make_shared<Options>(sub);
  o->add_global(a->g, false);
  o->add("--model", a->model, "trained .mmc checkpoint", true);
  o->add("--manifest", a->manifest, "case manifest (JSONL)", true);
  out.push_back({sub, o, [a] {
                   RunRecord rec("predict", a->g);
                   const auto ckpt = pipeline::load_checkpoint(a->model);
                   const auto m = pipeline::read_manifest(a->manifest);
                   rec.input(a->model);
                   rec.input(a->manifest);
                   const auto views =
                       pipeline::predict_views(ckpt, m, fs::path(a->manifest).parent_path(), a->g.threads);
                   std::vector<std::string> unscoreable;
                   const auto breasts = pipeline::aggregate_breast(views, &unscoreable);
                   const fs::path pv = rec.out_dir() / "predictions_view.csv";
                   const fs::path pb = rec.out_dir() / "predictions_breast.csv";
                   pipeline::write_predictions_csv(views, pv);
                   pipeline::write_predictions_csv(breasts, pb);
                   rec.output(pv);
                   rec.output(pb);
                   std::size_t errors = 0;
                   for (const auto& v : views)
                     if (!v.score) {
                       ++errors;
                       std::cerr << "warning: " << v.patient_id << "/" << v.study_id << "/"
                                 << to_string(v.laterality) << "/" << to_string(*v.view) << ": " << v.error << "\n";
                     }
                   rec.param("unscored_views", errors);
                   rec.param("unscoreable_breasts", unscoreable);
                   rec.write();
                   std::cout << "predict: " << views.size() - errors << "/" << views.size() << " views scored, "
                             << breasts.size() << " breasts\n";
                   return 0;
                 }});
}

}  // namespace

void register_model_commands(CLI::App& app, Commands& out) {
  add_train(app, out);
  add_encode(app, out);
  add_predict(app, out);
}

}  // namespace tdce::cli
