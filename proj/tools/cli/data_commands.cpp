// synth, preprocess, split.

#include <iostream>

#include "common.hpp"
#include "tdce/common/error.hpp"
#include "tdce/imaging/png_io.hpp"
#include "tdce/imaging/preprocess.hpp"
#include "tdce/pipeline/split.hpp"
#include "tdce/pipeline/synthetic.hpp"

namespace tdce::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path normal_abs(const fs::path& p) { return fs::absolute(p).lexically_normal(); }

json box_json(const imaging::BoundingBox& b) { return {{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h}}; }

void add_synth(CLI::App& app, Commands& out) {
  struct Args {
    Global g;
    pipeline::SyntheticConfig c;
  };
  auto a = std::make_shared<Args>();
  auto* sub = app.add_subcommand("synth", "generate a synthetic screening cohort (16-bit PNGs + manifest)");
  auto o = std::make_shared<Options>(sub);
  o->add_global(a->g, true);
  o->add("--patients", a->c.patients, "patients (4 images each)")->check(CLI::PositiveNumber);
  o->add("--size", a->c.size, "breast box size in pixels")->check(CLI::Range(8, 4096));
  o->add("--prevalence", a->c.prevalence, "fraction of suspicious breasts")->check(CLI::Range(0.0, 1.0));
  o->add("--texture", a->c.texture, "lesion checkerboard amplitude")->check(CLI::Range(0.0, 1.0));
  o->add("--noise", a->c.noise, "white noise sd")->check(CLI::NonNegativeNumber);
  o->add("--birads0-rate", a->c.birads0_rate, "breasts coded BI-RADS 0")->check(CLI::Range(0.0, 1.0));
  o->add("--birads6-rate", a->c.birads6_rate, "suspicious breasts coded BI-RADS 6")->check(CLI::Range(0.0, 1.0));
  out.push_back({sub, o, [a] {
                   a->c.seed = require_seed(a->g, "synth");
                   RunRecord rec("synth", a->g);
                   const auto cases = pipeline::synthesize(a->c, a->g.threads);
                   const auto manifest = pipeline::write_synthetic(cases, rec.out_dir(), a->g.threads);
                   const fs::path mpath = rec.out_dir() / "manifest.jsonl";
                   pipeline::write_manifest(manifest, mpath);
                   rec.output(mpath);
                   rec.param("patients", a->c.patients);
                   rec.param("size", a->c.size);
                   rec.param("prevalence", a->c.prevalence);
                   rec.param("texture", a->c.texture);
                   rec.param("noise", a->c.noise);
                   rec.param("birads0_rate", a->c.birads0_rate);
                   rec.param("birads6_rate", a->c.birads6_rate);
                   rec.write();
                   std::cout << "synth: " << manifest.size() << " images, manifest " << mpath.string() << "\n";
                   return 0;
                 }});
}

void add_preprocess(CLI::App& app, Commands& out) {
  struct Args {
    Global g;
    std::string manifest;
    int size = imaging::kDefaultTargetSize;
  };
  auto a = std::make_shared<Args>();
  auto* sub = app.add_subcommand("preprocess", "export preprocessed images and the Otsu/crop report");
  auto o = std::make_shared<Options>(sub);
  o->add_global(a->g, false);
  o->add("--manifest", a->manifest, "case manifest (JSONL)", true);
  o->add("--input-size", a->size, "square output size")->check(CLI::Range(8, 4096));
  out.push_back({sub, o, [a] {
                   RunRecord rec("preprocess", a->g);
                   const auto m = pipeline::read_manifest(a->manifest);
                   rec.input(a->manifest);
                   const fs::path dir = fs::path(a->manifest).parent_path();
                   json rows = json::array();
                   std::vector<std::string> failures;
                   for (const auto& r : m) {
                     const std::string stem = image_stem(r.patient_id, r.study_id, to_string(r.laterality),
                                                         to_string(r.view));
                     try {
                       const auto raw = imaging::load_png16(pipeline::resolve_image(r, dir));
                       const auto t = imaging::otsu_threshold(raw);
                       const auto crop = imaging::crop_to_roi(raw, t);
                       const auto pre = imaging::resize_pad_normalize(crop.image, a->size, a->size);
                       imaging::RawImage png{pre.width, pre.height, 16, {}};
                       png.pixels.reserve(pre.values.size());
                       for (double v : pre.values) png.pixels.push_back(imaging::quantize(v, 16));
                       const fs::path p = rec.out_dir() / "preprocessed" / (stem + ".png");
                       fs::create_directories(p.parent_path());
                       imaging::write_gray_png(png, p);
                       rows.push_back({{"image", r.image_path},
                                       {"output", p.lexically_relative(rec.out_dir()).generic_string()},
                                       {"bit_depth", raw.bit_depth},
                                       {"otsu_threshold", t},
                                       {"crop", box_json(crop.box)},
                                       {"content", box_json(pre.content)}});
                     } catch (const std::exception& e) {
                       failures.push_back(stem + ": " + e.what());
                     }
                   }
                   if (!failures.empty()) {
                     std::string msg = "preprocess: " + std::to_string(failures.size()) + " image(s) failed";
                     for (const auto& f : failures) msg += "\n  " + f;
                     throw ValidationError(msg);
                   }
                   const fs::path report = rec.out_dir() / "preprocess_report.json";
                   write_json(report, {{"input_size", a->size}, {"images", rows}});
                   rec.output(report);
                   rec.param("input_size", a->size);
                   rec.write();
                   std::cout << "preprocess: " << rows.size() << " images\n";
                   return 0;
                 }});
}

void add_split(CLI::App& app, Commands& out) {
  struct Args {
    Global g;
    std::string manifest;
    pipeline::SplitRatios ratios;
  };
  auto a = std::make_shared<Args>();
  auto* sub = app.add_subcommand("split", "patient-level train/val/test split");
  auto o = std::make_shared<Options>(sub);
  o->add_global(a->g, true);
  o->add("--manifest", a->manifest, "case manifest (JSONL)", true);
  o->add("--train", a->ratios.train, "train fraction")->check(CLI::Range(0.0, 1.0));
  o->add("--val", a->ratios.val, "validation fraction")->check(CLI::Range(0.0, 1.0));
  o->add("--test", a->ratios.test, "test fraction")->check(CLI::Range(0.0, 1.0));
  out.push_back({sub, o, [a] {
                   const auto seed = require_seed(a->g, "split");
                   RunRecord rec("split", a->g);
                   const auto m = pipeline::read_manifest(a->manifest);
                   rec.input(a->manifest);
                   const auto split = pipeline::split_patients(m, a->ratios, seed);
                   const fs::path src = fs::path(a->manifest).parent_path();
                   const fs::path dst = normal_abs(rec.out_dir());
                   auto rebase = [&](pipeline::Manifest part) {
                     for (auto& r : part)
                       r.image_path =
                           normal_abs(pipeline::resolve_image(r, src)).lexically_relative(dst).generic_string();
                     return part;
                   };
                   const std::pair<const char*, const pipeline::Manifest*> parts[] = {
                       {"train", &split.train}, {"val", &split.val}, {"test", &split.test}};
                   for (const auto& [name, part] : parts) {
                     const fs::path p = rec.out_dir() / (std::string(name) + ".jsonl");
                     pipeline::write_manifest(rebase(*part), p);
                     rec.output(p);
                   }
                   rec.param("train", a->ratios.train);
                   rec.param("val", a->ratios.val);
                   rec.param("test", a->ratios.test);
                   rec.write();
                   std::cout << "split: train " << split.train.size() << ", val " << split.val.size() << ", test "
                             << split.test.size() << " records\n";
                   return 0;
                 }});
}

}  // namespace

void register_data_commands(CLI::App& app, Commands& out) {
  add_synth(app, out);
  add_preprocess(app, out);
  add_split(app, out);
}

}  // namespace tdce::cli
