#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "tdce/common/error.hpp"
#include "tdce/pipeline/checkpoint.hpp"
#include "tdce/pipeline/prediction.hpp"
#include "tdce/pipeline/split.hpp"
#include "tdce/pipeline/synthetic.hpp"
#include "tdce/pipeline/training.hpp"

using namespace tdce;
using namespace tdce::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("tdce_pipeline_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Manifest parse(const std::string& text) {
  std::istringstream in(text);
  return parse_manifest(in);
}

}  // namespace

TEST_CASE("BI-RADS to triage label") {
  for (int c : {1, 2, 3}) CHECK(map_birads_to_label(c) == TriageLabel::negative);
  for (int c : {4, 5, 6}) CHECK(map_birads_to_label(c) == TriageLabel::positive);
  CHECK(map_birads_to_label(0) == TriageLabel::excluded);
  CHECK(map_birads_to_label(Birads::parse("4B")) == TriageLabel::positive);
  CHECK_THROWS_AS(map_birads_to_label(7), ValidationError);
  CHECK_THROWS_AS(Birads::parse("3A"), ValidationError);
}

TEST_CASE("density groups") {
  CHECK(density_group(Density::A) == DensityGroup::non_dense);
  CHECK(density_group(Density::B) == DensityGroup::non_dense);
  CHECK(density_group(Density::C) == DensityGroup::dense);
  CHECK(density_group(Density::D) == DensityGroup::dense);
  CHECK(density_group(Density::NR) == DensityGroup::NR);
}

TEST_CASE("manifest errors name the line and the field") {
  const std::string good =
      R"({"patient_id":"P1","study_id":"S1","laterality":"L","view":"CC","birads":2,"image_path":"a.png"})";
  try {
    parse(good + "\n\n" + R"({"patient_id":"P2","laterality":"X","view":"CC","birads":2})" + "\n");
    FAIL("accepted bad laterality");
  } catch (const ManifestError& e) {
    CHECK(e.line() == 3);
    CHECK(e.field() == "laterality");
  }
  try {
    parse(R"({"patient_id":"P2","laterality":"L","view":"CC"})");
    FAIL("accepted missing birads");
  } catch (const ManifestError& e) {
    CHECK(e.field() == "birads");
  }
  CHECK_THROWS_AS(parse(good + "\n" + good + "\n"), ManifestError);  // duplicate key
  CHECK_THROWS_AS(parse("{not json\n"), ManifestError);
}

TEST_CASE("manifest records round-trip, unknown fields kept") {
  const auto m = parse(
      R"({"patient_id":"P1","study_id":"S1","laterality":"R","view":"MLO","birads":"4A","density":"C","findings":["mass","calcification"],"image_path":"x.png","site":"north"})");
  REQUIRE(m.size() == 1);
  const auto& r = m[0];
  CHECK(r.birads.category == 4);
  CHECK(r.birads.subcategory == 'A');
  CHECK(r.findings == std::vector<Finding>{Finding::mass, Finding::calcification});
  CHECK(r.extra["site"] == "north");
  const auto back = record_from_json(record_to_json(r));
  CHECK(record_to_json(back) == record_to_json(r));
}

TEST_CASE("patient split: disjoint, complete, deterministic") {
  std::mt19937_64 rng(1);
  Manifest m;
  for (int p = 0; p < 57; ++p)
    for (const char* lat : {"L", "R"}) {
      CaseRecord r;
      r.patient_id = "P" + std::to_string(p);
      r.study_id = "S" + std::to_string(rng() % 2);
      r.laterality = parse_laterality(lat);
      m.push_back(r);
    }
  const auto a = split_patients(m, {}, 7), b = split_patients(m, {}, 7);
  CHECK(a.train.size() + a.val.size() + a.test.size() == m.size());
  std::map<std::string, std::set<int>> where;
  int k = 0;
  for (const auto* part : {&a.train, &a.val, &a.test}) {
    for (const auto& r : *part) where[r.patient_id].insert(k);
    ++k;
  }
  for (const auto& [p, parts] : where) CHECK(parts.size() == 1);
  std::ostringstream sa, sb;
  for (const auto& r : a.test) sa << record_to_json(r).dump();
  for (const auto& r : b.test) sb << record_to_json(r).dump();
  CHECK(sa.str() == sb.str());
  CHECK_THROWS_AS(split_patients(m, {0.5, 0.5, 0.5}, 7), ValidationError);
}

TEST_CASE("breast aggregation: max over views, label and density rules") {
  auto view = [](const char* lat, View v, std::optional<double> s, int birads, Density d) {
    CaseRecord c;
    c.patient_id = "P";
    c.study_id = "S";
    c.laterality = parse_laterality(lat);
    c.view = v;
    c.birads.category = birads;
    c.density = d;
    auto r = prediction_stub(c);
    r.score = s;
    return r;
  };
  const std::vector<PredictionRecord> views{
      view("L", View::CC, 0.2, 2, Density::NR), view("L", View::MLO, 0.7, 4, Density::B),
      view("R", View::CC, std::nullopt, 0, Density::D), view("R", View::MLO, 0.1, 0, Density::C)};
  const auto b = aggregate_breast(views);
  REQUIRE(b.size() == 2);
  CHECK(*b[0].score == 0.7);
  CHECK(b[0].label == TriageLabel::positive);
  CHECK(b[0].density == Density::B);
  CHECK_FALSE(b[0].view.has_value());
  CHECK(*b[1].score == 0.1);
  CHECK(b[1].label == TriageLabel::excluded);
  CHECK(b[1].density == Density::D);
  // A breast without any scored view.
  std::vector<PredictionRecord> bad{view("L", View::CC, std::nullopt, 2, Density::A)};
  CHECK_THROWS_AS(aggregate_breast(bad), ValidationError);
  std::vector<std::string> skipped;
  CHECK(aggregate_breast(bad, &skipped).empty());
  CHECK(skipped.size() == 1);
}

TEST_CASE("predictions CSV round-trips") {
  const auto dir = temp_dir("csv");
  CaseRecord c;
  c.patient_id = "P,1";  // needs quoting
  c.study_id = "S";
  c.birads.category = 5;
  c.findings = {Finding::mass, Finding::distortion};
  auto r = prediction_stub(c);
  r.score = 0.123456789012345;
  std::vector<PredictionRecord> recs{r};
  write_predictions_csv(recs, dir / "p.csv");
  const auto back = read_predictions_csv(dir / "p.csv");
  REQUIRE(back.size() == 1);
  CHECK(back[0].patient_id == "P,1");
  CHECK(*back[0].score == *r.score);
  CHECK(back[0].findings == r.findings);
  CHECK(predictions_csv(back) == predictions_csv(recs));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  models::ModelConfig mc;
  mc.input_height = mc.input_width = 16;
  mc.tdce.depth = 2;
  mc.tdce.base_channels = 2;
  mc.backbone.widths = {4};
  mc.head.hidden = 2;
  ModelCheckpoint ck;
  ck.params = models::init_params(mc, 5);
  ck.metadata["model"] = mc;
  const auto bytes = serialize(ck);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "MMC1");
  const auto back = deserialize(bytes);
  CHECK(back.params.hash() == ck.params.hash());
  CHECK(back.params.trainable_mask() == ck.params.trainable_mask());
  CHECK(serialize(back) == bytes);
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  CHECK_THROWS(deserialize(cut));
}

TEST_CASE("tdce training leaves the frozen backbone untouched") {
  SyntheticConfig sc;
  sc.patients = 12;
  sc.size = 16;
  sc.seed = 3;
  const auto dir = temp_dir("train");
  const auto m = write_synthetic(synthesize(sc), dir);
  models::ModelConfig mc;
  mc.input_height = mc.input_width = 16;
  mc.tdce.depth = 2;
  mc.tdce.base_channels = 2;
  mc.backbone.widths = {4, 4};
  mc.head.hidden = 4;
  const auto data = load_dataset(m, dir, mc, {});
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 1;
  const auto init = initial_params(mc, 1);
  const auto res = train_tdce(mc, tc, data, data);
  const auto& p = res.checkpoint.params;
  CHECK(p.hash_prefix("backbone.") == init.hash_prefix("backbone."));
  CHECK(p.hash_prefix("tdce.") != init.hash_prefix("tdce."));
  CHECK(res.log.size() == 2);
  tc.seed.reset();
  CHECK_THROWS_AS(train_tdce(mc, tc, data, data), ValidationError);
}

TEST_CASE("synthetic cohorts are reproducible per seed") {
  SyntheticConfig sc;
  sc.patients = 5;
  sc.size = 16;
  sc.seed = 42;
  const auto a = synthesize(sc), b = synthesize(sc, 3);
  REQUIRE(a.size() == 20);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(record_to_json(a[i].record) == record_to_json(b[i].record));
  }
  sc.seed = 43;
  CHECK_FALSE(synthesize(sc)[0].image == a[0].image);
}
