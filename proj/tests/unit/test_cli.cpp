#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "study_fixture.hpp"

#ifndef TDCE_BIN
#error "TDCE_BIN must name the tdce executable"
#endif

namespace fs = std::filesystem;
using tdce::testing::TempDir;

namespace {

int run(const std::string& args) {
  const std::string cmd = std::string(TDCE_BIN) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("exit codes") {
  TempDir dir("cli_codes");
  CHECK(run("--help") == 0);
  CHECK(run("") == 1);
  CHECK(run("split --bogus-flag") == 1);
  CHECK(run("split --manifest " + q(dir.path / "absent.jsonl") + " -o " + q(dir.path)) == 1);  // no seed
  CHECK(run("split --seed 1 --manifest " + q(dir.path / "absent.jsonl") + " -o " + q(dir.path)) == 1);
  std::ofstream(dir.path / "cfg.json") << R"({"seed": 1, "no_such_option": 2})";
  CHECK(run("split --config " + q(dir.path / "cfg.json")) == 1);
  std::ofstream(dir.path / "bad.jsonl") << "{\"patient_id\": \"P1\"}\n";
  CHECK(run("split --seed 1 --manifest " + q(dir.path / "bad.jsonl") + " -o " + q(dir.path / "o")) == 1);
}

TEST_CASE("split --seed 7 twice gives byte-identical outputs") {
  TempDir dir("cli_split");
  REQUIRE(run("synth --seed 3 --patients 12 --size 16 --deterministic -o " + q(dir.path / "data")) == 0);
  const auto m = dir.path / "data" / "manifest.jsonl";
  REQUIRE(run("split --seed 7 --deterministic --manifest " + q(m) + " -o " + q(dir.path / "a")) == 0);
  REQUIRE(run("split --seed 7 --deterministic --manifest " + q(m) + " -o " + q(dir.path / "b")) == 0);
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "run_manifest.json"}) {
    INFO(f);
    CHECK(slurp(dir.path / "a" / f) == slurp(dir.path / "b" / f));
    CHECK(!slurp(dir.path / "a" / f).empty());
  }
  const auto manifest = nlohmann::json::parse(slurp(dir.path / "a" / "run_manifest.json"));
  CHECK(manifest["seed"] == 7);
  CHECK(manifest["inputs"][0]["sha256"].get<std::string>().size() == 64);
  CHECK_FALSE(manifest.contains("started_at"));
  // Flags override the config file.
  std::ofstream(dir.path / "cfg.json") << R"({"seed": 8, "manifest": ")" + m.string() + R"(", "deterministic": true})";
  REQUIRE(run("split --config " + q(dir.path / "cfg.json") + " --seed 7 -o " + q(dir.path / "c")) == 0);
  CHECK(slurp(dir.path / "c" / "test.jsonl") == slurp(dir.path / "a" / "test.jsonl"));
}

TEST_CASE("evaluate on identical score files reports DeLong p = 1") {
  TempDir dir("cli_eval");
  std::ofstream csv(dir.path / "pred.csv");
  csv << "patient_id,study_id,laterality,view,score,label,density,findings\n";
  for (int i = 0; i < 24; ++i)
    csv << "P" << i << ",S," << (i % 2 ? "L" : "R") << ",CC," << (i * 0.037) << ","
        << (i % 3 == 0 ? "positive" : "negative") << ",B,none\n";
  csv.close();
  const auto p = dir.path / "pred.csv";
  REQUIRE(run("evaluate --seed 1 --resamples 200 --pred-a " + q(p) + " --pred-b " + q(p) + " -o " +
              q(dir.path / "ev")) == 0);
  const auto report = nlohmann::json::parse(slurp(dir.path / "ev" / "report.json"));
  CHECK(report["delong"]["p"] == 1.0);
  CHECK(fs::exists(dir.path / "ev" / "roc_tdce.csv"));
  CHECK(run("evaluate --resamples 200 --pred-a " + q(p) + " --pred-b " + q(p) + " -o " + q(dir.path / "x")) == 1);
}
