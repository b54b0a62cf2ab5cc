#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include "study_fixture.hpp"
#include "tdce/study/service.hpp"
#include "tdce/study/store.hpp"

using namespace tdce;
using namespace tdce::study;
using tdce::testing::TempDir;
using nlohmann::json;

namespace {

constexpr std::int64_t kT0 = 1'700'000'000'000;

struct Fixture {
  TempDir dir{"study"};
  std::int64_t now = kT0;
  mrmc::StudyPlan plan = tdce::testing::make_plan(3, 4);

  StudyService make(std::optional<int> washout = std::nullopt) {
    return StudyService({dir.path, [this] { return now; }, washout, false, {}});
  }
};

int status_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const StudyError& e) {
    return e.status();
  }
  return 200;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const json kSuspicious{{"binary_call", true}, {"birads", 4}};

json finish_session(StudyService& svc, const std::string& reader, int k, std::int64_t& now) {
  auto d = svc.open_session("S", reader, k);
  while (d["status"] == "open") {
    now += 1000;
    d = svc.rate("S", reader, k, d["case"]["case_id"], kSuspicious);
  }
  return d;
}

}  // namespace

TEST_CASE("cases are served in the plan's order for each reader and session") {
  Fixture f;
  auto svc = f.make(0);
  svc.create_study(json(f.plan));
  for (const auto& r : f.plan.readers)
    for (int k = 1; k <= 3; ++k) {
      std::vector<std::string> served;
      auto d = svc.open_session("S", r.reader_id, k);
      CHECK(d["condition"] == mrmc::to_string(r.order[static_cast<std::size_t>(k - 1)]));
      while (d["status"] == "open") {
        served.push_back(d["case"]["case_id"]);
        f.now += 10;
        d = svc.rate("S", r.reader_id, k, served.back(), kSuspicious);
      }
      CHECK(served == r.case_order[static_cast<std::size_t>(k - 1)]);
    }
}

TEST_CASE("washout: 423 with the unlock date, then open") {
  Fixture f;
  auto svc = f.make();
  svc.create_study(json(f.plan));
  finish_session(svc, "R1", 1, f.now);
  const auto done = f.now;
  f.now = done + kMsPerDay;
  try {
    svc.open_session("S", "R1", 2);
    FAIL("session 2 opened during washout");
  } catch (const StudyError& e) {
    CHECK(e.status() == 423);
    CHECK(e.detail()["unlock_at"] == iso_utc(done + 28 * kMsPerDay));
    CHECK(e.detail()["unlock_ms"] == done + 28 * kMsPerDay);
  }
  f.now = done + 28 * kMsPerDay;
  CHECK(svc.open_session("S", "R1", 2)["status"] == "open");
  // Session 3 stays locked while session 2 is incomplete.
  CHECK(status_of([&] { svc.open_session("S", "R1", 3); }) == 423);
}

TEST_CASE("duplicate and out-of-order ratings are refused and leave the store unchanged") {
  Fixture f;
  auto svc = f.make();
  svc.create_study(json(f.plan));
  auto d = svc.open_session("S", "R1", 1);
  const std::string first = d["case"]["case_id"];
  d = svc.rate("S", "R1", 1, first, kSuspicious);
  const std::string second = d["case"]["case_id"];
  const auto log_before = slurp(f.dir.path / kEventLogName);
  const auto seq_before = svc.state()->seq;

  CHECK(status_of([&] { svc.rate("S", "R1", 1, first, kSuspicious); }) == 409);
  const auto& order = f.plan.reader("R1").case_order[0];
  const std::string later = order[2];
  try {
    svc.rate("S", "R1", 1, later, kSuspicious);
    FAIL("skipped ahead");
  } catch (const StudyError& e) {
    CHECK(e.status() == 409);
    CHECK(e.detail()["current_case"] == second);
  }
  CHECK(slurp(f.dir.path / kEventLogName) == log_before);
  CHECK(svc.state()->seq == seq_before);
}

TEST_CASE("bad ids and bodies") {
  Fixture f;
  auto svc = f.make();
  svc.create_study(json(f.plan));
  CHECK(status_of([&] { svc.open_session("nope", "R1", 1); }) == 404);
  CHECK(status_of([&] { svc.open_session("S", "R9", 1); }) == 404);
  CHECK(status_of([&] { svc.open_session("S", "R1", 4); }) == 404);
  auto d = svc.open_session("S", "R1", 1);
  const std::string c = d["case"]["case_id"];
  CHECK(status_of([&] { svc.rate("S", "R1", 1, "C99", kSuspicious); }) == 404);
  CHECK(status_of([&] { svc.rate("S", "R1", 1, c, {{"binary_call", true}}); }) == 400);
  CHECK(status_of([&] { svc.rate("S", "R1", 1, c, {{"binary_call", true}, {"birads", 7}}); }) == 400);
  CHECK(status_of([&] { svc.rate("S", "R1", 1, c, {{"binary_call", "maybe"}, {"birads", 3}}); }) == 400);
  CHECK(status_of([&] { svc.create_study(json(f.plan)); }) == 409);
}

TEST_CASE("reader responses never carry reference or scoring fields") {
  Fixture f;
  auto svc = f.make(0);
  svc.create_study(json(f.plan));
  std::vector<json> responses;
  for (int k = 1; k <= 3; ++k) {
    auto d = svc.open_session("S", "R2", k);
    responses.push_back(d);
    responses.push_back(svc.session_status("S", "R2", k));
    while (d["status"] == "open") {
      f.now += 5;
      d = svc.rate("S", "R2", k, d["case"]["case_id"], kSuspicious);
      responses.push_back(d);
    }
  }
  for (const auto& r : responses) {
    std::vector<std::string> keys;
    tdce::testing::collect_keys(r, keys);
    for (const auto& bad : reader_forbidden_keys()) CHECK(std::find(keys.begin(), keys.end(), bad) == keys.end());
  }
}

TEST_CASE("images offered match the session's condition") {
  Fixture f;
  auto svc = f.make(0);
  svc.create_study(json(f.plan));
  for (const auto& r : f.plan.readers) {
    auto d = svc.open_session("S", r.reader_id, 1);
    const auto cond = r.order[0];
    const auto& imgs = d["case"]["views"][0]["images"];
    const std::string c = d["case"]["case_id"];
    CHECK(imgs.contains("grayscale") == (cond != mrmc::Condition::tdce_only));
    CHECK(imgs.contains("tdce") == (cond != mrmc::Condition::grayscale_only));
    const int tdce_status = status_of([&] { svc.image_path("S", r.reader_id, 1, c, "CC", ImageKind::tdce); });
    CHECK((tdce_status == 200) == (cond != mrmc::Condition::grayscale_only));
    if (cond == mrmc::Condition::grayscale_only) CHECK(tdce_status == 403);
    // Switching is a side-by-side affair.
    const int sw = status_of([&] { svc.switch_view("S", r.reader_id, 1, c, "tdce"); });
    CHECK((sw == 200) == (cond == mrmc::Condition::side_by_side));
  }
}

TEST_CASE("paused time is not counted") {
  Fixture f;
  auto svc = f.make();
  svc.create_study(json(f.plan));
  auto d = svc.open_session("S", "R1", 1);
  f.now += 10'000;
  svc.pause("S", "R1", 1);
  f.now += 600'000;
  svc.resume("S", "R1", 1);
  f.now += 5'000;
  svc.rate("S", "R1", 1, d["case"]["case_id"], kSuspicious);
  const auto& rating = svc.state()->find("S")->ratings.back();
  CHECK(mrmc::rating_seconds(rating) == doctest::Approx(15.0));
  CHECK(rating.intervals.size() == 2);
}

TEST_CASE("export after 2 readers x 3 cases x 1 condition has 6 rows") {
  Fixture f;
  f.plan = tdce::testing::make_plan(2, 3);
  auto svc = f.make();
  svc.create_study(json(f.plan));
  finish_session(svc, "R1", 1, f.now);
  finish_session(svc, "R2", 1, f.now);
  const auto csv = svc.export_csv("S");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  CHECK(csv.rfind(std::string(mrmc::kRatingsHeader) + "\n", 0) == 0);
}

TEST_CASE("a crash mid-interval is closed at the last event; resume starts a new interval") {
  Fixture f;
  std::string second;
  {
    auto svc = f.make();
    svc.create_study(json(f.plan));
    auto d = svc.open_session("S", "R1", 1);
    f.now += 4'000;
    second = svc.rate("S", "R1", 1, d["case"]["case_id"], kSuspicious)["case"]["case_id"];
    f.now += 5'000;
    svc.open_session("S", "R2", 1);  // last event before the "crash"
  }
  f.now += 3'600'000;
  auto svc = f.make();
  const auto& s = svc.state()->find("S")->readers.at("R1").sessions[0];
  CHECK(s.status == SessionStatus::paused);
  REQUIRE(s.pending.size() == 1);
  CHECK(s.pending[0].start_ms == kT0 + 4'000);
  CHECK(s.pending[0].stop_ms == kT0 + 9'000);
  CHECK(svc.open_session("S", "R1", 1)["case"]["case_id"] == second);  // resumes
  f.now += 2'000;
  svc.rate("S", "R1", 1, second, kSuspicious);
  const auto& rating = svc.state()->find("S")->ratings.back();
  CHECK(mrmc::rating_seconds(rating) == doctest::Approx(7.0));
}

TEST_CASE("recovery: torn tail truncated with a warning, replay equals snapshot") {
  Fixture f;
  {
    auto svc = f.make();
    svc.create_study(json(f.plan));
    finish_session(svc, "R1", 1, f.now);
  }
  const auto log = f.dir.path / kEventLogName;
  const auto good = slurp(log);
  {
    std::ofstream out(log, std::ios::binary | std::ios::app);
    out << R"({"seq":999,"t":1,"type":"ra)";
  }
  const auto rec = recover(f.dir.path, false);
  CHECK(rec.warnings.size() == 1);
  CHECK(slurp(log) == good);
  const auto snap = read_snapshot(f.dir.path);
  REQUIRE(snap.has_value());
  CHECK(*snap == to_json(replay(read_log(log).events)));
  CHECK(*snap == to_json(rec.state));
}

TEST_CASE("recovery of an empty or missing log is an error") {
  TempDir dir("empty");
  CHECK(status_of([&] { recover(dir.path, false); }) == 500);
  std::ofstream(dir.path / kEventLogName).close();
  CHECK(status_of([&] { recover(dir.path, false); }) == 500);
}

TEST_CASE("damage before the final record is not silently dropped") {
  Fixture f;
  {
    auto svc = f.make();
    svc.create_study(json(f.plan));
    svc.open_session("S", "R1", 1);
  }
  const auto log = f.dir.path / kEventLogName;
  auto text = slurp(log);
  text.insert(text.find('\n') + 1, "garbage\n");
  std::ofstream(log, std::ios::binary | std::ios::trunc) << text;
  CHECK_THROWS(read_log(log));
}

TEST_CASE("concurrent submissions for one cursor case: exactly one wins") {
  Fixture f;
  auto svc = f.make();
  svc.create_study(json(f.plan));
  const std::string c = svc.open_session("S", "R1", 1)["case"]["case_id"];
  std::atomic<int> ok{0}, conflict{0};
  std::vector<std::thread> ts;
  for (int i = 0; i < 8; ++i)
    ts.emplace_back([&] {
      const int st = status_of([&] { svc.rate("S", "R1", 1, c, kSuspicious); });
      (st == 200 ? ok : conflict)++;
    });
  for (auto& t : ts) t.join();
  CHECK(ok == 1);
  CHECK(conflict == 7);
  CHECK(svc.state()->find("S")->ratings.size() == 1);
}
