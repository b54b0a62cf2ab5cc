#include <doctest.h>

#include <httplib.h>

#include <fstream>
#include <thread>

#include "study_fixture.hpp"
#include "tdce/imaging/png_io.hpp"
#include "tdce/study/http.hpp"

using namespace tdce;
using namespace tdce::study;
using tdce::testing::TempDir;
using nlohmann::json;

namespace {

struct Server {
  TempDir store{"http_store"};
  TempDir images{"http_images"};
  std::int64_t now = 1'700'000'000'000;
  std::unique_ptr<StudyService> service;
  std::unique_ptr<StudyServer> server;
  std::thread thread;
  int port = 0;

  explicit Server(std::optional<Tokens> tokens) {
    service = std::make_unique<StudyService>(ServiceOptions{store.path, [this] { return now; }, 0, false, {}});
    imaging::RawImage img{4, 4, 16, std::vector<std::uint16_t>(16, 1234)};
    for (int c = 0; c < 3; ++c)
      for (const char* v : {"CC", "MLO"}) {
        const std::string stem = "C" + std::to_string(c) + "_" + v;
        imaging::write_gray_png(img, images.path / (stem + "_gray.png"));
        imaging::write_gray_png(img, images.path / (stem + "_tdce.png"));
      }
    server = std::make_unique<StudyServer>(*service, ServerOptions{images.path, std::move(tokens)});
    port = server->bind("127.0.0.1", 0);
    thread = std::thread([this] { server->run(); });
  }
  ~Server() {
    server->stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_connection_timeout(5);
    return c;
  }
};

httplib::Headers bearer(const std::string& token) { return {{"Authorization", "Bearer " + token}}; }

}  // namespace

TEST_CASE("HTTP: create, open, image, rate, export") {
  Server s(std::nullopt);
  auto cli = s.client();
  const auto plan = tdce::testing::make_plan(2, 3);
  auto res = cli.Post("/studies", json(plan).dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);
  res = cli.Post("/studies", "{not json", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);

  const std::string base = "/studies/S/readers/R1/sessions/1";
  res = cli.Post(base + "/open", "", "application/json");
  REQUIRE(res);
  REQUIRE(res->status == 200);
  auto d = json::parse(res->body);
  CHECK(d["case_index"] == 1);  // 1-based for display

  // Image bytes for the condition's kind.
  const auto& images = d["case"]["views"][0]["images"];
  REQUIRE(!images.empty());
  res = cli.Get(images.begin().value().get<std::string>());
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type") == "image/png");
  CHECK(res->body.substr(1, 3) == "PNG");

  for (int i = 0; i < 3; ++i) {
    const std::string c = d["case"]["case_id"];
    res = cli.Post(base + "/cases/" + c + "/rating", R"({"binary_call": "suspicious", "birads": 4})",
                   "application/json");
    REQUIRE(res);
    REQUIRE(res->status == 200);
    d = json::parse(res->body);
  }
  CHECK(d["status"] == "complete");

  res = cli.Post(base + "/cases/C0/rating", R"({"binary_call": true, "birads": 4})", "application/json");
  REQUIRE(res);
  CHECK(res->status == 409);
  CHECK(json::parse(res->body).contains("error"));

  res = cli.Get("/studies/S/export");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type").rfind("text/csv", 0) == 0);
  CHECK(std::count(res->body.begin(), res->body.end(), '\n') == 4);

  res = cli.Get("/studies/nope");
  REQUIRE(res);
  CHECK(res->status == 404);
  res = cli.Post("/studies/S/readers/R1/sessions/2/open", "", "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);  // washout overridden to 0 days
  res = cli.Post("/studies/S/readers/R2/sessions/2/open", "", "application/json");
  REQUIRE(res);
  CHECK(res->status == 423);
  CHECK(json::parse(res->body).contains("requires_session"));
}

TEST_CASE("HTTP: bearer tokens separate readers and admin") {
  Tokens t;
  t.admin = "admin-secret";
  t.readers = {{"R1", "r1-secret"}, {"R2", "r2-secret"}};
  Server s(t);
  auto cli = s.client();
  const auto plan = tdce::testing::make_plan(2, 3);
  auto res = cli.Post("/studies", bearer("r1-secret"), json(plan).dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 401);
  res = cli.Post("/studies", bearer("admin-secret"), json(plan).dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);

  res = cli.Post("/studies/S/readers/R1/sessions/1/open", "", "application/json");
  REQUIRE(res);
  CHECK(res->status == 401);
  res = cli.Post("/studies/S/readers/R1/sessions/1/open", bearer("r2-secret"), "", "application/json");
  REQUIRE(res);
  CHECK(res->status == 401);
  res = cli.Post("/studies/S/readers/R1/sessions/1/open", bearer("r1-secret"), "", "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  res = cli.Get("/studies/S/export", bearer("r1-secret"));
  REQUIRE(res);
  CHECK(res->status == 401);
  res = cli.Get("/studies/S/export", bearer("admin-secret"));
  REQUIRE(res);
  CHECK(res->status == 200);
}

TEST_CASE("token file format") {
  TempDir dir("tokens");
  const auto p = dir.path / "tokens.json";
  std::ofstream(p) << R"({"admin": "a", "readers": {"R1": "x"}})";
  const auto t = read_tokens(p);
  CHECK(t.admin == "a");
  CHECK(t.readers.at("R1") == "x");
  std::ofstream(p, std::ios::trunc) << R"({"readers": {}})";
  CHECK_THROWS(read_tokens(p));
}
