#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "tdce/common/csv.hpp"
#include "tdce/common/hash.hpp"
#include "tdce/common/parallel.hpp"
#include "tdce/common/random.hpp"

using namespace tdce;

TEST_CASE("sha256 of a known vector") {
  CHECK(sha256_hex(std::string_view("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex(std::string_view("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("derive_seed is a pure function of master and path") {
  CHECK(derive_seed(7, {1, 2}) == derive_seed(7, {1, 2}));
  CHECK(derive_seed(7, {1, 2}) != derive_seed(7, {2, 1}));
  CHECK(derive_seed(7, {1}) != derive_seed(8, {1}));
  CHECK(derive_seed(7, {}) != derive_seed(7, {0}));
}

TEST_CASE("csv escaping round-trips awkward fields") {
  const std::vector<std::string> fields{"plain", "with,comma", "with \"quote\"", "multi\nline", ""};
  const std::string line = csv::join(fields) + "\n";
  CHECK(csv::escape("with,comma") == "\"with,comma\"");
  std::istringstream in(line);
  std::vector<std::string> back;
  REQUIRE(csv::read_record(in, back));
  CHECK(back == fields);
  CHECK_FALSE(csv::read_record(in, back));
}

TEST_CASE("format_double is shortest round-trip") {
  CHECK(csv::format_double(0.5) == "0.5");
  CHECK(csv::format_double(1.0) == "1");
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng);
    CHECK(std::stod(csv::format_double(v)) == v);
  }
}

TEST_CASE("parallel_for visits every index once for any thread count") {
  for (unsigned threads : {1u, 2u, 5u}) {
    std::vector<int> hits(97, 0);
    parallel_for(hits.size(), threads, [&](std::size_t i) { ++hits[i]; });
    for (int h : hits) CHECK(h == 1);
  }
}
