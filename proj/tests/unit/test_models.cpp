#include <doctest.h>

#include <random>

#include "tdce/common/error.hpp"
#include "tdce/models/colormap.hpp"
#include "tdce/models/network.hpp"

using namespace tdce;
using namespace tdce::models;

namespace {

ModelConfig tiny(FrontEnd f) {
  ModelConfig c;
  c.front_end = f;
  c.input_height = c.input_width = 16;
  c.tdce.depth = 2;
  c.tdce.base_channels = 4;
  c.backbone.widths = {4, 8};
  c.head.hidden = 4;
  return c;
}

imaging::PreprocessedImage ramp(int n) {
  imaging::PreprocessedImage img;
  img.height = img.width = n;
  for (int i = 0; i < n * n; ++i) img.values.push_back(static_cast<double>(i) / (n * n - 1));
  return img;
}

}  // namespace

TEST_CASE("heat colormap hits its endpoints and rises per channel") {
  const auto heat = heat_colormap();
  validate(heat);
  CHECK(heat.anchors.size() == 8);
  const auto lo = lookup(heat, 0.0), hi = lookup(heat, 1.0);
  CHECK(lo == std::array<double, 3>{0, 0, 0});
  CHECK(hi == std::array<double, 3>{1, 1, 1});
  std::array<double, 3> prev = lo;
  for (int i = 1; i <= 1000; ++i) {
    const auto v = lookup(heat, i / 1000.0);
    for (int k = 0; k < 3; ++k) CHECK(v[k] >= prev[k]);
    prev = v;
  }
}

TEST_CASE("colormap tables are validated") {
  ColormapTable bad{"bad", {{0.0, {0, 0, 0}}, {0.5, {1, 1, 1}}}};  // does not end at 1
  CHECK_THROWS_AS(validate(bad), ValidationError);
  ColormapTable out_of_range{"bad", {{0.0, {0, 0, 0}}, {1.0, {1.5, 1, 1}}}};
  CHECK_THROWS_AS(validate(out_of_range), ValidationError);
  CHECK_THROWS_AS(colormap_by_name("viridis-ish"), ValidationError);
  const auto gray = grayscale_colormap();
  CHECK(lookup(gray, 0.25)[1] == doctest::Approx(0.25));
}

TEST_CASE("model configs are validated") {
  auto c = tiny(FrontEnd::tdce);
  c.input_height = 15;  // not divisible by 2^depth
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = tiny(FrontEnd::tdce);
  c.backbone.widths.clear();
  CHECK_THROWS_AS(validate(c), ValidationError);
}

TEST_CASE("backbone parameters start frozen; tdce and head are trainable") {
  const auto ps = init_params(tiny(FrontEnd::tdce), 3);
  std::size_t backbone = 0;
  for (const auto& p : ps) {
    if (p.name.rfind("backbone.", 0) == 0) {
      ++backbone;
      CHECK_FALSE(p.trainable);
    } else {
      CHECK(p.trainable);
    }
  }
  CHECK(backbone > 0);
  // The replicate front end has no TDCE parameters but the same backbone.
  const auto gray = init_params(tiny(FrontEnd::replicate), 3);
  CHECK_FALSE(gray.contains("tdce.out.weight"));
  CHECK(gray.hash_prefix("backbone.") == ps.hash_prefix("backbone."));
}

TEST_CASE("tdce encoding is three channels in [0,1]") {
  const auto c = tiny(FrontEnd::tdce);
  const auto ps = init_params(c, 9);
  const auto rgb = tdce_encode(ramp(16), ps, c);
  CHECK(rgb.height == 16);
  CHECK(rgb.width == 16);
  for (const auto& ch : rgb.channels) {
    CHECK(ch.size() == 256);
    for (double v : ch) CHECK((v >= 0.0 && v <= 1.0));
  }
}

TEST_CASE("replication copies the gray channel") {
  const auto img = ramp(8);
  const auto rgb = replicate_channels(img);
  for (const auto& ch : rgb.channels) CHECK(ch == img.values);
}

TEST_CASE("probabilities agree between the tensor and image paths") {
  const auto c = tiny(FrontEnd::tdce);
  const auto ps = init_params(c, 4);
  const auto img = ramp(16);
  const double p = predict_probability(img, ps, c);
  CHECK(p > 0.0);
  CHECK(p < 1.0);
  CHECK(classify(tdce_encode(img, ps, c), ps, c) == doctest::Approx(p).epsilon(1e-12));
}
