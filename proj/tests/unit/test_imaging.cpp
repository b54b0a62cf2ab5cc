#include <doctest.h>

#include <png.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "tdce/common/error.hpp"
#include "tdce/imaging/png_io.hpp"
#include "tdce/imaging/preprocess.hpp"

using namespace tdce;
using namespace tdce::imaging;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path p = fs::temp_directory_path() / ("tdce_imaging_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

RawImage blank(int w, int h, int depth, std::uint16_t v = 0) {
  return RawImage{w, h, depth, std::vector<std::uint16_t>(static_cast<std::size_t>(w) * h, v)};
}

void set(RawImage& img, int x, int y, std::uint16_t v) { img.pixels[static_cast<std::size_t>(y) * img.width + x] = v; }

// 8-bit gray + alpha, written with libpng directly.
void write_gray_alpha(const fs::path& p) {
  std::FILE* fp = std::fopen(p.c_str(), "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, fp);
  png_set_IHDR(png, info, 2, 2, 8, PNG_COLOR_TYPE_GRAY_ALPHA, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  unsigned char row[4] = {10, 255, 20, 255};
  png_write_row(png, row);
  png_write_row(png, row);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace

TEST_CASE("16-bit and 8-bit PNGs round-trip losslessly") {
  const auto dir = temp_dir();
  std::mt19937 rng(1);
  for (int depth : {8, 16}) {
    RawImage img = blank(13, 7, depth);
    for (auto& p : img.pixels) p = static_cast<std::uint16_t>(rng() % (img.max_value() + 1));
    const auto path = dir / ("rt" + std::to_string(depth) + ".png");
    write_gray_png(img, path);
    CHECK(load_png16(path) == img);
  }
}

TEST_CASE("image errors carry a code") {
  const auto dir = temp_dir();
  auto code_of = [](const fs::path& p) {
    try {
      load_png16(p);
    } catch (const ImageError& e) {
      return e.code();
    }
    FAIL("no ImageError");
    return ImageErrorCode::unsupported;
  };
  CHECK(code_of(dir / "absent.png") == ImageErrorCode::missing_file);
  write_gray_alpha(dir / "ga.png");
  CHECK(code_of(dir / "ga.png") == ImageErrorCode::not_grayscale);
  RgbImage rgb(2, 2);
  write_rgb_png(rgb, dir / "rgb.png");
  CHECK(code_of(dir / "rgb.png") == ImageErrorCode::not_grayscale);
  {
    std::FILE* fp = std::fopen((dir / "junk.png").c_str(), "wb");
    std::fputs("definitely not a png", fp);
    std::fclose(fp);
  }
  CHECK(code_of(dir / "junk.png") == ImageErrorCode::corrupt_stream);
}

TEST_CASE("quantize rounds half up") {
  CHECK(quantize(0.0, 8) == 0);
  CHECK(quantize(1.0, 8) == 255);
  CHECK(quantize(0.5, 8) == 128);  // 127.5 -> 128
  CHECK(quantize(1.0, 16) == 65535);
}

TEST_CASE("otsu separates a two-level image between the levels") {
  RawImage img = blank(10, 10, 8, 20);
  for (int y = 0; y < 10; ++y)
    for (int x = 5; x < 10; ++x) set(img, x, y, 200);
  const auto t = otsu_threshold(img);
  CHECK(t >= 20);
  CHECK(t < 200);
  // Smallest maximizer: every threshold in [20,200) separates equally well.
  CHECK(t == 20);
  CHECK_THROWS_AS(otsu_threshold(blank(4, 4, 8, 9)), ValidationError);
}

TEST_CASE("crop keeps the largest bright component") {
  RawImage img = blank(12, 10, 16);
  for (int y = 2; y < 6; ++y)
    for (int x = 3; x < 9; ++x) set(img, x, y, 50000);  // 24 px
  set(img, 0, 9, 60000);                                // isolated speck
  const auto crop = crop_to_roi(img, 1000);
  CHECK(crop.box == BoundingBox{3, 2, 6, 4});
  CHECK(crop.image.width == 6);
  CHECK(crop.image.height == 4);
}

TEST_CASE("resize pads the short axis symmetrically and normalizes") {
  RawImage img = blank(8, 4, 16, 65535);
  const auto pre = resize_pad_normalize(img, 16, 16);
  CHECK(pre.width == 16);
  CHECK(pre.height == 16);
  CHECK(pre.content == BoundingBox{0, 4, 16, 8});
  CHECK(pre.at(5, 0) == 0.0);
  CHECK(pre.at(5, 8) == doctest::Approx(1.0));
  for (double v : pre.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("preprocess output stays in [0,1] for random images") {
  std::mt19937 rng(5);
  for (int i = 0; i < 20; ++i) {
    RawImage img = blank(20 + static_cast<int>(rng() % 20), 20 + static_cast<int>(rng() % 20), 16);
    for (auto& p : img.pixels) p = static_cast<std::uint16_t>(rng() % 65536);
    const auto pre = preprocess(img, 32, 32);
    CHECK(pre.values.size() == 32u * 32u);
    for (double v : pre.values) CHECK((v >= 0.0 && v <= 1.0));
  }
}
