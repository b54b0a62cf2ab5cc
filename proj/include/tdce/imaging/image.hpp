#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace tdce::imaging {

struct BoundingBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

// Grayscale image as decoded from disk. Row-major, pixels <= 2^bit_depth - 1.
struct RawImage {
  int width = 0;
  int height = 0;
  int bit_depth = 16;
  std::vector<std::uint16_t> pixels;

  std::uint16_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint32_t max_value() const { return (1u << bit_depth) - 1u; }
  friend bool operator==(const RawImage&, const RawImage&) = default;
};

// Network-ready single-channel image with values in [0,1].
struct PreprocessedImage {
  int height = 0;
  int width = 0;
  std::vector<double> values;
  BoundingBox source_crop;   // in original image coordinates
  BoundingBox content;       // resized content inside the padded frame

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct RgbImage {
  int height = 0;
  int width = 0;
  std::array<std::vector<double>, 3> channels;

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w) {
    for (auto& c : channels) c.assign(static_cast<std::size_t>(h) * w, 0.0);
  }
};

// Decoded RGB PNG, used to verify exported encodings.
struct RawRgbImage {
  int width = 0;
  int height = 0;
  int bit_depth = 8;
  std::array<std::vector<std::uint16_t>, 3> channels;
};

// Throws ValidationError unless the invariants of the type hold.
void validate(const RawImage& img);
void validate(const RgbImage& img);

}  // namespace tdce::imaging
