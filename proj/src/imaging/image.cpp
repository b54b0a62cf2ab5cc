#include "tdce/imaging/image.hpp"

#include <string>

#include "tdce/common/error.hpp"

namespace tdce::imaging {

void validate(const RawImage& img) {
  if (img.width < 1 || img.height < 1)
    throw ValidationError("image dimensions must be >= 1, got " + std::to_string(img.width) + "x" +
                          std::to_string(img.height));
  if (img.bit_depth != 8 && img.bit_depth != 16)
    throw ValidationError("bit depth must be 8 or 16, got " + std::to_string(img.bit_depth));
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height)
    throw ValidationError("pixel count does not match dimensions");
  const auto maxv = img.max_value();
  for (auto p : img.pixels)
    if (p > maxv) throw ValidationError("pixel exceeds bit depth");
}

void validate(const RgbImage& img) {
  if (img.width < 1 || img.height < 1) throw ValidationError("RGB image dimensions must be >= 1");
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  for (const auto& c : img.channels) {
    if (c.size() != n) throw ValidationError("RGB channel size mismatch");
    for (double v : c)
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("RGB value outside [0,1]");
  }
}

}  // namespace tdce::imaging
