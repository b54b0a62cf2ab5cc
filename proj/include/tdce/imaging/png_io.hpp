#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "tdce/imaging/image.hpp"

namespace tdce::imaging {

enum class ImageErrorCode { missing_file, not_grayscale, corrupt_stream, unwritable_path, unsupported };

class ImageError : public std::runtime_error {
 public:
  ImageError(ImageErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ImageErrorCode code() const noexcept { return code_; }

 private:
  ImageErrorCode code_;
};

// Lossless decode of an 8- or 16-bit grayscale PNG (1/2/4-bit gray is
// expanded to 8-bit).
RawImage load_png16(const std::filesystem::path& path);
RawRgbImage load_rgb_png(const std::filesystem::path& path);

void write_gray_png(const RawImage& img, const std::filesystem::path& path);

// Quantizes each channel with round-half-up of v * (2^bit_depth - 1).
void write_rgb_png(const RgbImage& img, const std::filesystem::path& path, int bit_depth = 8);

std::uint16_t quantize(double v, int bit_depth);

}  // namespace tdce::imaging
