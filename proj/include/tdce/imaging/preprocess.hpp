#pragma once

#include <cstdint>
#include <filesystem>

#include "tdce/imaging/image.hpp"

namespace tdce::imaging {

inline constexpr int kDefaultTargetSize = 256;

// Smallest threshold t maximizing between-class variance, with foreground
// defined as pixels > t. Throws ValidationError on a single-valued image.
std::uint32_t otsu_threshold(const RawImage& image);

struct RoiCrop {
  RawImage image;
  BoundingBox box;
};

// Tight box around the largest 4-connected component of pixels > threshold.
// Ties between equally large components go to the first in raster order.
RoiCrop crop_to_roi(const RawImage& image, std::uint32_t threshold);

// Aspect-preserving bilinear rescale into target_h x target_w, zero padding
// centred on the short axis, then division by 2^bit_depth - 1.
PreprocessedImage resize_pad_normalize(const RawImage& image, int target_h, int target_w);

// load -> otsu -> crop -> resize/pad/normalize.
PreprocessedImage preprocess(const RawImage& image, int target_h, int target_w);
PreprocessedImage preprocess_file(const std::filesystem::path& path, int target_h, int target_w);

}  // namespace tdce::imaging
