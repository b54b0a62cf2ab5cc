#pragma once

#include <array>
#include <string>
#include <vector>

#include "tdce/imaging/image.hpp"

namespace tdce::models {

struct ColormapAnchor {
  double intensity = 0.0;
  std::array<double, 3> rgb{};
};

// Piecewise-linear intensity -> RGB table. Anchors strictly increasing in
// intensity, first at 0 and last at 1, components in [0,1].
struct ColormapTable {
  std::string name;
  std::vector<ColormapAnchor> anchors;
};

void validate(const ColormapTable& table);

ColormapTable grayscale_colormap();
// Eight-anchor black -> red -> yellow -> white ramp; monotone per channel.
ColormapTable heat_colormap();
ColormapTable colormap_by_name(const std::string& name);

std::array<double, 3> lookup(const ColormapTable& table, double intensity);
imaging::RgbImage apply_colormap(const imaging::PreprocessedImage& img, const ColormapTable& table);

}  // namespace tdce::models
