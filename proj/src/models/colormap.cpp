#include "tdce/models/colormap.hpp"

#include <algorithm>

#include "tdce/common/error.hpp"

namespace tdce::models {

void validate(const ColormapTable& table) {
  const auto& a = table.anchors;
  if (a.size() < 2) throw ValidationError("colormap: need at least two anchors");
  if (a.front().intensity != 0.0 || a.back().intensity != 1.0)
    throw ValidationError("colormap: anchors must start at 0 and end at 1");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i > 0 && !(a[i].intensity > a[i - 1].intensity))
      throw ValidationError("colormap: anchor intensities must be strictly increasing");
    for (double c : a[i].rgb)
      if (!(c >= 0.0 && c <= 1.0)) throw ValidationError("colormap: colour component outside [0,1]");
  }
}

ColormapTable grayscale_colormap() { return {"gray", {{0.0, {0, 0, 0}}, {1.0, {1, 1, 1}}}}; }

ColormapTable heat_colormap() {
  return {"heat",
          {{0.0, {0.0, 0.0, 0.0}},
           {1.0 / 7, {0.35, 0.0, 0.0}},
           {2.0 / 7, {0.7, 0.0, 0.0}},
           {3.0 / 7, {1.0, 0.1, 0.0}},
           {4.0 / 7, {1.0, 0.45, 0.0}},
           {5.0 / 7, {1.0, 0.8, 0.0}},
           {6.0 / 7, {1.0, 1.0, 0.4}},
           {1.0, {1.0, 1.0, 1.0}}}};
}

ColormapTable colormap_by_name(const std::string& name) {
  if (name == "gray") return grayscale_colormap();
  if (name == "heat") return heat_colormap();
  throw ValidationError("unknown colormap '" + name + "' (expected gray|heat)");
}

std::array<double, 3> lookup(const ColormapTable& table, double intensity) {
  const auto& a = table.anchors;
  const double t = std::clamp(intensity, 0.0, 1.0);
  auto hi = std::upper_bound(a.begin(), a.end(), t,
                             [](double v, const ColormapAnchor& an) { return v < an.intensity; });
  if (hi == a.end()) return a.back().rgb;
  if (hi == a.begin()) return a.front().rgb;
  const auto lo = hi - 1;
  const double f = (t - lo->intensity) / (hi->intensity - lo->intensity);
  std::array<double, 3> out{};
  for (int c = 0; c < 3; ++c) out[c] = std::clamp(lo->rgb[c] + f * (hi->rgb[c] - lo->rgb[c]), 0.0, 1.0);
  return out;
}

imaging::RgbImage apply_colormap(const imaging::PreprocessedImage& img, const ColormapTable& table) {
  validate(table);
  imaging::RgbImage out(img.height, img.width);
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    const auto rgb = lookup(table, img.values[i]);
    for (int c = 0; c < 3; ++c) out.channels[c][i] = rgb[c];
  }
  return out;
}

}  // namespace tdce::models
