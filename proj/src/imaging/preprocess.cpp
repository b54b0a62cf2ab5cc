#include "tdce/imaging/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tdce/common/error.hpp"
#include "tdce/imaging/png_io.hpp"

namespace tdce::imaging {

std::uint32_t otsu_threshold(const RawImage& image) {
  validate(image);
  const std::size_t levels = std::size_t{1} << image.bit_depth;
  std::vector<std::uint64_t> hist(levels, 0);
  for (auto p : image.pixels) ++hist[p];
  if (std::count_if(hist.begin(), hist.end(), [](auto c) { return c > 0; }) < 2)
    throw ValidationError("otsu: degenerate histogram (fewer than two distinct intensities)");

  const std::uint64_t total = image.pixels.size();
  std::uint64_t total_sum = 0;
  for (std::size_t v = 0; v < levels; ++v) total_sum += hist[v] * v;

  // Class statistics come from exact integer counts and sums, so plateaus of
  // the variance curve compare equal bit-for-bit.
  std::uint64_t n0 = 0, s0 = 0;
  double best = -1.0;
  std::uint32_t best_t = 0;
  const double n = static_cast<double>(total);
  for (std::size_t t = 0; t + 1 < levels; ++t) {
    n0 += hist[t];
    s0 += hist[t] * t;
    const std::uint64_t n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const double w0 = static_cast<double>(n0) / n;
    const double w1 = static_cast<double>(n1) / n;
    const double mu0 = static_cast<double>(s0) / static_cast<double>(n0);
    const double mu1 = static_cast<double>(total_sum - s0) / static_cast<double>(n1);
    const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (var > best) {
      best = var;
      best_t = static_cast<std::uint32_t>(t);
    }
  }
  return best_t;
}

RoiCrop crop_to_roi(const RawImage& image, std::uint32_t threshold) {
  validate(image);
  const int w = image.width, h = image.height;
  const std::size_t n = image.pixels.size();
  std::vector<int> label(n, -1);
  std::vector<std::size_t> stack;
  int best_label = -1;
  std::size_t best_size = 0;
  BoundingBox best_box;
  int next_label = 0;
  for (std::size_t start = 0; start < n; ++start) {
    if (image.pixels[start] <= threshold || label[start] >= 0) continue;
    const int id = next_label++;
    std::size_t size = 0;
    int x0 = w, y0 = h, x1 = -1, y1 = -1;
    label[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t idx = stack.back();
      stack.pop_back();
      ++size;
      const int x = static_cast<int>(idx % w), y = static_cast<int>(idx / w);
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      auto visit = [&](int nx, int ny) {
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) return;
        const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
        if (image.pixels[j] > threshold && label[j] < 0) {
          label[j] = id;
          stack.push_back(j);
        }
      };
      visit(x - 1, y);
      visit(x + 1, y);
      visit(x, y - 1);
      visit(x, y + 1);
    }
    if (size > best_size) {
      best_size = size;
      best_label = id;
      best_box = {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
    }
  }
  if (best_label < 0) throw ValidationError("crop_to_roi: no foreground pixels above threshold");

  RoiCrop out;
  out.box = best_box;
  out.image.width = best_box.w;
  out.image.height = best_box.h;
  out.image.bit_depth = image.bit_depth;
  out.image.pixels.reserve(static_cast<std::size_t>(best_box.w) * best_box.h);
  for (int y = best_box.y; y < best_box.y + best_box.h; ++y)
    for (int x = best_box.x; x < best_box.x + best_box.w; ++x) out.image.pixels.push_back(image.at(x, y));
  return out;
}

PreprocessedImage resize_pad_normalize(const RawImage& image, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) throw ValidationError("resize: target dimensions must be >= 1");
  validate(image);
  const double scale = std::min(static_cast<double>(target_w) / image.width,
                                static_cast<double>(target_h) / image.height);
  const int cw = std::clamp(static_cast<int>(std::lround(image.width * scale)), 1, target_w);
  const int ch = std::clamp(static_cast<int>(std::lround(image.height * scale)), 1, target_h);
  const int ox = (target_w - cw) / 2;
  const int oy = (target_h - ch) / 2;

  PreprocessedImage out;
  out.height = target_h;
  out.width = target_w;
  out.values.assign(static_cast<std::size_t>(target_h) * target_w, 0.0);
  out.source_crop = {0, 0, image.width, image.height};
  out.content = {ox, oy, cw, ch};

  const double inv_max = 1.0 / static_cast<double>(image.max_value());
  const double sx = static_cast<double>(image.width) / cw;
  const double sy = static_cast<double>(image.height) / ch;
  for (int y = 0; y < ch; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(image.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < cw; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(image.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double tx = fx - x0;
      const double top = (1.0 - tx) * image.at(x0, y0) + tx * image.at(x1, y0);
      const double bot = (1.0 - tx) * image.at(x0, y1) + tx * image.at(x1, y1);
      const double v = ((1.0 - ty) * top + ty * bot) * inv_max;
      out.values[static_cast<std::size_t>(oy + y) * target_w + (ox + x)] = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

PreprocessedImage preprocess(const RawImage& image, int target_h, int target_w) {
  const auto t = otsu_threshold(image);
  auto roi = crop_to_roi(image, t);
  auto out = resize_pad_normalize(roi.image, target_h, target_w);
  out.source_crop = roi.box;
  return out;
}

PreprocessedImage preprocess_file(const std::filesystem::path& path, int target_h, int target_w) {
  return preprocess(load_png16(path), target_h, target_w);
}

}  // namespace tdce::imaging
