#include "tdce/imaging/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "tdce/common/error.hpp"

namespace tdce::imaging {
namespace {

using FilePtr = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  return FilePtr(std::fopen(path.c_str(), mode), &std::fclose);
}

struct Decoded {
  int width = 0;
  int height = 0;
  int bit_depth = 0;
  int channels = 0;
  std::vector<std::uint16_t> samples;  // interleaved
};

// libpng reports errors through longjmp; keep this frame free of objects
// with non-trivial destructors that are created after setjmp.
enum class DecodeStatus { ok, corrupt, color, gray_alpha };

DecodeStatus decode_raw(std::FILE* fp, bool want_gray, Decoded& out, std::string& message) {
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    message = "not a PNG stream";
    return DecodeStatus::corrupt;
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) {
    message = "png_create_read_struct failed";
    return DecodeStatus::corrupt;
  }
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    message = "png_create_info_struct failed";
    return DecodeStatus::corrupt;
  }
  std::vector<png_bytep>* rows = new std::vector<png_bytep>();
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    delete rows;
    message = "corrupt PNG stream";
    return DecodeStatus::corrupt;
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color_type = png_get_color_type(png, info);
  const bool is_gray = color_type == PNG_COLOR_TYPE_GRAY;
  const int file_depth = png_get_bit_depth(png, info);
  const int depth = is_gray && file_depth < 8 ? 8 : file_depth;
  if (want_gray && !is_gray) {
    png_destroy_read_struct(&png, &info, nullptr);
    delete rows;
    message = color_type == PNG_COLOR_TYPE_GRAY_ALPHA ? "not grayscale (has alpha)" : "not grayscale";
    return color_type == PNG_COLOR_TYPE_GRAY_ALPHA ? DecodeStatus::gray_alpha : DecodeStatus::color;
  }
  if (!want_gray && color_type != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    delete rows;
    message = "not an RGB PNG";
    return DecodeStatus::color;
  }
  if (is_gray && file_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_swap(png);
  out.bit_depth = depth;  // read back from memory below: locals may not survive longjmp
  png_read_update_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char>* buffer = new std::vector<unsigned char>(rowbytes * h);
  rows->resize(h);
  for (png_uint_32 y = 0; y < h; ++y) (*rows)[y] = buffer->data() + y * rowbytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    delete rows;
    delete buffer;
    message = "corrupt PNG stream";
    return DecodeStatus::corrupt;
  }
  png_read_image(png, rows->data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  out.width = static_cast<int>(w);
  out.height = static_cast<int>(h);
  out.channels = want_gray ? 1 : 3;
  const std::size_t n = static_cast<std::size_t>(w) * h * out.channels;
  out.samples.resize(n);
  if (out.bit_depth == 16) {
    std::memcpy(out.samples.data(), buffer->data(), n * sizeof(std::uint16_t));
  } else {
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = (*buffer)[i];
  }
  delete rows;
  delete buffer;
  return DecodeStatus::ok;
}

Decoded decode(const std::filesystem::path& path, bool want_gray) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec))
    throw ImageError(ImageErrorCode::missing_file, "missing file: " + path.string());
  auto fp = open_file(path, "rb");
  if (!fp) throw ImageError(ImageErrorCode::missing_file, "cannot open: " + path.string());
  Decoded d;
  std::string message;
  switch (decode_raw(fp.get(), want_gray, d, message)) {
    case DecodeStatus::ok:
      return d;
    case DecodeStatus::corrupt:
      throw ImageError(ImageErrorCode::corrupt_stream, message + ": " + path.string());
    case DecodeStatus::color:
    case DecodeStatus::gray_alpha:
      throw ImageError(ImageErrorCode::not_grayscale, message + ": " + path.string());
  }
  throw ImageError(ImageErrorCode::corrupt_stream, path.string());
}

bool encode(const std::filesystem::path& path, int width, int height, int bit_depth, int color_type,
            const std::vector<std::uint16_t>& samples, int channels) {
  auto fp = open_file(path, "wb");
  if (!fp) return false;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  const std::size_t bytes_per_sample = bit_depth == 16 ? 2 : 1;
  const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * bytes_per_sample;
  std::vector<unsigned char> buffer(rowbytes * height);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (bit_depth == 16) {
      buffer[2 * i] = static_cast<unsigned char>(samples[i] >> 8);  // PNG is big-endian
      buffer[2 * i + 1] = static_cast<unsigned char>(samples[i] & 0xff);
    } else {
      buffer[i] = static_cast<unsigned char>(samples[i]);
    }
  }
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + y * rowbytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return std::fflush(fp.get()) == 0;
}

}  // namespace

std::uint16_t quantize(double v, int bit_depth) {
  const double maxv = static_cast<double>((1u << bit_depth) - 1u);
  const double q = std::floor(std::clamp(v, 0.0, 1.0) * maxv + 0.5);
  return static_cast<std::uint16_t>(q);
}

RawImage load_png16(const std::filesystem::path& path) {
  Decoded d = decode(path, true);
  RawImage img;
  img.width = d.width;
  img.height = d.height;
  img.bit_depth = d.bit_depth;
  img.pixels = std::move(d.samples);
  return img;
}

RawRgbImage load_rgb_png(const std::filesystem::path& path) {
  Decoded d = decode(path, false);
  RawRgbImage img;
  img.width = d.width;
  img.height = d.height;
  img.bit_depth = d.bit_depth;
  const std::size_t n = static_cast<std::size_t>(d.width) * d.height;
  for (int c = 0; c < 3; ++c) {
    img.channels[c].resize(n);
    for (std::size_t i = 0; i < n; ++i) img.channels[c][i] = d.samples[3 * i + c];
  }
  return img;
}

void write_gray_png(const RawImage& img, const std::filesystem::path& path) {
  validate(img);
  if (!encode(path, img.width, img.height, img.bit_depth, PNG_COLOR_TYPE_GRAY, img.pixels, 1))
    throw ImageError(ImageErrorCode::unwritable_path, "cannot write " + path.string());
}

void write_rgb_png(const RgbImage& img, const std::filesystem::path& path, int bit_depth) {
  validate(img);
  if (bit_depth != 8 && bit_depth != 16)
    throw ImageError(ImageErrorCode::unsupported, "bit depth must be 8 or 16");
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  std::vector<std::uint16_t> samples(3 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) samples[3 * i + c] = quantize(img.channels[c][i], bit_depth);
  if (!encode(path, img.width, img.height, bit_depth, PNG_COLOR_TYPE_RGB, samples, 3))
    throw ImageError(ImageErrorCode::unwritable_path, "cannot write " + path.string());
}

}  // namespace tdce::imaging
