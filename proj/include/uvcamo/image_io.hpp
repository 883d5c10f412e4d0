#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "uvcamo/error.hpp"
#include "uvcamo/tensor.hpp"

namespace uvcamo {

// Key/value pairs stored as PNG tEXt chunks (config hash, seed, version).
using PngMetadata = std::map<std::string, std::string>;

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void write_png_rows(const std::string& path, int width, int height, int color_type, int bit_depth,
                           const std::vector<std::vector<png_byte>>& rows, const PngMetadata& meta) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed while writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_text> texts;
  std::vector<std::string> storage;
  storage.reserve(meta.size() * 2);
  for (const auto& [k, v] : meta) {
    storage.push_back(k);
    storage.push_back(v);
    png_text t{};
    t.compression = PNG_TEXT_COMPRESSION_NONE;
    t.key = storage[storage.size() - 2].data();
    t.text = storage.back().data();
    t.text_length = storage.back().size();
    texts.push_back(t);
  }
  if (!texts.empty()) png_set_text(png, info, texts.data(), static_cast<int>(texts.size()));
  png_write_info(png, info);
  for (const auto& r : rows) png_write_row(png, r.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct DecodedPng {
  int width = 0;
  int height = 0;
  int channels = 0;  // after expansion: 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> pixels;
  PngMetadata meta;
};

inline DecodedPng read_png_raw(const std::string& path, bool want_gray) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("invalid PNG file " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  DecodedPng out;
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  const bool is_gray = (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA);
  if (want_gray && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (!want_gray && is_gray) png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  out.channels = want_gray ? 1 : 3;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<png_byte> row(rowbytes);
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
  for (int y = 0; y < out.height; ++y) {
    png_read_row(png, row.data(), nullptr);
    std::copy_n(row.begin(), static_cast<std::size_t>(out.width) * out.channels,
                out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * out.width * out.channels);
  }
  png_read_end(png, info);
  png_textp text = nullptr;
  int ntext = 0;
  if (png_get_text(png, info, &text, &ntext) > 0)
    for (int i = 0; i < ntext; ++i) out.meta[text[i].key] = std::string(text[i].text, text[i].text_length);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace detail

// 8-bit RGB. Values are clamped to [0,1] and rounded to the nearest level.
inline void write_png_rgb(const std::string& path, const Image& img, const PngMetadata& meta = {}) {
  if (img.channels() != 3) throw ShapeMismatch("write_png_rgb expects 3 channels, got " + img.shape_string());
  std::vector<std::vector<png_byte>> rows(img.height(), std::vector<png_byte>(3 * img.width()));
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) rows[y][3 * x + c] = detail::to_byte(img(c, y, x));
  detail::write_png_rows(path, img.width(), img.height(), PNG_COLOR_TYPE_RGB, 8, rows, meta);
}

// 1-bit grayscale; any nonzero mask value is written as white.
inline void write_png_mask(const std::string& path, const Mask& m, const PngMetadata& meta = {}) {
  if (m.channels() != 1) throw ShapeMismatch("mask must have 1 channel");
  const int bytes = (m.width() + 7) / 8;
  std::vector<std::vector<png_byte>> rows(m.height(), std::vector<png_byte>(bytes, 0));
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m(0, y, x)) rows[y][x / 8] |= static_cast<png_byte>(0x80 >> (x % 8));
  detail::write_png_rows(path, m.width(), m.height(), PNG_COLOR_TYPE_GRAY, 1, rows, meta);
}

// 8-bit grayscale from a single-channel image in [0,1].
inline void write_png_gray(const std::string& path, const Image& img, const PngMetadata& meta = {}) {
  if (img.channels() != 1) throw ShapeMismatch("write_png_gray expects 1 channel");
  std::vector<std::vector<png_byte>> rows(img.height(), std::vector<png_byte>(img.width()));
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) rows[y][x] = detail::to_byte(img(0, y, x));
  detail::write_png_rows(path, img.width(), img.height(), PNG_COLOR_TYPE_GRAY, 8, rows, meta);
}

// RGB in [0,1], linearized by /255.
inline Image read_png_rgb(const std::string& path, PngMetadata* meta = nullptr) {
  auto d = detail::read_png_raw(path, false);
  Image img(3, d.height, d.width);
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x)
      for (int c = 0; c < 3; ++c)
        img(c, y, x) = d.pixels[(static_cast<std::size_t>(y) * d.width + x) * 3 + c] / 255.0;
  if (meta) *meta = std::move(d.meta);
  return img;
}

// Binary mask; any gray level other than black or white is rejected.
inline Mask read_png_mask(const std::string& path) {
  auto d = detail::read_png_raw(path, true);
  Mask m(1, d.height, d.width);
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x) {
      const auto v = d.pixels[static_cast<std::size_t>(y) * d.width + x];
      if (v != 0 && v != 255)
        throw InvariantViolation(path + ": mask pixel (" + std::to_string(x) + "," + std::to_string(y) +
                                 ") has gray value " + std::to_string(v) + ", mask must be binary");
      m(0, y, x) = v ? 1 : 0;
    }
  return m;
}

inline PngMetadata read_png_metadata(const std::string& path) { return detail::read_png_raw(path, false).meta; }

}  // namespace uvcamo
