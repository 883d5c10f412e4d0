#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

#include "uvcamo/image_io.hpp"
#include "uvcamo/mesh.hpp"
#include "uvcamo/tensor.hpp"

namespace uvcamo {

// UV texture atlas, 3 x H_t x W_t with texels in [0,1]. Row 0 is v = 1.
struct TextureMap {
  Image texels;

  TextureMap() = default;
  TextureMap(int height, int width, double fill = 0.0) : texels(3, height, width, fill) {}
  explicit TextureMap(Image img) : texels(std::move(img)) {
    if (texels.channels() != 3) throw ShapeMismatch("texture must have 3 channels");
  }

  int height() const noexcept { return texels.height(); }
  int width() const noexcept { return texels.width(); }

  static TextureMap solid(int height, int width, double r, double g, double b) {
    TextureMap t(height, width);
    const std::array<double, 3> rgb{r, g, b};
    for (int c = 0; c < 3; ++c) std::ranges::fill(t.texels.channel(c), rgb[c]);
    return t;
  }

  // i.i.d. uniform [0,1] texels drawn in storage order.
  template <typename Rng>
  static TextureMap uniform_random(int height, int width, Rng& rng) {
    TextureMap t(height, width);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : t.texels) v = u(rng);
    return t;
  }

  void clamp01() {
    for (auto& v : texels) v = std::clamp(v, 0.0, 1.0);
  }

  bool in_range() const {
    return std::ranges::all_of(texels, [](double v) { return v >= 0.0 && v <= 1.0; });
  }

  bool operator==(const TextureMap&) const = default;
};

inline TextureMap load_texture(const std::string& path) { return TextureMap(read_png_rgb(path)); }
inline void save_texture(const TextureMap& t, const std::string& path, const PngMetadata& meta = {}) {
  write_png_rgb(path, t.texels, meta);
}

// Four texel taps with bilinear weights; indices are y * W_t + x with
// repeat wrapping. Texel centers sit at half-integer positions.
struct BilinearTaps {
  std::array<int, 4> index{};
  std::array<double, 4> weight{};
};

inline BilinearTaps bilinear_taps(const Vec2& uv, int height, int width) {
  const double x = uv.x() * width - 0.5;
  const double y = (1.0 - uv.y()) * height - 0.5;
  const double fx0 = std::floor(x), fy0 = std::floor(y);
  const double fx = x - fx0, fy = y - fy0;
  auto wrap = [](long i, int n) { return static_cast<int>(((i % n) + n) % n); };
  const int x0 = wrap(static_cast<long>(fx0), width), x1 = wrap(static_cast<long>(fx0) + 1, width);
  const int y0 = wrap(static_cast<long>(fy0), height), y1 = wrap(static_cast<long>(fy0) + 1, height);
  BilinearTaps t;
  t.index = {y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1};
  t.weight = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  return t;
}

// Procedural "factory paint" texture: body color, dark glass on the cabin
// rectangles of the procedural_car atlas, a darker rocker stripe.
inline TextureMap benign_car_texture(int height, int width) {
  TextureMap t(height, width);
  const std::array<double, 3> paint{0.72, 0.12, 0.10}, glass{0.10, 0.13, 0.18}, trim{0.18, 0.18, 0.18};
  for (int y = 0; y < height; ++y) {
    const double v = 1.0 - (y + 0.5) / height;
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width;
      const auto* col = &paint;
      const bool cabin_side = v >= 0.15 && v < 0.3;
      const bool cabin_glass = v < 0.15 && u >= 0.5;
      const bool rocker = (v >= 0.8 && v < 0.84) || (v >= 0.6 && v < 0.64);
      if (cabin_side || cabin_glass) col = &glass;
      else if (rocker) col = &trim;
      for (int c = 0; c < 3; ++c) t.texels(c, y, x) = (*col)[c];
    }
  }
  return t;
}

}  // namespace uvcamo
