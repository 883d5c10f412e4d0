#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "uvcamo/camera.hpp"
#include "uvcamo/mesh.hpp"
#include "uvcamo/tensor.hpp"
#include "uvcamo/texture.hpp"

namespace uvcamo {

// Per-pixel visibility of a hard z-buffered rasterization. Texture does
// not enter here, so one Fragments buffer can shade many textures.
struct Fragments {
  ImageSize size;
  std::vector<int> face;   // front-most face per pixel, -1 for background
  std::vector<Vec2> uv;    // perspective-correct interpolated uv
  Image depth;             // 1 x H x W view-space depth, +inf on background
  Image normal;            // 3 x H x W unit normal facing the camera, 0 on background

  bool covered(int y, int x) const { return face[static_cast<std::size_t>(y) * size.width + x] >= 0; }
  std::size_t covered_count() const {
    return static_cast<std::size_t>(std::ranges::count_if(face, [](int f) { return f >= 0; }));
  }
};

struct RenderOutput {
  Image color;       // 3 x H x W, zero outside the silhouette
  Mask silhouette;   // 1 x H x W in {0,1}
  Image depth;       // 1 x H x W, +inf outside the silhouette
  Fragments fragments;
};

inline Fragments rasterize_fragments(const Mesh& mesh, const CameraPose& pose, ImageSize size,
                                     double fov_deg = kDefaultFovDeg) {
  if (size.height <= 0 || size.width <= 0) throw ShapeMismatch("zero-area image");
  const CameraMatrices cam = camera_matrices(pose, size, fov_deg, mesh.centroid());
  const int H = size.height, W = size.width;
  constexpr double inf = std::numeric_limits<double>::infinity();

  Fragments fr;
  fr.size = size;
  fr.face.assign(static_cast<std::size_t>(H) * W, -1);
  fr.uv.assign(static_cast<std::size_t>(H) * W, Vec2::Zero());
  fr.depth = Image(1, H, W, inf);
  fr.normal = Image(3, H, W, 0.0);

  std::vector<Vec3> scr(mesh.vertices.size());
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) scr[i] = cam.to_screen(mesh.vertices[i]);

  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& tri = mesh.faces[f];
    const Vec3 &p0 = scr[tri[0]], &p1 = scr[tri[1]], &p2 = scr[tri[2]];
    // No near-plane clipping: faces reaching behind the near plane are dropped.
    if (p0.z() < kNearPlane || p1.z() < kNearPlane || p2.z() < kNearPlane) continue;
    const double area = (p1.x() - p0.x()) * (p2.y() - p0.y()) - (p1.y() - p0.y()) * (p2.x() - p0.x());
    if (std::abs(area) < 1e-12) continue;

    const int x_lo = std::max(0, static_cast<int>(std::floor(std::min({p0.x(), p1.x(), p2.x()}) - 0.5)));
    const int x_hi = std::min(W - 1, static_cast<int>(std::ceil(std::max({p0.x(), p1.x(), p2.x()}) - 0.5)));
    const int y_lo = std::max(0, static_cast<int>(std::floor(std::min({p0.y(), p1.y(), p2.y()}) - 0.5)));
    const int y_hi = std::min(H - 1, static_cast<int>(std::ceil(std::max({p0.y(), p1.y(), p2.y()}) - 0.5)));
    if (x_lo > x_hi || y_lo > y_hi) continue;

    const double inv_w0 = 1.0 / p0.z(), inv_w1 = 1.0 / p1.z(), inv_w2 = 1.0 / p2.z();
    Vec3 n = mesh.face_normal(f);
    if (n.dot(cam.eye - mesh.vertices[tri[0]]) < 0) n = -n;

    for (int y = y_lo; y <= y_hi; ++y) {
      const double py = y + 0.5;
      for (int x = x_lo; x <= x_hi; ++x) {
        const double px = x + 0.5;
        const double e0 = ((p2.x() - p1.x()) * (py - p1.y()) - (p2.y() - p1.y()) * (px - p1.x())) / area;
        const double e1 = ((p0.x() - p2.x()) * (py - p2.y()) - (p0.y() - p2.y()) * (px - p2.x())) / area;
        const double e2 = 1.0 - e0 - e1;
        if (e0 < 0 || e1 < 0 || e2 < 0) continue;
        const double q0 = e0 * inv_w0, q1 = e1 * inv_w1, q2 = e2 * inv_w2;
        const double denom = q0 + q1 + q2;
        const double depth = 1.0 / denom;
        double& zb = fr.depth(0, y, x);
        if (!(depth < zb)) continue;
        zb = depth;
        const std::size_t idx = static_cast<std::size_t>(y) * W + x;
        fr.face[idx] = static_cast<int>(f);
        const auto& uv = mesh.uv[f];
        fr.uv[idx] = (q0 * uv[0] + q1 * uv[1] + q2 * uv[2]) / denom;
        for (int c = 0; c < 3; ++c) fr.normal(c, y, x) = n[c];
      }
    }
  }
  return fr;
}

// Bilinear texture lookup at every covered pixel.
inline Image shade(const Fragments& fr, const TextureMap& tex) {
  const int H = fr.size.height, W = fr.size.width;
  Image color(3, H, W, 0.0);
  const std::size_t tp = tex.texels.plane();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * W + x;
      if (fr.face[idx] < 0) continue;
      const auto taps = bilinear_taps(fr.uv[idx], tex.height(), tex.width());
      for (int c = 0; c < 3; ++c) {
        double v = 0.0;
        for (int k = 0; k < 4; ++k) v += taps.weight[k] * tex.texels[c * tp + taps.index[k]];
        color(c, y, x) = v;
      }
    }
  return color;
}

inline Mask silhouette_of(const Fragments& fr) {
  Mask m(1, fr.size.height, fr.size.width, 0);
  for (std::size_t i = 0; i < fr.face.size(); ++i) m[i] = fr.face[i] >= 0 ? 1 : 0;
  return m;
}

inline RenderOutput rasterize(const Mesh& mesh, const TextureMap& tex, const CameraPose& pose, ImageSize size,
                              double fov_deg = kDefaultFovDeg) {
  if (tex.height() <= 0 || tex.width() <= 0) throw ShapeMismatch("empty texture");
  RenderOutput out;
  out.fragments = rasterize_fragments(mesh, pose, size, fov_deg);
  out.color = shade(out.fragments, tex);
  out.silhouette = silhouette_of(out.fragments);
  out.depth = out.fragments.depth;
  return out;
}

// Gradient of sum(color * upstream) with respect to the texels. Texels that
// no visible pixel samples stay exactly zero.
inline Image texture_gradient(const Fragments& fr, int tex_height, int tex_width, const Image& upstream) {
  const int H = fr.size.height, W = fr.size.width;
  if (upstream.channels() != 3 || upstream.height() != H || upstream.width() != W)
    throw ShapeMismatch("upstream gradient " + upstream.shape_string() + " does not match render 3x" +
                        std::to_string(H) + "x" + std::to_string(W));
  Image grad(3, tex_height, tex_width, 0.0);
  const std::size_t tp = grad.plane();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * W + x;
      if (fr.face[idx] < 0) continue;
      const auto taps = bilinear_taps(fr.uv[idx], tex_height, tex_width);
      for (int c = 0; c < 3; ++c) {
        const double g = upstream(c, y, x);
        if (g == 0.0) continue;
        for (int k = 0; k < 4; ++k)
          if (taps.weight[k] != 0.0) grad[c * tp + taps.index[k]] += taps.weight[k] * g;
      }
    }
  return grad;
}

inline Image texture_gradient(const Mesh& mesh, const TextureMap& tex, const CameraPose& pose, ImageSize size,
                              const Image& upstream, double fov_deg = kDefaultFovDeg) {
  if (upstream.channels() != 3 || upstream.height() != size.height || upstream.width() != size.width)
    throw ShapeMismatch("upstream gradient " + upstream.shape_string() + " does not match image size");
  const Fragments fr = rasterize_fragments(mesh, pose, size, fov_deg);
  return texture_gradient(fr, tex.height(), tex.width(), upstream);
}

}  // namespace uvcamo
