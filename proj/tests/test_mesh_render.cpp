#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "uvcamo/raster.hpp"

using namespace uvcamo;

namespace {

Mesh parse(const std::string& text) {
  std::istringstream in(text);
  return parse_obj(in, "test.obj");
}

const char* kQuadObj =
    "v -1 -1 0\nv 1 -1 0\nv 1 1 0\nv -1 1 0\n"
    "vt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\n"
    "f 1/1 2/2 3/3\nf 1/1 3/3 4/4\n";

// Unit-ish quad in the plane x = 0 facing +x, centered at the origin.
Mesh facing_quad(double half) {
  Mesh m;
  m.vertices = {{0, -half, -half}, {0, half, -half}, {0, half, half}, {0, -half, half}};
  m.faces = {{0, 1, 2}, {0, 2, 3}};
  m.uv = {{Vec2(0, 0), Vec2(1, 0), Vec2(1, 1)}, {Vec2(0, 0), Vec2(1, 1), Vec2(0, 1)}};
  return m;
}

CameraPose at(double az, double el, double d) { return {az, el, d, Vec3::Zero().eval()}; }

}  // namespace

TEST(LoadMesh, UnitQuad) {
  const Mesh m = parse(kQuadObj);
  EXPECT_EQ(m.vertices.size(), 4u);
  EXPECT_EQ(m.faces.size(), 2u);
  EXPECT_NO_THROW(m.validate());
}

TEST(LoadMesh, ZeroIndexIsMalformedWithLine) {
  try {
    parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 0/1 1/1 2/1\n");
    FAIL() << "expected MalformedMesh";
  } catch (const MalformedMesh& e) {
    EXPECT_EQ(e.line(), 5);
  }
}

TEST(LoadMesh, MissingTextureIndexIsError) {
  EXPECT_THROW(parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1 2 3\n"), MalformedMesh);
  EXPECT_THROW(parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1 2/7 3/1\n"), MalformedMesh);
}

TEST(LoadMesh, UvWrapsByFractionalPart) {
  const Mesh m = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 1.25 -0.25\nvt 0 0\nf 1/1 2/2 3/2\n");
  EXPECT_DOUBLE_EQ(m.uv[0][0].x(), 0.25);
  EXPECT_DOUBLE_EQ(m.uv[0][0].y(), 0.75);
}

TEST(LoadMesh, NegativeIndicesAndPolygonFan) {
  const Mesh m = parse("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nf -4/1 -3/1 -2/1 -1/1\n");
  EXPECT_EQ(m.faces.size(), 2u);
  EXPECT_EQ(m.faces[1], (std::array<int, 3>{0, 2, 3}));
}

TEST(LoadMesh, RoundTripThroughObj) {
  const Mesh car = procedural_car();
  std::ostringstream out;
  write_obj(car, out);
  const Mesh back = parse(out.str());
  ASSERT_EQ(back.faces.size(), car.faces.size());
  for (std::size_t f = 0; f < car.faces.size(); ++f)
    for (int k = 0; k < 3; ++k) EXPECT_NEAR((back.uv[f][k] - car.uv[f][k]).norm(), 0.0, 1e-9);
}

TEST(CameraMatrices, SphericalPlacement) {
  const ImageSize sz{32, 32};
  EXPECT_TRUE(camera_matrices(at(0, 0, 5), sz).eye.isApprox(Vec3(5, 0, 0)));
  const auto top = camera_matrices(at(0, 90, 5), sz);
  EXPECT_NEAR((top.eye - Vec3(0, 0, 5)).norm(), 0.0, 1e-12);
  const auto a = camera_matrices(at(37, 20, 6), sz), b = camera_matrices(at(217, 20, 6), sz);
  EXPECT_NEAR(a.eye.x() + b.eye.x(), 0.0, 1e-12);
  EXPECT_NEAR(a.eye.y() + b.eye.y(), 0.0, 1e-12);
  EXPECT_NEAR(a.eye.z() - b.eye.z(), 0.0, 1e-12);
}

TEST(CameraMatrices, LookAtProjectsToImageCenter) {
  const ImageSize sz{40, 60};
  for (double el : {0.0, 30.0, 90.0}) {
    const auto cam = camera_matrices({123, el, 7, Vec3(1, 2, 0.5)}, sz);
    const Vec3 s = cam.to_screen(Vec3(1, 2, 0.5));
    EXPECT_NEAR(s.x(), 30.0, 1e-9);
    EXPECT_NEAR(s.y(), 20.0, 1e-9);
    EXPECT_NEAR(s.z(), 7.0, 1e-9);
  }
}

TEST(CameraMatrices, InvalidPoses) {
  EXPECT_THROW(camera_matrices(at(0, 0, 0), {8, 8}), InvariantViolation);
  EXPECT_THROW(camera_matrices(at(0, 91, 1), {8, 8}), InvariantViolation);
  EXPECT_THROW(camera_matrices(at(0, 0, 1), {8, 8}, 180.0), InvariantViolation);
  EXPECT_DOUBLE_EQ(normalize_azimuth(-90), 270.0);
  EXPECT_DOUBLE_EQ(normalize_azimuth(720), 0.0);
}

TEST(Rasterize, ScreenFillingTriangleConstantRed) {
  Mesh m;
  m.vertices = {{0, -50, -50}, {0, 50, -50}, {0, 0, 80}};
  m.faces = {{0, 1, 2}};
  m.uv = {{Vec2(0, 0), Vec2(1, 0), Vec2(0.5, 1)}};
  const auto r = rasterize(m, TextureMap::solid(4, 4, 1, 0, 0), at(0, 0, 5), {16, 16});
  for (std::size_t p = 0; p < r.silhouette.size(); ++p) {
    ASSERT_EQ(r.silhouette[p], 1);
    EXPECT_DOUBLE_EQ(r.color[p], 1.0);
    EXPECT_DOUBLE_EQ(r.color[256 + p], 0.0);
    EXPECT_DOUBLE_EQ(r.color[512 + p], 0.0);
  }
}

TEST(Rasterize, DeterministicAndConsistent) {
  std::mt19937_64 rng(3);
  const auto tex = TextureMap::uniform_random(16, 16, rng);
  const Mesh car = procedural_car();
  for (double az = 0; az < 360; az += 45) {
    const CameraPose pose{az, 20, 8, std::nullopt};
    const auto a = rasterize(car, tex, pose, {32, 32});
    const auto b = rasterize(car, tex, pose, {32, 32});
    EXPECT_EQ(a.color, b.color);
    EXPECT_EQ(a.silhouette, b.silhouette);
    for (std::size_t p = 0; p < a.silhouette.size(); ++p) {
      if (!a.silhouette[p]) {
        for (int c = 0; c < 3; ++c) EXPECT_EQ(a.color[c * a.silhouette.size() + p], 0.0);
        EXPECT_TRUE(std::isinf(a.depth[p]));
      } else {
        EXPECT_TRUE(std::isfinite(a.depth[p]));
      }
    }
  }
}

TEST(Rasterize, PerspectiveAreaFallsWithSquaredDistance) {
  // A fronto-parallel quad of side s at distance d covers s^2 (f H / 2d)^2
  // pixels, so doubling the distance divides the coverage by four.
  const Mesh q = facing_quad(0.5);
  const ImageSize sz{64, 64};
  const auto near = rasterize(q, TextureMap::solid(2, 2, 1, 1, 1), at(0, 0, 5), sz).fragments.covered_count();
  const auto far = rasterize(q, TextureMap::solid(2, 2, 1, 1, 1), at(0, 0, 10), sz).fragments.covered_count();
  const double f = 1.0 / std::tan(deg2rad(kDefaultFovDeg) / 2);
  const double expected_near = std::pow(f * 64 / (2 * 5), 2);
  EXPECT_NEAR(static_cast<double>(near), expected_near, 0.1 * expected_near);
  EXPECT_NEAR(static_cast<double>(near) / static_cast<double>(far), 4.0, 0.4);
}

TEST(Rasterize, OutOfFrustumGivesEmptySilhouette) {
  const Mesh q = facing_quad(0.5);
  const auto r = rasterize(q, TextureMap::solid(2, 2, 1, 1, 1), {0, 0, 5, Vec3(0, 40, 0)}, {16, 16});
  EXPECT_EQ(r.fragments.covered_count(), 0u);
  EXPECT_THROW(rasterize(q, TextureMap::solid(2, 2, 1, 1, 1), at(0, 0, 5), {0, 16}), ShapeMismatch);
}

TEST(Rasterize, NearestSurfaceWins) {
  Mesh m = facing_quad(1.0);
  Mesh back = facing_quad(2.0);
  for (auto& v : back.vertices) v.x() -= 1.0;
  const int off = static_cast<int>(m.vertices.size());
  for (const auto& v : back.vertices) m.vertices.push_back(v);
  for (auto f : back.faces) m.faces.push_back({f[0] + off, f[1] + off, f[2] + off});
  for (const auto& uv : back.uv) m.uv.push_back({Vec2(0.9, 0.9), Vec2(0.9, 0.9), Vec2(0.9, 0.9)});
  const auto fr = rasterize_fragments(m, at(0, 0, 5), {32, 32});
  EXPECT_LT(fr.face[16 * 32 + 16], 2);  // center pixel sees the front quad
}

TEST(TextureGradient, ZeroUpstreamGivesZero) {
  const auto g = texture_gradient(procedural_car(), TextureMap(8, 8, 0.5), {30, 20, 8, std::nullopt}, {16, 16},
                                  Image(3, 16, 16, 0.0));
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(TextureGradient, TexelCenterSampleHitsOneTexel) {
  // One visible pixel whose uv sits exactly on the center of texel
  // (row 1, col 1) of a 4x4 texture.
  Fragments fr;
  fr.size = {8, 8};
  fr.face.assign(64, -1);
  fr.uv.assign(64, Vec2::Zero());
  fr.face[3 * 8 + 4] = 0;
  fr.uv[3 * 8 + 4] = Vec2(0.375, 0.625);
  Image up(3, 8, 8, 0.0);
  up(1, 3, 4) = 2.5;
  const Image g = texture_gradient(fr, 4, 4, up);
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) EXPECT_EQ(g(ch, y, x), ch == 1 && y == 1 && x == 1 ? 2.5 : 0.0);
}

TEST(TextureGradient, ShapeMismatchThrows) {
  const Fragments fr = rasterize_fragments(procedural_car(), at(0, 0, 8), {8, 8});
  EXPECT_THROW(texture_gradient(fr, 4, 4, Image(3, 8, 9)), ShapeMismatch);
  EXPECT_THROW(texture_gradient(procedural_car(), TextureMap(4, 4), at(0, 0, 8), {8, 8}, Image(1, 8, 8)),
               ShapeMismatch);
}

TEST(TextureGradient, MatchesFiniteDifferencesRandom8x8On16x16) {
  std::mt19937_64 rng(11);
  const Mesh car = procedural_car();
  for (double az : {15.0, 100.0, 250.0}) {
    TextureMap tex = TextureMap::uniform_random(8, 8, rng);
    const CameraPose pose{az, 25, 7.5, std::nullopt};
    Image up(3, 16, 16);
    std::normal_distribution<double> n;
    for (auto& v : up) v = n(rng);
    const Image g = texture_gradient(car, tex, pose, {16, 16}, up);
    auto f = [&] {
      const auto r = rasterize(car, tex, pose, {16, 16});
      double s = 0;
      for (std::size_t i = 0; i < up.size(); ++i) s += r.color[i] * up[i];
      return s;
    };
    double worst = 0;
    for (std::size_t i = 0; i < tex.texels.size(); ++i)
      worst = std::max(worst, std::abs(g[i] - oracle::central_diff(f, tex.texels[i], 1e-3)));
    EXPECT_LT(worst, 1e-4) << "azimuth " << az;
  }
}

TEST(TextureGradient, UnsampledTexelsAreExactlyZero) {
  std::mt19937_64 rng(5);
  const Mesh car = procedural_car();
  const TextureMap tex(16, 16, 0.3);
  const CameraPose pose{60, 10, 9, std::nullopt};
  const Fragments fr = rasterize_fragments(car, pose, {24, 24});
  Image up(3, 24, 24);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (auto& v : up) v = u(rng);
  const Image g = texture_gradient(fr, 16, 16, up);
  std::vector<bool> support(256, false);
  for (std::size_t p = 0; p < fr.face.size(); ++p)
    if (fr.face[p] >= 0) {
      const auto t = bilinear_taps(fr.uv[p], 16, 16);
      for (int k = 0; k < 4; ++k)
        if (t.weight[k] != 0.0) support[t.index[k]] = true;
    }
  int unsupported = 0;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 256; ++i)
      if (!support[i]) {
        EXPECT_EQ(g[c * 256 + i], 0.0);
        ++unsupported;
      }
  EXPECT_GT(unsupported, 0);
}

TEST(TextureGradient, FiniteDifferencePropertyOverRandomScenes) {
  // Random small meshes (<= 50 faces), textures (<= 16x16), images (<= 32x32).
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1, 1), uu(0, 1);
  for (int trial = 0; trial < 5; ++trial) {
    Mesh m;
    const int faces = 1 + static_cast<int>(uu(rng) * 49);
    for (int f = 0; f < faces; ++f) {
      const Vec3 c(u(rng), u(rng), u(rng));
      for (int k = 0; k < 3; ++k) m.vertices.push_back(c + 0.5 * Vec3(u(rng), u(rng), u(rng)));
      m.faces.push_back({3 * f, 3 * f + 1, 3 * f + 2});
      m.uv.push_back({Vec2(uu(rng), uu(rng)), Vec2(uu(rng), uu(rng)), Vec2(uu(rng), uu(rng))});
    }
    const int th = 2 + static_cast<int>(uu(rng) * 14), tw = 2 + static_cast<int>(uu(rng) * 14);
    const int ih = 4 + static_cast<int>(uu(rng) * 28), iw = 4 + static_cast<int>(uu(rng) * 28);
    TextureMap tex = TextureMap::uniform_random(th, tw, rng);
    const CameraPose pose{uu(rng) * 360, uu(rng) * 90, 4, std::nullopt};
    Image up(3, ih, iw);
    for (auto& v : up) v = u(rng);
    const Image g = texture_gradient(m, tex, pose, {ih, iw}, up);
    auto f = [&] {
      const auto r = rasterize(m, tex, pose, {ih, iw});
      double s = 0;
      for (std::size_t i = 0; i < up.size(); ++i) s += r.color[i] * up[i];
      return s;
    };
    for (std::size_t i = 0; i < tex.texels.size(); ++i)
      ASSERT_NEAR(g[i], oracle::central_diff(f, tex.texels[i], 1e-3), 1e-4) << "trial " << trial;
  }
}

TEST(Texture, BilinearTapsWrapAndSumToOne) {
  for (double uvx : {0.0, 0.01, 0.5, 0.99})
    for (double uvy : {0.0, 0.3, 0.999}) {
      const auto t = bilinear_taps(Vec2(uvx, uvy), 5, 7);
      double s = 0;
      for (int k = 0; k < 4; ++k) {
        s += t.weight[k];
        EXPECT_GE(t.index[k], 0);
        EXPECT_LT(t.index[k], 35);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Texture, PngRoundTrip) {
  std::mt19937_64 rng(2);
  auto t = TextureMap::uniform_random(6, 9, rng);
  for (auto& v : t.texels) v = std::round(v * 255) / 255;
  const auto path = std::filesystem::temp_directory_path() / "uvcamo_tex_roundtrip.png";
  save_texture(t, path.string(), {{"seed", "2"}});
  const auto back = load_texture(path.string());
  EXPECT_EQ(back.texels, t.texels);
  EXPECT_EQ(read_png_metadata(path.string()).at("seed"), "2");
}
