#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "uvcamo/detect.hpp"
#include "uvcamo/efe.hpp"
#include "uvcamo/optimize.hpp"
#include "uvcamo/raster.hpp"
#include "uvcamo/toy_detector.hpp"

namespace uvcamo {

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
};

namespace detail {

inline double central_difference(const std::function<double()>& f, double& x, double h) {
  const double x0 = x;
  x = x0 + h;
  const double fp = f();
  x = x0 - h;
  const double fm = f();
  x = x0;
  return (fp - fm) / (2.0 * h);
}

// Relative error with a floor at 1e-3 of the largest gradient entry, so
// entries that are numerically zero do not divide by noise.
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double scale = 0.0;
  for (double v : analytic) scale = std::max(scale, std::abs(v));
  const double floor = std::max(1e-3 * scale, 1e-12);
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) /
                                std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor}));
  return worst;
}

}  // namespace detail

inline CheckResult check_raster_gradient(std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  const Mesh mesh = procedural_car();
  TextureMap tex = TextureMap::uniform_random(8, 8, rng);
  const CameraPose pose{30, 20, 7, std::nullopt};
  const ImageSize size{16, 16};
  Image up(3, 16, 16);
  std::normal_distribution<double> n(0, 1);
  for (auto& v : up) v = n(rng);
  const Image g = texture_gradient(mesh, tex, pose, size, up);
  auto f = [&] {
    const auto r = rasterize(mesh, tex, pose, size);
    double s = 0;
    for (std::size_t i = 0; i < up.size(); ++i) s += r.color[i] * up[i];
    return s;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < tex.texels.size(); ++i)
    worst = std::max(worst, std::abs(g[i] - detail::central_difference(f, tex.texels[i], 1e-3)));
  return {"rasterizer texture gradient (max abs err)", worst < 1e-4, worst, 1e-4};
}

inline CheckResult check_efe_gradient(std::uint64_t seed = 2) {
  std::mt19937_64 rng(seed);
  EfeNet net(EfeArchitecture{8, 8, 2, 3, 4}, seed);
  // Zero biases put every background activation exactly on the LeakyReLU
  // kink; jitter them so finite differences see a smooth function.
  std::normal_distribution<double> jitter(0.0, 0.05);
  for (auto& v : net.params()) v += jitter(rng);
  EfeExample ex;
  ex.x_ref = Image(3, 8, 8, 0.0);
  ex.vehicle = Mask(1, 8, 8, 0);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (int y = 2; y < 7; ++y)
    for (int x = 1; x < 6; ++x) {
      ex.vehicle(0, y, x) = 1;
      for (int c = 0; c < 3; ++c) ex.x_ref(c, y, x) = u(rng);
    }
  for (int k = 0; k < 2; ++k) {
    Image nr(3, 8, 8, 0.0), tg(3, 8, 8, 0.0);
    for (std::size_t p = 0; p < 64; ++p)
      if (ex.vehicle[p])
        for (int c = 0; c < 3; ++c) {
          nr[c * 64 + p] = u(rng) * 0.5;
          tg[c * 64 + p] = u(rng);
        }
    ex.x_nr.push_back(nr);
    ex.target.push_back(tg);
  }
  AlignedVector<double> grads(net.param_count(), 0.0);
  efe_example_gradient(net, ex, true, grads);
  std::vector<double> numeric(grads.size());
  auto f = [&] { return example_loss(ex, net.forward(ex.x_ref), true); };
  for (std::size_t i = 0; i < grads.size(); ++i) numeric[i] = detail::central_difference(f, net.params()[i], 1e-6);
  const double err = detail::max_relative_error(grads, numeric);
  return {"EFE parameter gradient (max rel err)", err < 1e-3, err, 1e-3};
}

inline CheckResult check_detector_gradient(std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  ToyDetector det(DetectorArchitecture{32, 32, 8, 4}, seed);
  auto p = det.params();
  for (std::size_t i = det.param_count() - 7; i < det.param_count(); ++i) p[i] = 0.5;  // lift scores off the floor
  Image img(3, 32, 32);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : img) v = u(rng);
  const Box gt{6, 9, 22, 25};
  DetectorTape tape;
  const Image raw = det.forward_raw(img, &tape);
  const auto lg = attack_loss_with_grad(det.decode(raw), gt);
  const Image dx = det.backward(tape, det.raw_gradient(raw, lg.grad), {}, true);
  std::vector<double> a(dx.begin(), dx.end()), numeric(dx.size());
  auto f = [&] { return attack_loss(det.forward(img), gt); };
  for (std::size_t i = 0; i < img.size(); ++i) numeric[i] = detail::central_difference(f, img[i], 1e-6);
  const double err = detail::max_relative_error(a, numeric);
  return {"detector input gradient (max rel err)", err < 1e-3, err, 1e-3};
}

// Micro pipeline: 8x8 texture, 32x32 image, one sample, random frozen nets.
inline CheckResult check_end_to_end_gradient(std::uint64_t seed = 4) {
  std::mt19937_64 rng(seed);
  const Mesh mesh = procedural_car();
  const ImageSize size{32, 32};
  const CameraPose pose{40, 25, 7, std::nullopt};
  EfeNet efe(EfeArchitecture{32, 32, 4, 4, 4}, seed);
  ToyDetector det(DetectorArchitecture{32, 32, 8, 4}, seed + 1);
  auto dp = det.params();
  for (std::size_t i = det.param_count() - 7; i < det.param_count(); ++i) dp[i] = 0.5;
  CamoSample s;
  s.id = "micro";
  s.fragments = rasterize_fragments(mesh, pose, size);
  s.silhouette = silhouette_of(s.fragments);
  s.m = Mask(1, 32, 32);
  for (std::size_t i = 0; i < s.m.size(); ++i) s.m[i] = s.silhouette[i] ? 0 : 1;
  s.b = Image(3, 32, 32, 0.0);
  std::uniform_real_distribution<double> u(0, 1);
  Image x_ref(3, 32, 32, 0.0);
  for (std::size_t p = 0; p < s.m.size(); ++p)
    for (int c = 0; c < 3; ++c) (s.m[p] ? s.b : x_ref)[c * 1024 + p] = u(rng);
  s.ef = efe.forward(x_ref);
  s.gt = gt_box_from_mask(s.m);
  TextureMap tex = TextureMap::uniform_random(8, 8, rng);
  OptimizeConfig cfg;
  cfg.beta = 0.01;
  const auto sl = camo_sample_loss(tex, s, det, cfg);
  const Image x_nr = shade(s.fragments, tex);
  // Texels feeding a clamp-saturated pixel see a kinked loss; skip them.
  std::vector<bool> saturated(tex.texels.size(), false);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * 32 + x;
      if (s.fragments.face[p] < 0) continue;
      bool sat = false;
      for (int c = 0; c < 3; ++c) {
        const double v = x_nr[c * 1024 + p] * s.ef.mul[c * 1024 + p] + s.ef.add[c * 1024 + p];
        sat = sat || v <= 1e-4 || v >= 1.0 - 1e-4;
      }
      if (!sat) continue;
      const auto taps = bilinear_taps(s.fragments.uv[p], 8, 8);
      for (int c = 0; c < 3; ++c)
        for (int k = 0; k < 4; ++k) saturated[c * 64 + taps.index[k]] = true;
    }
  std::vector<double> a, numeric;
  auto f = [&] { return camo_sample_loss(tex, s, det, cfg, false).l_total; };
  for (std::size_t i = 0; i < tex.texels.size(); ++i) {
    if (saturated[i]) continue;
    a.push_back(sl.grad[i]);
    numeric.push_back(detail::central_difference(f, tex.texels[i], 1e-6));
  }
  const double err = a.empty() ? 1.0 : detail::max_relative_error(a, numeric);
  return {"end-to-end texture gradient (max rel err)", err < 1e-2, err, 1e-2};
}

inline std::vector<CheckResult> loss_oracle_checks() {
  auto near = [](const char* name, double got, double want) {
    return CheckResult{name, std::abs(got - want) <= 1e-6, std::abs(got - want), 1e-6};
  };
  DetectionSet one;
  one.push_back({0, 0, 4, 2}, 0.9, {0.8, 0.2});
  const Box gt{0, 0, 2, 2};  // IoU 0.5 with (0,0,4,2)
  DetectionSet half;
  half.push_back({0, 0, 2, 2}, 1.0, {0.5, 0.5});
  Image row(1, 1, 2, 0.0);
  row(0, 0, 1) = 1.0;
  Image sq(1, 2, 2, 0.0);
  sq(0, 0, 1) = sq(0, 1, 1) = 1.0;
  Image x1(3, 1, 1, 0.5), t1(3, 1, 1, 1.0);
  return {near("iou (0,0,2,2) vs (1,1,3,3)", iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0),
          near("detection score 0.5*0.8*0.9", detection_score(one, gt)[0], 0.36),
          near("attack loss at H_d 0.36", attack_loss(one, gt), -std::log(0.64)),
          near("attack loss at H_d 0.5", attack_loss(half, gt), 0.693147),
          near("smooth loss 1x2", smooth_loss(row), 1.0),
          near("smooth loss 2x2", smooth_loss(sq), 2.0),
          near("area weight 10x10 s=25", area_weight(25, 10, 10), 4.0),
          near("efe loss single pixel", efe_loss(x1, t1, 1, 1, 1), std::log(2.0)),
          near("total loss 0.5 + 1e-4*100", total_loss(0.5, 100), 0.51)};
}

inline std::vector<CheckResult> run_selftest() {
  std::vector<CheckResult> out{check_raster_gradient(), check_efe_gradient(), check_detector_gradient(),
                               check_end_to_end_gradient()};
  for (auto& c : loss_oracle_checks()) out.push_back(std::move(c));
  return out;
}

}  // namespace uvcamo
