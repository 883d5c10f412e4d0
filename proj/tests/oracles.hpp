#pragma once

// Reference computations the library results are checked against. They
// are written independently of the library code paths on purpose: brute
// force where possible, closed forms otherwise.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <vector>

#include "uvcamo/ap.hpp"
#include "uvcamo/detect.hpp"
#include "uvcamo/tensor.hpp"

namespace oracle {

inline double central_diff(const std::function<double()>& f, double& x, double h) {
  const double keep = x;
  x = keep + h;
  const double up = f();
  x = keep - h;
  const double down = f();
  x = keep;
  return (up - down) / (2 * h);
}

// Max of |a - n| / max(|a|, |n|, floor) with floor = 1e-3 * max|a|.
inline double rel_err(const std::vector<double>& a, const std::vector<double>& n) {
  double scale = 0;
  for (double v : a) scale = std::max(scale, std::abs(v));
  const double floor = std::max(1e-3 * scale, 1e-12);
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - n[i]) / std::max({std::abs(a[i]), std::abs(n[i]), floor}));
  return worst;
}

inline double box_iou(double ax1, double ay1, double ax2, double ay2, double bx1, double by1, double bx2, double by2) {
  // Pixel-area style: intersect the extents, then inclusion-exclusion.
  const double w = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double h = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = w * h;
  const double uni = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// AP@0.5 by enumerating every confidence threshold: at each threshold the
// kept detections are matched greedily (highest confidence first, one
// match per gt) and precision/recall are read off directly. The all-point
// AP is then sum over recall steps of the best precision at that recall or
// beyond.
inline double brute_force_ap(const std::vector<uvcamo::ImageDetections>& images) {
  std::set<double, std::greater<>> thresholds;
  for (const auto& im : images)
    for (std::size_t d = 0; d < im.dets.size(); ++d) thresholds.insert(im.dets.confidence(d));
  struct PR {
    double p, r;
  };
  std::vector<PR> points;
  const double npos = static_cast<double>(images.size());
  for (double t : thresholds) {
    struct Item {
      double conf;
      std::size_t img, det;
    };
    std::vector<Item> kept;
    for (std::size_t i = 0; i < images.size(); ++i)
      for (std::size_t d = 0; d < images[i].dets.size(); ++d)
        if (images[i].dets.confidence(d) >= t) kept.push_back({images[i].dets.confidence(d), i, d});
    std::ranges::stable_sort(kept, [](const Item& a, const Item& b) { return a.conf > b.conf; });
    std::vector<bool> used(images.size(), false);
    double tp = 0;
    for (const auto& k : kept) {
      const auto& b = images[k.img].dets.boxes[k.det];
      const auto& g = images[k.img].gt;
      if (!used[k.img] && box_iou(b.x1, b.y1, b.x2, b.y2, g.x1, g.y1, g.x2, g.y2) >= 0.5) {
        used[k.img] = true;
        tp += 1;
      }
    }
    points.push_back({tp / static_cast<double>(kept.size()), tp / npos});
  }
  double ap = 0, prev_r = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].r == prev_r) continue;
    double best = 0;
    for (const auto& q : points)
      if (q.r >= points[i].r) best = std::max(best, q.p);
    ap += (points[i].r - prev_r) * best;
    prev_r = points[i].r;
  }
  return ap;
}

// Random single-vehicle AP instance: up to `max_images` images, each with
// a few detections that are jittered copies of the gt or unrelated boxes.
inline std::vector<uvcamo::ImageDetections> random_ap_instance(std::mt19937_64& rng, int max_images = 20) {
  std::uniform_int_distribution<int> n_img(1, max_images), n_det(0, 4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<uvcamo::ImageDetections> out(n_img(rng));
  for (auto& im : out) {
    const double x = u(rng) * 40, y = u(rng) * 40;
    im.gt = {x, y, x + 8 + u(rng) * 16, y + 8 + u(rng) * 16};
    for (int d = n_det(rng); d > 0; --d) {
      uvcamo::Box b = im.gt;
      if (u(rng) < 0.6) {
        const double j = u(rng) * 8;
        b = {b.x1 + (u(rng) - 0.5) * j, b.y1 + (u(rng) - 0.5) * j, b.x2 + (u(rng) - 0.5) * j, b.y2 + (u(rng) - 0.5) * j};
      } else {
        const double bx = u(rng) * 50, by = u(rng) * 50;
        b = {bx, by, bx + 4 + u(rng) * 12, by + 4 + u(rng) * 12};
      }
      im.dets.push_back(b, u(rng), {u(rng), u(rng)});
    }
  }
  return out;
}

}  // namespace oracle
