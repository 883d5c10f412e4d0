#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "uvcamo/tensor.hpp"

namespace uvcamo {

// Axis-aligned box in pixel coordinates, half-open convention.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x1 < x2 && y1 < y2; }
  bool operator==(const Box&) const = default;
};

inline constexpr int kCarClass = 0;
inline constexpr int kBackgroundClass = 1;
inline constexpr int kNumClasses = 2;

struct DetectionSet {
  std::vector<Box> boxes;
  std::vector<double> objectness;                          // H_o
  std::vector<std::array<double, kNumClasses>> class_conf;  // H_c per class

  std::size_t size() const { return boxes.size(); }
  bool empty() const { return boxes.empty(); }
  double confidence(std::size_t i) const { return class_conf[i][kCarClass] * objectness[i]; }
  void push_back(const Box& b, double obj, std::array<double, kNumClasses> cls) {
    boxes.push_back(b);
    objectness.push_back(obj);
    class_conf.push_back(cls);
  }
};

// Gradient of a scalar with respect to every field of a DetectionSet.
struct DetectionGrad {
  std::vector<std::array<double, 4>> box;  // d/d(x1, y1, x2, y2)
  std::vector<double> objectness;
  std::vector<std::array<double, kNumClasses>> class_conf;

  explicit DetectionGrad(std::size_t n = 0) : box(n, {0, 0, 0, 0}), objectness(n, 0.0), class_conf(n, {0, 0}) {}
};

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// d iou(a, b) / d(a.x1, a.y1, a.x2, a.y2) with b held fixed.
inline std::array<double, 4> iou_gradient(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return {0, 0, 0, 0};
  const double inter = iw * ih;
  const double aw = a.x2 - a.x1, ah = a.y2 - a.y1;
  const double uni = aw * ah + b.area() - inter;
  if (uni <= 0) return {0, 0, 0, 0};
  const double d_inter = (uni + inter) / (uni * uni);
  const double d_area = -inter / (uni * uni);
  const double di_x1 = a.x1 > b.x1 ? -ih : 0.0;
  const double di_x2 = a.x2 < b.x2 ? ih : 0.0;
  const double di_y1 = a.y1 > b.y1 ? -iw : 0.0;
  const double di_y2 = a.y2 < b.y2 ? iw : 0.0;
  return {d_inter * di_x1 + d_area * -ah, d_inter * di_y1 + d_area * -aw, d_inter * di_x2 + d_area * ah,
          d_inter * di_y2 + d_area * aw};
}

// H_d per box: IoU with the ground truth times car confidence times
// objectness. Boxes that miss the ground truth score exactly zero.
inline std::vector<double> detection_score(const DetectionSet& dets, const Box& gt) {
  std::vector<double> s(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i)
    s[i] = iou(dets.boxes[i], gt) * dets.class_conf[i][kCarClass] * dets.objectness[i];
  return s;
}

inline constexpr double kAttackEpsilon = 1e-6;

namespace detail {

inline double log_loss(double hd) { return -std::log(1.0 - std::min(hd, 1.0 - kAttackEpsilon)); }

// Adds d(-log(1 - H_d[i]))/d(fields of box i) into grad.
inline void add_single_box_gradient(const DetectionSet& dets, const Box& gt, std::size_t i, double scale,
                                    DetectionGrad& grad) {
  const double io = iou(dets.boxes[i], gt);
  const double hc = dets.class_conf[i][kCarClass], ho = dets.objectness[i];
  const double hd = io * hc * ho;
  if (hd >= 1.0 - kAttackEpsilon) return;  // clamped: flat
  const double dl = scale / (1.0 - hd);
  const auto gi = iou_gradient(dets.boxes[i], gt);
  for (int k = 0; k < 4; ++k) grad.box[i][k] += dl * gi[k] * hc * ho;
  grad.class_conf[i][kCarClass] += dl * io * ho;
  grad.objectness[i] += dl * io * hc;
}

}  // namespace detail

// -log(1 - max H_d); zero when nothing is detected.
inline double attack_loss(const DetectionSet& dets, const Box& gt) {
  const auto s = detection_score(dets, gt);
  if (s.empty()) return 0.0;
  return detail::log_loss(*std::ranges::max_element(s));
}

struct LossWithGrad {
  double value = 0.0;
  DetectionGrad grad;
  double max_score = 0.0;
};

// Subgradient through the first maximizing box.
inline LossWithGrad attack_loss_with_grad(const DetectionSet& dets, const Box& gt, double scale = 1.0) {
  LossWithGrad out{0.0, DetectionGrad(dets.size()), 0.0};
  const auto s = detection_score(dets, gt);
  if (s.empty()) return out;
  const auto it = std::ranges::max_element(s);
  const auto idx = static_cast<std::size_t>(it - s.begin());
  out.max_score = *it;
  out.value = detail::log_loss(*it);
  if (*it > 0.0) detail::add_single_box_gradient(dets, gt, idx, scale, out.grad);
  return out;
}

// Cell of a row-major grid x grid layout that contains the gt center.
inline std::size_t center_cell(const Box& gt, int grid, int image_height, int image_width) {
  const int col = std::clamp(static_cast<int>(std::floor(gt.cx() / image_width * grid)), 0, grid - 1);
  const int row = std::clamp(static_cast<int>(std::floor(gt.cy() / image_height * grid)), 0, grid - 1);
  return static_cast<std::size_t>(row) * grid + col;
}

// Ablation variant: only the box predicted by the cell holding the gt
// center contributes. Requires dets in grid order.
inline LossWithGrad center_cell_attack_loss_with_grad(const DetectionSet& dets, const Box& gt, int grid,
                                                      int image_height, int image_width, double scale = 1.0) {
  LossWithGrad out{0.0, DetectionGrad(dets.size()), 0.0};
  if (dets.size() != static_cast<std::size_t>(grid) * grid)
    throw ShapeMismatch("center-cell loss needs one detection per grid cell");
  const std::size_t idx = center_cell(gt, grid, image_height, image_width);
  const double hd = iou(dets.boxes[idx], gt) * dets.class_conf[idx][kCarClass] * dets.objectness[idx];
  const auto scores = detection_score(dets, gt);
  out.max_score = *std::ranges::max_element(scores);
  out.value = detail::log_loss(hd);
  if (hd > 0.0) detail::add_single_box_gradient(dets, gt, idx, scale, out.grad);
  return out;
}

// Sum of squared differences between vertically and horizontally adjacent
// pixels, over all channels.
inline double smooth_loss(const Image& x) {
  double s = 0.0;
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < x.height(); ++y)
      for (int xx = 0; xx < x.width(); ++xx) {
        const double v = x(c, y, xx);
        if (y + 1 < x.height()) s += (v - x(c, y + 1, xx)) * (v - x(c, y + 1, xx));
        if (xx + 1 < x.width()) s += (v - x(c, y, xx + 1)) * (v - x(c, y, xx + 1));
      }
  return s;
}

inline Image smooth_loss_gradient(const Image& x, double scale = 1.0) {
  Image g(x.channels(), x.height(), x.width(), 0.0);
  for (int c = 0; c < x.channels(); ++c)
    for (int y = 0; y < x.height(); ++y)
      for (int xx = 0; xx < x.width(); ++xx) {
        const double v = x(c, y, xx);
        if (y + 1 < x.height()) {
          const double d = 2.0 * scale * (v - x(c, y + 1, xx));
          g(c, y, xx) += d;
          g(c, y + 1, xx) -= d;
        }
        if (xx + 1 < x.width()) {
          const double d = 2.0 * scale * (v - x(c, y, xx + 1));
          g(c, y, xx) += d;
          g(c, y, xx + 1) -= d;
        }
      }
  return g;
}

inline constexpr double kDefaultAlpha = 1.0;
inline constexpr double kDefaultBeta = 0.0001;

inline double total_loss(double l_atk, double l_sm, double alpha = kDefaultAlpha, double beta = kDefaultBeta) {
  return alpha * l_atk + beta * l_sm;
}

// Greedy non-maximum suppression on car confidence, dropping detections
// below the confidence floor. Output is sorted by confidence, descending.
inline DetectionSet nms(const DetectionSet& dets, double iou_threshold = 0.5, double confidence_floor = 0.05) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < dets.size(); ++i)
    if (dets.confidence(i) >= confidence_floor) idx.push_back(i);
  std::ranges::stable_sort(idx, [&](std::size_t a, std::size_t b) { return dets.confidence(a) > dets.confidence(b); });
  DetectionSet kept;
  for (std::size_t i : idx) {
    bool suppressed = false;
    for (const auto& k : kept.boxes)
      if (iou(k, dets.boxes[i]) > iou_threshold) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(dets.boxes[i], dets.objectness[i], dets.class_conf[i]);
  }
  return kept;
}

}  // namespace uvcamo
