#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "uvcamo/detect.hpp"
#include "uvcamo/error.hpp"

namespace uvcamo {

inline constexpr double kMatchIou = 0.5;

// Detections of one single-vehicle image (after NMS) and its ground truth.
struct ImageDetections {
  DetectionSet dets;
  Box gt;
};

// Average precision at IoU 0.5 with all-point interpolation: detections of
// all images ranked by confidence, each gt matched at most once, duplicates
// count as false positives.
inline double ap_at_05(std::span<const ImageDetections> images) {
  if (images.empty()) throw InvariantViolation("AP needs at least one ground truth");
  struct Ranked {
    double conf;
    std::size_t image;
    std::size_t det;
  };
  std::vector<Ranked> all;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t d = 0; d < images[i].dets.size(); ++d) all.push_back({images[i].dets.confidence(d), i, d});
  std::ranges::stable_sort(all, [](const Ranked& a, const Ranked& b) { return a.conf > b.conf; });

  const double npos = static_cast<double>(images.size());
  std::vector<bool> matched(images.size(), false);
  std::vector<double> recall, precision;
  double tp = 0, fp = 0;
  for (const auto& r : all) {
    const auto& im = images[r.image];
    if (!matched[r.image] && iou(im.dets.boxes[r.det], im.gt) >= kMatchIou) {
      matched[r.image] = true;
      tp += 1;
    } else {
      fp += 1;
    }
    recall.push_back(tp / npos);
    precision.push_back(tp / (tp + fp));
  }

  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i)
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  return ap;
}

}  // namespace uvcamo
