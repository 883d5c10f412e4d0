#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "uvcamo/ap.hpp"
#include "uvcamo/detect.hpp"
#include "uvcamo/nn.hpp"

namespace uvcamo {

struct DetectorArchitecture {
  int height = 64;
  int width = 64;
  int grid = 8;
  int base_channels = 16;

  bool operator==(const DetectorArchitecture&) const = default;
};

inline constexpr int kCellOutputs = 4 + 1 + kNumClasses;

struct DetectorTape {
  std::vector<Image> activations;  // post-activation output of every hidden conv
  std::vector<nn::ConvCache> caches;
};

// Single-scale grid detector. Every cell predicts one box (center offset in
// the cell and size relative to the image, both through a sigmoid), an
// objectness and per-class sigmoid scores.
class ToyDetector {
 public:
  ToyDetector() : ToyDetector(DetectorArchitecture{}, 0) {}
  ToyDetector(const DetectorArchitecture& arch, std::uint64_t seed) : arch_(arch) {
    if (arch.grid <= 0 || arch.height % arch.grid || arch.width % arch.grid ||
        arch.height / arch.grid != arch.width / arch.grid ||
        !std::has_single_bit(static_cast<unsigned>(arch.height / arch.grid)))
      throw ConfigError("detector input must be a power-of-two multiple of the grid, equal on both axes");
    nn::ParamLayout layout;
    const int downs = std::countr_zero(static_cast<unsigned>(arch.height / arch.grid));
    int ch = arch.base_channels;
    convs_.push_back(layout.conv(3, ch, 3, 1));
    for (int d = 0; d < downs; ++d) {
      const int next = d == 0 ? ch * 2 : (d == downs - 1 ? ch * 2 : ch);
      convs_.push_back(layout.conv(ch, next, 3, 2));
      ch = next;
    }
    convs_.push_back(layout.conv(ch, ch, 3, 1));
    convs_.push_back(layout.conv(ch, ch, 3, 1));
    convs_.push_back(layout.conv(ch, kCellOutputs, 1, 1));
    params_.assign(layout.count(), 0.0);
    std::mt19937_64 rng(seed);
    nn::he_init(layout.convs(), params_, rng);
    const auto& head = convs_.back();
    params_[head.bias_offset + 4] = -4.0;  // objectness prior ~ 1/64
  }

  const DetectorArchitecture& architecture() const noexcept { return arch_; }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }
  std::size_t param_count() const noexcept { return params_.size(); }
  int grid() const noexcept { return arch_.grid; }

  void set_params(std::vector<double> p) {
    if (p.size() != params_.size()) throw ShapeMismatch("detector parameter count does not match architecture");
    params_.assign(p.begin(), p.end());
  }

  // Raw head activations, kCellOutputs x grid x grid.
  Image forward_raw(const Image& image, DetectorTape* tape = nullptr) const {
    if (image.channels() != 3 || image.height() != arch_.height || image.width() != arch_.width)
      throw ShapeMismatch("detector configured for 3x" + std::to_string(arch_.height) + "x" +
                          std::to_string(arch_.width) + ", got " + image.shape_string());
    DetectorTape local;
    DetectorTape& t = tape ? *tape : local;
    t.activations.clear();
    t.caches.assign(convs_.size(), {});
    Image x = image;
    for (std::size_t l = 0; l < convs_.size(); ++l) {
      x = nn::conv_forward(convs_[l], params_, x, t.caches[l]);
      if (l + 1 < convs_.size()) {
        nn::leaky_relu_inplace(x);
        if (tape) t.activations.push_back(x);
      }
    }
    return x;
  }

  Box decode_box(const Image& raw, int row, int col) const {
    const double cs_x = static_cast<double>(arch_.width) / arch_.grid;
    const double cs_y = static_cast<double>(arch_.height) / arch_.grid;
    const double cx = (col + nn::sigmoid(raw(0, row, col))) * cs_x;
    const double cy = (row + nn::sigmoid(raw(1, row, col))) * cs_y;
    const double w = arch_.width * nn::sigmoid(raw(2, row, col));
    const double h = arch_.height * nn::sigmoid(raw(3, row, col));
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }

  // All grid cells in row-major order, no suppression.
  DetectionSet decode(const Image& raw) const {
    DetectionSet d;
    for (int r = 0; r < arch_.grid; ++r)
      for (int c = 0; c < arch_.grid; ++c)
        d.push_back(decode_box(raw, r, c), nn::sigmoid(raw(4, r, c)),
                    {nn::sigmoid(raw(5, r, c)), nn::sigmoid(raw(6, r, c))});
    return d;
  }

  DetectionSet forward(const Image& image, DetectorTape* tape = nullptr) const { return decode(forward_raw(image, tape)); }

  // Chain rule from DetectionSet gradients to raw head gradients.
  Image raw_gradient(const Image& raw, const DetectionGrad& g) const {
    const double cs_x = static_cast<double>(arch_.width) / arch_.grid;
    const double cs_y = static_cast<double>(arch_.height) / arch_.grid;
    Image d(kCellOutputs, arch_.grid, arch_.grid, 0.0);
    for (int r = 0; r < arch_.grid; ++r)
      for (int c = 0; c < arch_.grid; ++c) {
        const std::size_t k = static_cast<std::size_t>(r) * arch_.grid + c;
        const auto& b = g.box[k];
        auto ds = [&](int ch) {
          const double s = nn::sigmoid(raw(ch, r, c));
          return s * (1.0 - s);
        };
        d(0, r, c) = (b[0] + b[2]) * cs_x * ds(0);
        d(1, r, c) = (b[1] + b[3]) * cs_y * ds(1);
        d(2, r, c) = 0.5 * (b[2] - b[0]) * arch_.width * ds(2);
        d(3, r, c) = 0.5 * (b[3] - b[1]) * arch_.height * ds(3);
        d(4, r, c) = g.objectness[k] * ds(4);
        d(5, r, c) = g.class_conf[k][0] * ds(5);
        d(6, r, c) = g.class_conf[k][1] * ds(6);
      }
    return d;
  }

  // Backpropagates raw head gradients; accumulates parameter gradients into
  // grads when it is non-empty and returns d/d(image) when need_dx is set.
  Image backward(const DetectorTape& t, const Image& d_raw, std::span<double> grads, bool need_dx) const {
    Image g = d_raw;
    for (std::size_t l = convs_.size(); l-- > 0;) {
      if (l + 1 < convs_.size()) nn::leaky_relu_backward_inplace(t.activations[l], g);
      const bool want = need_dx || l > 0;
      g = nn::conv_backward(convs_[l], params_, t.caches[l], g, grads, want);
    }
    return need_dx ? g : Image{};
  }

 private:
  DetectorArchitecture arch_;
  std::vector<nn::Conv2d> convs_;
  AlignedVector<double> params_;
};

inline DetectionSet toy_detector_forward(const ToyDetector& det, const Image& image) { return det.forward(image); }

struct DetectorExample {
  Image image;
  Box gt;
};

struct DetectorTrainConfig {
  int epochs = 60;
  double learning_rate = 1e-3;
  int batch_size = 8;
  std::uint64_t seed = 0;
  double lambda_coord = 5.0;
  double lambda_noobj = 1.0;
  double ignore_iou = 0.5;
  bool flip_augment = true;
  double min_ap = 0.90;
  DetectorArchitecture arch;
};

struct DetectorTrainResult {
  ToyDetector net;
  std::vector<double> epoch_loss;
  double heldout_ap = 0.0;
};

inline Image flip_horizontal(const Image& img) {
  Image out(img.channels(), img.height(), img.width());
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) out(c, y, x) = img(c, y, img.width() - 1 - x);
  return out;
}

// YOLO-style objective on the raw head: the cell holding the gt center
// regresses the box and predicts (object, car); every other cell predicts
// no object unless its box already overlaps the gt above ignore_iou.
inline double detector_training_gradient(const ToyDetector& det, const Image& raw, const Box& gt,
                                         const DetectorTrainConfig& cfg, Image& d_raw) {
  const auto& a = det.architecture();
  const int S = a.grid;
  const std::size_t resp = center_cell(gt, S, a.height, a.width);
  const int rr = static_cast<int>(resp) / S, rc = static_cast<int>(resp) % S;
  const double cs_x = static_cast<double>(a.width) / S, cs_y = static_cast<double>(a.height) / S;
  d_raw = Image(kCellOutputs, S, S, 0.0);
  double loss = 0.0;
  auto bce = [](double p, double t) {
    p = std::clamp(p, 1e-12, 1.0 - 1e-12);
    return -(t * std::log(p) + (1 - t) * std::log(1 - p));
  };
  for (int r = 0; r < S; ++r)
    for (int c = 0; c < S; ++c) {
      const double so = nn::sigmoid(raw(4, r, c));
      if (r == rr && c == rc) {
        loss += bce(so, 1.0);
        d_raw(4, r, c) = so - 1.0;
        const double s_car = nn::sigmoid(raw(5, r, c)), s_bg = nn::sigmoid(raw(6, r, c));
        loss += bce(s_car, 1.0) + bce(s_bg, 0.0);
        d_raw(5, r, c) = s_car - 1.0;
        d_raw(6, r, c) = s_bg;
        const double offset[2] = {gt.cx() / cs_x - c, gt.cy() / cs_y - r};
        for (int k = 0; k < 2; ++k) {
          const double s = nn::sigmoid(raw(k, r, c));
          const double e = s - std::clamp(offset[k], 0.0, 1.0);
          loss += cfg.lambda_coord * e * e;
          d_raw(k, r, c) = 2.0 * cfg.lambda_coord * e * s * (1.0 - s);
        }
        // Sizes are matched in logit space: for small boxes that is close to
        // log-size, so a one-pixel miss on a distant car costs as much as a
        // proportional miss on a near one.
        const double size[2] = {gt.width() / a.width, gt.height() / a.height};
        for (int k = 0; k < 2; ++k) {
          const double t = std::clamp(size[k], 1e-3, 1.0 - 1e-3);
          const double e = raw(2 + k, r, c) - std::log(t / (1.0 - t));
          loss += cfg.lambda_coord * e * e;
          d_raw(2 + k, r, c) = 2.0 * cfg.lambda_coord * e;
        }
      } else if (iou(det.decode_box(raw, r, c), gt) <= cfg.ignore_iou) {
        loss += cfg.lambda_noobj * bce(so, 0.0);
        d_raw(4, r, c) = cfg.lambda_noobj * so;
      }
    }
  return loss;
}

inline double detector_ap(const ToyDetector& det, std::span<const DetectorExample> examples, double nms_iou = 0.5,
                          double floor = 0.05) {
  std::vector<ImageDetections> all;
  all.reserve(examples.size());
  for (const auto& ex : examples) all.push_back({nms(det.forward(ex.image), nms_iou, floor), ex.gt});
  return ap_at_05(all);
}

// `example(i, epoch)` yields training example i as seen in that epoch, so
// callers can vary appearance between epochs without storing every variant.
template <typename ExampleFn, typename Progress = void (*)(int, double)>
  requires std::invocable<ExampleFn&, std::size_t, int>
DetectorTrainResult train_toy_detector(std::size_t count, ExampleFn&& example,
                                       std::span<const DetectorExample> heldout, const DetectorTrainConfig& cfg,
                                       Progress&& progress = [](int, double) {}) {
  if (count == 0) throw TrainingFailure("detector training set is empty");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0))
    throw ConfigError("detector training needs epochs >= 1, batch_size >= 1, learning_rate > 0");
  ToyDetector det(cfg.arch, cfg.seed);
  nn::Adam adam(det.param_count(), cfg.learning_rate);
  AlignedVector<double> grads(det.param_count());
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed ^ 0xda942042e4dd58b5ULL);
  std::bernoulli_distribution coin(0.5);
  DetectorTrainResult result{det, {}, 0.0};

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::ranges::fill(grads, 0.0);
      for (std::size_t i = start; i < stop; ++i) {
        const DetectorExample ex = example(order[i], epoch);
        const bool flip = cfg.flip_augment && coin(rng);
        const Image img = flip ? flip_horizontal(ex.image) : ex.image;
        const Box gt = flip ? Box{ex.image.width() - ex.gt.x2, ex.gt.y1, ex.image.width() - ex.gt.x1, ex.gt.y2} : ex.gt;
        DetectorTape tape;
        const Image raw = det.forward_raw(img, &tape);
        Image d_raw;
        epoch_loss += detector_training_gradient(det, raw, gt, cfg, d_raw);
        const double scale = 1.0 / static_cast<double>(stop - start);
        for (auto& v : d_raw) v *= scale;
        det.backward(tape, d_raw, grads, false);
      }
      adam.step(det.params(), grads);
    }
    epoch_loss /= static_cast<double>(count);
    if (!std::isfinite(epoch_loss)) throw TrainingFailure("detector training diverged (non-finite loss)");
    result.epoch_loss.push_back(epoch_loss);
    progress(epoch, epoch_loss);
  }
  result.net = det;
  if (heldout.empty()) {
    std::vector<DetectorExample> last;
    for (std::size_t i = 0; i < count; ++i) last.push_back(example(i, cfg.epochs));
    result.heldout_ap = detector_ap(det, last);
  } else {
    result.heldout_ap = detector_ap(det, heldout);
  }
  if (result.heldout_ap < cfg.min_ap)
    throw TrainingFailure("detector reached AP@0.5 " + std::to_string(result.heldout_ap) + " < required " +
                          std::to_string(cfg.min_ap) + " after " + std::to_string(cfg.epochs) + " epochs");
  return result;
}

template <typename Progress = void (*)(int, double)>
DetectorTrainResult train_toy_detector(std::span<const DetectorExample> train, std::span<const DetectorExample> heldout,
                                       const DetectorTrainConfig& cfg, Progress&& progress = [](int, double) {}) {
  return train_toy_detector(
      train.size(), [&](std::size_t i, int) { return train[i]; }, heldout, cfg, std::forward<Progress>(progress));
}

}  // namespace uvcamo
