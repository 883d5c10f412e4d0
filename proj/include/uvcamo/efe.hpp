#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "uvcamo/nn.hpp"
#include "uvcamo/tensor.hpp"

namespace uvcamo {

// The two environment maps fused with a rasterized render.
struct EnvFeatureMaps {
  Image mul;  // 3 x H x W, >= 0
  Image add;  // 3 x H x W, in [0,1]
};

struct EfeArchitecture {
  int height = 64;
  int width = 64;
  int ch1 = 16;
  int ch2 = 32;
  int ch3 = 64;

  bool operator==(const EfeArchitecture&) const = default;
};

// Intermediate activations kept for the backward pass.
struct EfeTape {
  Image input, e1, e2, e3, bottleneck, d2, d1, head;
  nn::ConvCache c_e1, c_e2, c_e3, c_b, c_d2, c_d1, c_head;
};

// Environment feature extractor: a three-level encoder-decoder with skip
// connections (including the raw input at full resolution) and a 1x1 head
// that yields 6 channels, softplus'd into the multiplicative map and
// squashed by a sigmoid into the additive map.
class EfeNet {
 public:
  EfeNet() : EfeNet(EfeArchitecture{}, 0) {}
  EfeNet(const EfeArchitecture& arch, std::uint64_t seed) : arch_(arch) {
    if (arch.height <= 0 || arch.width <= 0 || arch.height % 4 || arch.width % 4)
      throw ConfigError("EFE resolution must be positive multiples of 4");
    nn::ParamLayout layout;
    e1_ = layout.conv(3, arch.ch1, 3, 1);
    e2_ = layout.conv(arch.ch1, arch.ch2, 3, 2);
    e3_ = layout.conv(arch.ch2, arch.ch3, 3, 2);
    b_ = layout.conv(arch.ch3, arch.ch3, 3, 1);
    d2_ = layout.conv(arch.ch3 + arch.ch2, arch.ch2, 3, 1);
    d1_ = layout.conv(arch.ch2 + arch.ch1 + 3, arch.ch1, 3, 1);
    head_ = layout.conv(arch.ch1, 6, 1, 1);
    params_.assign(layout.count(), 0.0);
    std::mt19937_64 rng(seed);
    nn::he_init(layout.convs(), params_, rng);
    // Start near the identity fusion: softplus(b) = 1, sigmoid(b) ~ 0.05.
    for (int c = 0; c < 6; ++c) params_[head_.bias_offset + c] = c < 3 ? std::log(std::exp(1.0) - 1.0) : -3.0;
    for (std::size_t i = 0; i < head_.weight_count(); ++i) params_[head_.weight_offset + i] *= 0.1;
  }

  const EfeArchitecture& architecture() const noexcept { return arch_; }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }
  std::size_t param_count() const noexcept { return params_.size(); }

  void set_params(std::vector<double> p) {
    if (p.size() != params_.size())
      throw ShapeMismatch("EFE parameter count " + std::to_string(p.size()) + " does not match architecture (" +
                          std::to_string(params_.size()) + ")");
    params_.assign(p.begin(), p.end());
  }

  EnvFeatureMaps forward(const Image& x_ref, EfeTape* tape = nullptr) const {
    if (x_ref.channels() != 3 || x_ref.height() != arch_.height || x_ref.width() != arch_.width)
      throw ShapeMismatch("EFE configured for 3x" + std::to_string(arch_.height) + "x" + std::to_string(arch_.width) +
                          ", got " + x_ref.shape_string());
    EfeTape local;
    EfeTape& t = tape ? *tape : local;
    t.input = x_ref;
    t.e1 = nn::conv_forward(e1_, params_, x_ref, t.c_e1);
    nn::leaky_relu_inplace(t.e1);
    t.e2 = nn::conv_forward(e2_, params_, t.e1, t.c_e2);
    nn::leaky_relu_inplace(t.e2);
    t.e3 = nn::conv_forward(e3_, params_, t.e2, t.c_e3);
    nn::leaky_relu_inplace(t.e3);
    t.bottleneck = nn::conv_forward(b_, params_, t.e3, t.c_b);
    nn::leaky_relu_inplace(t.bottleneck);
    t.d2 = nn::conv_forward(d2_, params_, nn::concat_channels(nn::upsample2x(t.bottleneck), t.e2), t.c_d2);
    nn::leaky_relu_inplace(t.d2);
    t.d1 = nn::conv_forward(d1_, params_, nn::concat_channels(nn::concat_channels(nn::upsample2x(t.d2), t.e1), x_ref),
                            t.c_d1);
    nn::leaky_relu_inplace(t.d1);
    t.head = nn::conv_forward(head_, params_, t.d1, t.c_head);

    EnvFeatureMaps ef{Image(3, arch_.height, arch_.width), Image(3, arch_.height, arch_.width)};
    const std::size_t n = ef.mul.size();
    for (std::size_t i = 0; i < n; ++i) {
      ef.mul[i] = nn::softplus(t.head[i]);
      ef.add[i] = nn::sigmoid(t.head[n + i]);
    }
    return ef;
  }

  // Accumulates d(loss)/d(params) into grads given the gradients with
  // respect to both output maps. Returns d(loss)/d(x_ref) when requested.
  Image backward(const EfeTape& t, const Image& d_mul, const Image& d_add, std::span<double> grads,
                 bool need_dx = false) const {
    if (grads.size() != params_.size() && !grads.empty()) throw ShapeMismatch("EFE gradient buffer size");
    const std::size_t n = d_mul.size();
    Image d_head(6, arch_.height, arch_.width);
    for (std::size_t i = 0; i < n; ++i) {
      d_head[i] = d_mul[i] * nn::sigmoid(t.head[i]);
      const double s = nn::sigmoid(t.head[n + i]);
      d_head[n + i] = d_add[i] * s * (1.0 - s);
    }
    Image g = nn::conv_backward(head_, params_, t.c_head, d_head, grads, true);
    nn::leaky_relu_backward_inplace(t.d1, g);
    g = nn::conv_backward(d1_, params_, t.c_d1, g, grads, true);
    Image g_up1 = nn::slice_channels(g, 0, arch_.ch2);
    Image g_e1 = nn::slice_channels(g, arch_.ch2, arch_.ch1);
    Image g_x = nn::slice_channels(g, arch_.ch2 + arch_.ch1, 3);
    Image g_d2 = nn::upsample2x_backward(g_up1);
    nn::leaky_relu_backward_inplace(t.d2, g_d2);
    g = nn::conv_backward(d2_, params_, t.c_d2, g_d2, grads, true);
    Image g_upb = nn::slice_channels(g, 0, arch_.ch3);
    Image g_e2 = nn::slice_channels(g, arch_.ch3, arch_.ch2);
    Image g_b = nn::upsample2x_backward(g_upb);
    nn::leaky_relu_backward_inplace(t.bottleneck, g_b);
    Image g_e3 = nn::conv_backward(b_, params_, t.c_b, g_b, grads, true);
    nn::leaky_relu_backward_inplace(t.e3, g_e3);
    Image g_e2b = nn::conv_backward(e3_, params_, t.c_e3, g_e3, grads, true);
    for (std::size_t i = 0; i < g_e2.size(); ++i) g_e2[i] += g_e2b[i];
    nn::leaky_relu_backward_inplace(t.e2, g_e2);
    Image g_e1b = nn::conv_backward(e2_, params_, t.c_e2, g_e2, grads, true);
    for (std::size_t i = 0; i < g_e1.size(); ++i) g_e1[i] += g_e1b[i];
    nn::leaky_relu_backward_inplace(t.e1, g_e1);
    Image g_in = nn::conv_backward(e1_, params_, t.c_e1, g_e1, grads, need_dx);
    if (!need_dx) return {};
    for (std::size_t i = 0; i < g_in.size(); ++i) g_in[i] += g_x[i];
    return g_in;
  }

 private:
  EfeArchitecture arch_;
  nn::Conv2d e1_, e2_, e3_, b_, d2_, d1_, head_;
  AlignedVector<double> params_;
};

inline EnvFeatureMaps efe_forward(const EfeNet& net, const Image& x_ref) { return net.forward(x_ref); }

// x_ren = clamp(x_nr * mul + add, 0, 1) * silhouette.
inline Image fuse(const Image& x_nr, const EnvFeatureMaps& ef, const Mask& silhouette) {
  require_same_shape(x_nr, ef.mul, "fuse x_nr/mul");
  require_same_shape(x_nr, ef.add, "fuse x_nr/add");
  require_same_plane(x_nr, silhouette, "fuse x_nr/silhouette");
  Image out(3, x_nr.height(), x_nr.width(), 0.0);
  const std::size_t plane = x_nr.plane();
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      if (!silhouette[p]) continue;
      const std::size_t i = c * plane + p;
      out[i] = std::clamp(x_nr[i] * ef.mul[i] + ef.add[i], 0.0, 1.0);
    }
  return out;
}

struct FuseGradients {
  Image d_x_nr;
  Image d_mul;
  Image d_add;
};

// Backward of fuse. Pixels saturated by the clamp pass no gradient.
inline FuseGradients fuse_backward(const Image& x_nr, const EnvFeatureMaps& ef, const Mask& silhouette,
                                   const Image& d_x_ren) {
  require_same_shape(x_nr, d_x_ren, "fuse_backward");
  const std::size_t plane = x_nr.plane();
  FuseGradients g{Image(3, x_nr.height(), x_nr.width(), 0.0), Image(3, x_nr.height(), x_nr.width(), 0.0),
                  Image(3, x_nr.height(), x_nr.width(), 0.0)};
  for (int c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      if (!silhouette[p]) continue;
      const std::size_t i = c * plane + p;
      const double v = x_nr[i] * ef.mul[i] + ef.add[i];
      if (!(v > 0.0 && v < 1.0)) continue;
      const double d = d_x_ren[i];
      g.d_x_nr[i] = d * ef.mul[i];
      g.d_mul[i] = d * x_nr[i];
      g.d_add[i] = d;
    }
  return g;
}

inline constexpr double kBceEpsilon = 1e-6;

// Area reweighting (h * w) / s for a vehicle of s pixels.
inline double area_weight(std::size_t vehicle_pixels, int h, int w) {
  if (vehicle_pixels == 0) throw DegenerateSample("vehicle pixel count is zero");
  return static_cast<double>(h) * w / static_cast<double>(vehicle_pixels);
}

inline double bce_mean(const Image& x_ren, const Image& tg) {
  require_same_shape(x_ren, tg, "bce");
  double sum = 0.0;
  for (std::size_t i = 0; i < x_ren.size(); ++i) {
    const double x = std::clamp(x_ren[i], kBceEpsilon, 1.0 - kBceEpsilon);
    sum -= tg[i] * std::log(x) + (1.0 - tg[i]) * std::log(1.0 - x);
  }
  return sum / static_cast<double>(x_ren.size());
}

// Area-weighted BCE between the fused render and its target.
inline double efe_loss(const Image& x_ren, const Image& tg, std::size_t vehicle_pixels, int h, int w,
                       bool weighted = true) {
  const double weight = area_weight(vehicle_pixels, h, w);
  return (weighted ? weight : 1.0) * bce_mean(x_ren, tg);
}

inline Image efe_loss_gradient(const Image& x_ren, const Image& tg, std::size_t vehicle_pixels, int h, int w,
                               bool weighted = true) {
  const double scale = (weighted ? area_weight(vehicle_pixels, h, w) : 1.0) / static_cast<double>(x_ren.size());
  Image g(x_ren.channels(), x_ren.height(), x_ren.width(), 0.0);
  for (std::size_t i = 0; i < x_ren.size(); ++i) {
    const double x = x_ren[i];
    if (!(x > kBceEpsilon && x < 1.0 - kBceEpsilon)) continue;
    g[i] = scale * (-tg[i] / x + (1.0 - tg[i]) / (1.0 - x));
  }
  return g;
}

// One EFE training record: a masked reference image of the vehicle in its
// reference paint and, per preset color, the raw rasterization and the
// oracle target.
struct EfeExample {
  Image x_ref;
  Mask vehicle;  // 1 on vehicle pixels
  std::vector<Image> x_nr;
  std::vector<Image> target;
  double distance = 0.0;
  std::size_t vehicle_pixels() const {
    return static_cast<std::size_t>(std::ranges::count_if(vehicle, [](auto v) { return v != 0; }));
  }
};

struct EfeTrainConfig {
  int epochs = 20;
  double learning_rate = 0.01;
  int batch_size = 4;
  bool use_area_weight = true;
  std::uint64_t seed = 0;
  EfeArchitecture arch;
};

struct EfeMetrics {
  double loss = 0.0;  // mean per-record loss
  double mae = 0.0;   // mean |x_ren - tg| over vehicle pixels and channels
  std::map<double, double> mae_by_distance;
};

struct EfeEpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  EfeMetrics test;
};

struct EfeTrainResult {
  EfeNet net;
  int best_epoch = 0;
  std::vector<EfeEpochLog> log;
};

inline double example_loss(const EfeExample& ex, const EnvFeatureMaps& ef, bool weighted) {
  const std::size_t s = ex.vehicle_pixels();
  double loss = 0.0;
  for (std::size_t k = 0; k < ex.x_nr.size(); ++k)
    loss += efe_loss(fuse(ex.x_nr[k], ef, ex.vehicle), ex.target[k], s, ex.x_ref.height(), ex.x_ref.width(), weighted);
  return loss / static_cast<double>(ex.x_nr.size());
}

// Loss reported with the training weighting; MAE is weighting-independent.
inline EfeMetrics efe_metrics(const EfeNet& net, std::span<const EfeExample> examples, bool weighted = true) {
  EfeMetrics m;
  std::map<double, std::pair<double, double>> by_dist;
  double abs_sum = 0.0, count = 0.0;
  for (const auto& ex : examples) {
    const auto ef = net.forward(ex.x_ref);
    m.loss += example_loss(ex, ef, weighted);
    for (std::size_t k = 0; k < ex.x_nr.size(); ++k) {
      const Image x_ren = fuse(ex.x_nr[k], ef, ex.vehicle);
      double a = 0.0, n = 0.0;
      for (int c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < ex.vehicle.size(); ++p)
          if (ex.vehicle[p]) {
            a += std::abs(x_ren[c * ex.vehicle.size() + p] - ex.target[k][c * ex.vehicle.size() + p]);
            n += 1.0;
          }
      abs_sum += a;
      count += n;
      by_dist[ex.distance].first += a;
      by_dist[ex.distance].second += n;
    }
  }
  if (!examples.empty()) m.loss /= static_cast<double>(examples.size());
  m.mae = count > 0 ? abs_sum / count : 0.0;
  for (const auto& [d, v] : by_dist) m.mae_by_distance[d] = v.second > 0 ? v.first / v.second : 0.0;
  return m;
}

// Accumulates the gradient of example_loss into grads and returns the loss.
inline double efe_example_gradient(const EfeNet& net, const EfeExample& ex, bool weighted, std::span<double> grads,
                                   double scale = 1.0) {
  EfeTape tape;
  const auto ef = net.forward(ex.x_ref, &tape);
  const std::size_t s = ex.vehicle_pixels();
  const int h = ex.x_ref.height(), w = ex.x_ref.width();
  Image d_mul(3, h, w, 0.0), d_add(3, h, w, 0.0);
  double loss = 0.0;
  const double per_color = scale / static_cast<double>(ex.x_nr.size());
  for (std::size_t k = 0; k < ex.x_nr.size(); ++k) {
    const Image x_ren = fuse(ex.x_nr[k], ef, ex.vehicle);
    loss += efe_loss(x_ren, ex.target[k], s, h, w, weighted);
    Image g = efe_loss_gradient(x_ren, ex.target[k], s, h, w, weighted);
    for (auto& v : g) v *= per_color;
    const auto fg = fuse_backward(ex.x_nr[k], ef, ex.vehicle, g);
    for (std::size_t i = 0; i < d_mul.size(); ++i) {
      d_mul[i] += fg.d_mul[i];
      d_add[i] += fg.d_add[i];
    }
  }
  net.backward(tape, d_mul, d_add, grads);
  return loss / static_cast<double>(ex.x_nr.size());
}

// Adam training; returns the checkpoint with the lowest test loss.
template <typename Progress = void (*)(const EfeEpochLog&)>
EfeTrainResult train_efe(std::span<const EfeExample> train, std::span<const EfeExample> test,
                         const EfeTrainConfig& cfg, Progress&& progress = [](const EfeEpochLog&) {}) {
  if (train.empty()) throw TrainingFailure("EFE training set is empty");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0))
    throw ConfigError("EFE training needs epochs >= 1, batch_size >= 1, learning_rate > 0");
  for (const auto& ex : train)
    if (ex.vehicle_pixels() == 0) throw DegenerateSample("EFE training record without vehicle pixels");
  EfeNet net(cfg.arch, cfg.seed);
  nn::Adam adam(net.param_count(), cfg.learning_rate);
  AlignedVector<double> grads(net.param_count());
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  EfeTrainResult result{net, 0, {}};
  double best = std::numeric_limits<double>::infinity();
  const auto eval_set = test.empty() ? train : test;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::ranges::fill(grads, 0.0);
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (std::size_t i = start; i < stop; ++i)
        epoch_loss += efe_example_gradient(net, train[order[i]], cfg.use_area_weight, grads, scale);
      adam.step(net.params(), grads);
    }
    EfeEpochLog log{epoch, epoch_loss / static_cast<double>(train.size()),
                    efe_metrics(net, eval_set, cfg.use_area_weight)};
    if (!std::isfinite(log.train_loss)) throw TrainingFailure("EFE training diverged (non-finite loss)");
    if (log.test.loss < best) {
      best = log.test.loss;
      result.net = net;
      result.best_epoch = epoch;
    }
    result.log.push_back(log);
    progress(log);
  }
  return result;
}

}  // namespace uvcamo
