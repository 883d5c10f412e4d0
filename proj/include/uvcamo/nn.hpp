#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "uvcamo/tensor.hpp"

// Minimal convolutional building blocks with hand-written backward passes.
// Parameters of a network live in one flat vector; layers hold offsets into
// it. Forward passes never mutate parameters, backward passes accumulate
// into a caller-owned gradient vector of the same layout.
namespace uvcamo::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMatrix = Eigen::MatrixXd;

struct Conv2d {
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  std::size_t weight_offset = 0;  // out_ch x (in_ch * kernel * kernel), row-major
  std::size_t bias_offset = 0;

  std::size_t weight_count() const { return static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel; }
  int out_extent(int n) const { return (n + 2 * pad - kernel) / stride + 1; }
};

// Saved input patches for the backward pass.
struct ConvCache {
  ColMatrix cols;
  int in_h = 0;
  int in_w = 0;
};

class ParamLayout {
 public:
  Conv2d conv(int in_ch, int out_ch, int kernel, int stride) {
    Conv2d c{in_ch, out_ch, kernel, stride, kernel / 2, count_, 0};
    count_ += c.weight_count();
    c.bias_offset = count_;
    count_ += static_cast<std::size_t>(out_ch);
    convs_.push_back(c);
    return c;
  }
  std::size_t count() const { return count_; }
  const std::vector<Conv2d>& convs() const { return convs_; }

 private:
  std::size_t count_ = 0;
  std::vector<Conv2d> convs_;
};

// He-normal weights, zero biases, drawn in layer order.
template <typename Rng>
void he_init(const std::vector<Conv2d>& convs, std::span<double> params, Rng& rng, double gain = 1.0) {
  for (const auto& c : convs) {
    const double fan_in = static_cast<double>(c.in_ch) * c.kernel * c.kernel;
    std::normal_distribution<double> nd(0.0, gain * std::sqrt(2.0 / fan_in));
    for (std::size_t i = 0; i < c.weight_count(); ++i) params[c.weight_offset + i] = nd(rng);
    for (int i = 0; i < c.out_ch; ++i) params[c.bias_offset + i] = 0.0;
  }
}

inline void im2col(const Image& x, const Conv2d& c, ColMatrix& cols) {
  const int H = x.height(), W = x.width();
  const int Ho = c.out_extent(H), Wo = c.out_extent(W);
  const int k = c.kernel;
  cols.resize(static_cast<Eigen::Index>(c.in_ch) * k * k, static_cast<Eigen::Index>(Ho) * Wo);
  double* dst = cols.data();
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox)
      for (int ch = 0; ch < c.in_ch; ++ch) {
        const double* src = x.data() + static_cast<std::size_t>(ch) * H * W;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * c.stride + ky - c.pad;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * c.stride + kx - c.pad;
            *dst++ = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? src[iy * W + ix] : 0.0;
          }
        }
      }
}

inline void col2im(const ColMatrix& cols, const Conv2d& c, Image& dx) {
  const int H = dx.height(), W = dx.width();
  const int Ho = c.out_extent(H), Wo = c.out_extent(W);
  const int k = c.kernel;
  const double* src = cols.data();
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox)
      for (int ch = 0; ch < c.in_ch; ++ch) {
        double* d = dx.data() + static_cast<std::size_t>(ch) * H * W;
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * c.stride + ky - c.pad;
          for (int kx = 0; kx < k; ++kx, ++src) {
            const int ix = ox * c.stride + kx - c.pad;
            if (iy >= 0 && iy < H && ix >= 0 && ix < W) d[iy * W + ix] += *src;
          }
        }
      }
}

inline Image conv_forward(const Conv2d& c, std::span<const double> params, const Image& x, ConvCache& cache) {
  if (x.channels() != c.in_ch)
    throw ShapeMismatch("conv expects " + std::to_string(c.in_ch) + " channels, got " + x.shape_string());
  const int Ho = c.out_extent(x.height()), Wo = c.out_extent(x.width());
  cache.in_h = x.height();
  cache.in_w = x.width();
  im2col(x, c, cache.cols);
  Image y(c.out_ch, Ho, Wo);
  Eigen::Map<const RowMatrix> w(params.data() + c.weight_offset, c.out_ch,
                                static_cast<Eigen::Index>(c.in_ch) * c.kernel * c.kernel);
  Eigen::Map<const Eigen::VectorXd> b(params.data() + c.bias_offset, c.out_ch);
  Eigen::Map<RowMatrix> out(y.data(), c.out_ch, static_cast<Eigen::Index>(Ho) * Wo);
  out.noalias() = w * cache.cols;
  out.colwise() += b;
  return y;
}

// Accumulates parameter gradients into grads (if non-empty) and returns the
// input gradient (empty when need_dx is false).
inline Image conv_backward(const Conv2d& c, std::span<const double> params, const ConvCache& cache,
                           const Image& dy, std::span<double> grads, bool need_dx) {
  const Eigen::Index hw = static_cast<Eigen::Index>(dy.height()) * dy.width();
  const Eigen::Index kk = static_cast<Eigen::Index>(c.in_ch) * c.kernel * c.kernel;
  Eigen::Map<const RowMatrix> g(dy.data(), c.out_ch, hw);
  if (!grads.empty()) {
    Eigen::Map<RowMatrix> gw(grads.data() + c.weight_offset, c.out_ch, kk);
    Eigen::Map<Eigen::VectorXd> gb(grads.data() + c.bias_offset, c.out_ch);
    gw.noalias() += g * cache.cols.transpose();
    gb += g.rowwise().sum();
  }
  if (!need_dx) return {};
  Eigen::Map<const RowMatrix> w(params.data() + c.weight_offset, c.out_ch, kk);
  ColMatrix dcols = w.transpose() * g;
  Image dx(c.in_ch, cache.in_h, cache.in_w, 0.0);
  col2im(dcols, c, dx);
  return dx;
}

inline constexpr double kLeakySlope = 0.1;

inline void leaky_relu_inplace(Image& x) {
  for (auto& v : x) v = v > 0 ? v : kLeakySlope * v;
}

// dy scaled by the slope wherever the activation output was negative.
inline void leaky_relu_backward_inplace(const Image& activated, Image& dy) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (activated[i] <= 0) dy[i] *= kLeakySlope;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
inline double softplus(double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); }

inline Image upsample2x(const Image& x) {
  Image y(x.channels(), x.height() * 2, x.width() * 2);
  for (int c = 0; c < x.channels(); ++c)
    for (int yy = 0; yy < y.height(); ++yy)
      for (int xx = 0; xx < y.width(); ++xx) y(c, yy, xx) = x(c, yy / 2, xx / 2);
  return y;
}

inline Image upsample2x_backward(const Image& dy) {
  Image dx(dy.channels(), dy.height() / 2, dy.width() / 2, 0.0);
  for (int c = 0; c < dy.channels(); ++c)
    for (int yy = 0; yy < dy.height(); ++yy)
      for (int xx = 0; xx < dy.width(); ++xx) dx(c, yy / 2, xx / 2) += dy(c, yy, xx);
  return dx;
}

inline Image concat_channels(const Image& a, const Image& b) {
  require_same_plane(a, b, "concat");
  Image y(a.channels() + b.channels(), a.height(), a.width());
  std::copy(a.begin(), a.end(), y.begin());
  std::copy(b.begin(), b.end(), y.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return y;
}

inline Image slice_channels(const Image& x, int first, int count) {
  Image y(count, x.height(), x.width());
  const auto off = static_cast<std::ptrdiff_t>(first * x.plane());
  std::copy(x.begin() + off, x.begin() + off + static_cast<std::ptrdiff_t>(y.size()), y.begin());
  return y;
}

// Adam with bias correction.
class Adam {
 public:
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grads[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grads[i] * grads[i];
      params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

  long steps() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  AlignedVector<double> m_, v_;
};

}  // namespace uvcamo::nn
