#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <cstdint>
#include <new>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "uvcamo/error.hpp"

namespace uvcamo {

// Eigen peels vectorized reductions up to the first packet boundary, so
// the summation order (and the last bit of the result) depends on where a
// buffer starts. A fixed 64-byte alignment keeps runs bit-identical.
inline constexpr std::size_t kBufferAlignment = 64;

template <typename T>
struct AlignedAllocator {
  using value_type = T;

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kBufferAlignment}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kBufferAlignment}); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

// Dense channel-major (C, H, W) tensor. Images, masks, feature maps and
// textures all use this layout.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(int channels, int height, int width, T fill = T{})
      : c_(channels), h_(height), w_(width),
        data_(static_cast<std::size_t>(channels) * height * width, fill) {
    if (channels < 0 || height < 0 || width < 0) throw ShapeMismatch("negative tensor extent");
  }

  int channels() const noexcept { return c_; }
  int height() const noexcept { return h_; }
  int width() const noexcept { return w_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h_) * w_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int c, int y, int x) noexcept {
    assert(c >= 0 && c < c_ && y >= 0 && y < h_ && x >= 0 && x < w_);
    return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
  }
  const T& operator()(int c, int y, int x) const noexcept {
    assert(c >= 0 && c < c_ && y >= 0 && y < h_ && x >= 0 && x < w_);
    return data_[(static_cast<std::size_t>(c) * h_ + y) * w_ + x];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::span<T> channel(int c) noexcept { return {data_.data() + c * plane(), plane()}; }
  std::span<const T> channel(int c) const noexcept { return {data_.data() + c * plane(), plane()}; }

  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }
  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  bool same_shape(const Tensor<U>& o) const noexcept {
    return c_ == o.channels() && h_ == o.height() && w_ == o.width();
  }
  template <typename U>
  bool same_plane(const Tensor<U>& o) const noexcept {
    return h_ == o.height() && w_ == o.width();
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << c_ << "x" << h_ << "x" << w_;
    return os.str();
  }

  bool operator==(const Tensor& o) const = default;

 private:
  int c_ = 0;
  int h_ = 0;
  int w_ = 0;
  AlignedVector<T> data_;
};

using Image = Tensor<double>;
using Mask = Tensor<std::uint8_t>;

template <typename A, typename B>
void require_same_shape(const Tensor<A>& a, const Tensor<B>& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeMismatch(std::string(what) + ": " + a.shape_string() + " vs " + b.shape_string());
}

template <typename A, typename B>
void require_same_plane(const Tensor<A>& a, const Tensor<B>& b, const char* what) {
  if (!a.same_plane(b))
    throw ShapeMismatch(std::string(what) + ": " + a.shape_string() + " vs " + b.shape_string());
}

}  // namespace uvcamo
