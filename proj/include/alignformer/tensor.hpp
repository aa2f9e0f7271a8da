// Dense NCHW tensor used by every network, loss and image-processing routine.
#pragma once

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace af {

/// N, C, H, W.
using Shape = std::array<int, 4>;

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[' << s[0] << ',' << s[1] << ',' << s[2] << ',' << s[3] << ']';
  return os.str();
}

inline std::size_t numel(const Shape& s) {
  return static_cast<std::size_t>(s[0]) * s[1] * s[2] * s[3];
}

/// 64-byte aligned storage: vectorized kernels then peel identically on every run.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(const Shape& shape, T fill = T(0)) : shape_(shape), data_(checked_numel(shape), fill) {}
  Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_[0]; }
  int c() const { return shape_[1]; }
  int h() const { return shape_[2]; }
  int w() const { return shape_[3]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(shape_[2]) * shape_[3]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  AlignedVector<T>& vec() { return data_; }
  const AlignedVector<T>& vec() const { return data_; }

  std::size_t index(int n, int c, int y, int x) const {
    assert(n >= 0 && n < shape_[0] && c >= 0 && c < shape_[1]);
    assert(y >= 0 && y < shape_[2] && x >= 0 && x < shape_[3]);
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }
  T& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& operator()(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> plane(int n, int c) {
    return {data_.data() + index(n, c, 0, 0), plane_size()};
  }
  std::span<const T> plane(int n, int c) const {
    return {data_.data() + index(n, c, 0, 0), plane_size()};
  }
  /// All channels of batch item n, contiguous.
  std::span<T> item(int n) {
    const std::size_t len = static_cast<std::size_t>(shape_[1]) * plane_size();
    return {data_.data() + len * n, len};
  }
  std::span<const T> item(int n) const {
    const std::size_t len = static_cast<std::size_t>(shape_[1]) * plane_size();
    return {data_.data() + len * n, len};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  /// Same storage, new shape with the same element count.
  Tensor reshaped(const Shape& s) const {
    if (numel(s) != data_.size()) {
      throw std::invalid_argument("Tensor::reshaped: " + to_string(shape_) + " -> " + to_string(s));
    }
    Tensor out;
    out.shape_ = s;
    out.data_ = data_;
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static std::size_t checked_numel(const Shape& shape) {
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension " + to_string(shape));
    }
    return numel(shape);
  }

  Shape shape_{0, 0, 0, 0};
  AlignedVector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + to_string(a.shape()) +
                                " vs " + to_string(b.shape()));
  }
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace af
