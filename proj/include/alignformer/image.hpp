// Image and mask value types.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignformer/tensor.hpp"

namespace af {

enum class ColorSpace { kLinearSrgb };

/// H x W x C image in [0,1] linear sRGB, interleaved row-major storage.
class ImageTensor {
 public:
  static constexpr int kMinSide = 8;

  ImageTensor() = default;
  ImageTensor(int height, int width, int channels, float fill = 0.0f)
      : h_(height), w_(width), c_(channels),
        data_(static_cast<std::size_t>(height) * width * channels, fill) {
    if (channels != 1 && channels != 3) {
      throw std::invalid_argument("ImageTensor: channel count must be 1 or 3, got " + std::to_string(channels));
    }
    if (height < kMinSide || width < kMinSide) {
      throw std::invalid_argument("ImageTensor: sides must be >= 8, got " + std::to_string(height) + "x" +
                                  std::to_string(width));
    }
  }

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  ColorSpace color_space() const { return ColorSpace::kLinearSrgb; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  float& at(int y, int x, int c) { return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + c]; }
  float at(int y, int x, int c) const { return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + c]; }

  std::vector<float>& values() { return data_; }
  const std::vector<float>& values() const { return data_; }

  bool all_finite() const {
    for (float v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool same_geometry(const ImageTensor& o) const { return h_ == o.h_ && w_ == o.w_; }

  ImageTensor crop(int y0, int x0, int height, int width) const {
    if (y0 < 0 || x0 < 0 || y0 + height > h_ || x0 + width > w_) {
      throw std::out_of_range("ImageTensor::crop outside image");
    }
    ImageTensor out(height, width, c_);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        for (int c = 0; c < c_; ++c) out.at(y, x, c) = at(y0 + y, x0 + x, c);
    return out;
  }

  ImageTensor clamped() const {
    ImageTensor out = *this;
    for (float& v : out.data_) v = std::min(1.0f, std::max(0.0f, v));
    return out;
  }

  friend bool operator==(const ImageTensor& a, const ImageTensor& b) {
    return a.h_ == b.h_ && a.w_ == b.w_ && a.c_ == b.c_ && a.data_ == b.data_;
  }

 private:
  int h_ = 0, w_ = 0, c_ = 0;
  std::vector<float> data_;
};

/// H x W validity map with values in {0,1}.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, std::uint8_t fill = 1)
      : h_(height), w_(width), data_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {}

  int height() const { return h_; }
  int width() const { return w_; }
  std::uint8_t& at(int y, int x) { return data_[static_cast<std::size_t>(y) * w_ + x]; }
  std::uint8_t at(int y, int x) const { return data_[static_cast<std::size_t>(y) * w_ + x]; }
  const std::vector<std::uint8_t>& values() const { return data_; }
  std::vector<std::uint8_t>& values() { return data_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data_) n += v;
    return n;
  }

  BinaryMask crop(int y0, int x0, int height, int width) const {
    BinaryMask out(height, width, 0);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) out.at(y, x) = at(y0 + y, x0 + x);
    return out;
  }

  friend bool operator==(const BinaryMask& a, const BinaryMask& b) {
    return a.h_ == b.h_ && a.w_ == b.w_ && a.data_ == b.data_;
  }

 private:
  int h_ = 0, w_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Stacks images of identical geometry into an [N, C, H, W] tensor.
template <typename T>
Tensor<T> to_tensor(const std::vector<const ImageTensor*>& images) {
  if (images.empty()) throw std::invalid_argument("to_tensor: no images");
  const ImageTensor& first = *images.front();
  Tensor<T> t(static_cast<int>(images.size()), first.channels(), first.height(), first.width());
  for (std::size_t n = 0; n < images.size(); ++n) {
    const ImageTensor& im = *images[n];
    if (!im.same_geometry(first) || im.channels() != first.channels()) {
      throw std::invalid_argument("to_tensor: images differ in geometry");
    }
    for (int c = 0; c < im.channels(); ++c)
      for (int y = 0; y < im.height(); ++y)
        for (int x = 0; x < im.width(); ++x) t(static_cast<int>(n), c, y, x) = static_cast<T>(im.at(y, x, c));
  }
  return t;
}

template <typename T>
Tensor<T> to_tensor(const ImageTensor& image) {
  return to_tensor<T>(std::vector<const ImageTensor*>{&image});
}

template <typename T>
ImageTensor from_tensor(const Tensor<T>& t, int n = 0) {
  ImageTensor im(t.h(), t.w(), t.c());
  for (int c = 0; c < t.c(); ++c)
    for (int y = 0; y < t.h(); ++y)
      for (int x = 0; x < t.w(); ++x) im.at(y, x, c) = static_cast<float>(t(n, c, y, x));
  return im;
}

/// Mask as a [N, C, H, W] tensor replicated over `channels`.
template <typename T>
Tensor<T> mask_tensor(const std::vector<const BinaryMask*>& masks, int channels) {
  const BinaryMask& first = *masks.front();
  Tensor<T> t(static_cast<int>(masks.size()), channels, first.height(), first.width());
  for (std::size_t n = 0; n < masks.size(); ++n)
    for (int c = 0; c < channels; ++c)
      for (int y = 0; y < first.height(); ++y)
        for (int x = 0; x < first.width(); ++x) t(static_cast<int>(n), c, y, x) = masks[n]->at(y, x) ? T(1) : T(0);
  return t;
}

/// Rec. 709 luma of a linear RGB image (identity for single-channel input).
inline std::vector<double> luminance(const ImageTensor& im) {
  std::vector<double> out(static_cast<std::size_t>(im.height()) * im.width());
  for (int y = 0; y < im.height(); ++y)
    for (int x = 0; x < im.width(); ++x) {
      double v;
      if (im.channels() == 1) {
        v = im.at(y, x, 0);
      } else {
        v = 0.2126 * im.at(y, x, 0) + 0.7152 * im.at(y, x, 1) + 0.0722 * im.at(y, x, 2);
      }
      out[static_cast<std::size_t>(y) * im.width() + x] = v;
    }
  return out;
}

}  // namespace af
