// Bilinear sampling primitives shared by warping, resizing and attention.
#pragma once

#include <algorithm>
#include <cmath>

namespace af {

/// Four-tap bilinear stencil at a real position, clamped to the grid rectangle.
template <typename T>
struct BilinearTap {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  T w00 = 0, w01 = 0, w10 = 0, w11 = 0;  // w{row}{col}: (y0,x0) (y0,x1) (y1,x0) (y1,x1)

  static BilinearTap at(T x, T y, int width, int height) {
    BilinearTap t;
    x = std::clamp(x, T(0), static_cast<T>(width - 1));
    y = std::clamp(y, T(0), static_cast<T>(height - 1));
    t.x0 = static_cast<int>(std::floor(x));
    t.y0 = static_cast<int>(std::floor(y));
    t.x1 = std::min(t.x0 + 1, width - 1);
    t.y1 = std::min(t.y0 + 1, height - 1);
    const T fx = x - t.x0;
    const T fy = y - t.y0;
    t.w00 = (1 - fy) * (1 - fx);
    t.w01 = (1 - fy) * fx;
    t.w10 = fy * (1 - fx);
    t.w11 = fy * fx;
    return t;
  }

  /// Samples a row-major plane of the given width.
  template <typename P>
  T sample(const P* plane, int width) const {
    return w00 * plane[y0 * width + x0] + w01 * plane[y0 * width + x1] +
           w10 * plane[y1 * width + x0] + w11 * plane[y1 * width + x1];
  }

  /// Scatters `g` back onto the four taps.
  template <typename P>
  void scatter(P* plane, int width, T g) const {
    plane[y0 * width + x0] += w00 * g;
    plane[y0 * width + x1] += w01 * g;
    plane[y1 * width + x0] += w10 * g;
    plane[y1 * width + x1] += w11 * g;
  }
};

/// Two-tap linear resampling coefficients along one axis, half-pixel centers
/// (the align_corners=false convention), source clamped at zero.
struct LinearAxis {
  int i0 = 0, i1 = 0;
  double lambda = 0;

  static LinearAxis at(int out_index, int in_size, int out_size) {
    LinearAxis a;
    const double scale = static_cast<double>(in_size) / out_size;
    double src = (out_index + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    a.i0 = std::min(static_cast<int>(std::floor(src)), in_size - 1);
    a.i1 = std::min(a.i0 + 1, in_size - 1);
    a.lambda = src - a.i0;
    if (a.i0 == a.i1) a.lambda = 0;
    return a;
  }
};

}  // namespace af
