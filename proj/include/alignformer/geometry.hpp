// Planar geometry shared across modules: points, correspondences and 3x3
// projective transforms.
#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace af {

struct Point2 {
  double x = 0, y = 0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

/// (position in image A, position of the same scene point in image B).
using Correspondence = std::pair<Point2, Point2>;

enum class CorrespondenceSource { kOracle, kExternal, kMatcher };

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;
  CorrespondenceSource source = CorrespondenceSource::kOracle;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

/// Row-major 3x3 projective transform acting on (x, y, 1).
struct Homography {
  std::array<double, 9> h{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Homography identity() { return {}; }
  static Homography translation(double tx, double ty) { return {{1, 0, tx, 0, 1, ty, 0, 0, 1}}; }

  /// Rotation by `degrees` and isotropic `scale` about (cx, cy), then translation.
  static Homography similarity(double degrees, double scale, double tx, double ty, double cx, double cy) {
    const double t = degrees * 3.14159265358979323846 / 180.0;
    const double c = scale * std::cos(t), s = scale * std::sin(t);
    return {{c, -s, cx - c * cx + s * cy + tx, s, c, cy - s * cx - c * cy + ty, 0, 0, 1}};
  }

  double operator()(int r, int c) const { return h[r * 3 + c]; }
  double& operator()(int r, int c) { return h[r * 3 + c]; }

  /// Maps a point; throws when it lands on the line at infinity.
  Point2 apply(const Point2& p) const {
    const double w = h[6] * p.x + h[7] * p.y + h[8];
    if (std::abs(w) < 1e-12) throw std::domain_error("homography maps point to infinity");
    return {(h[0] * p.x + h[1] * p.y + h[2]) / w, (h[3] * p.x + h[4] * p.y + h[5]) / w};
  }

  double denominator(const Point2& p) const { return h[6] * p.x + h[7] * p.y + h[8]; }

  double determinant() const {
    return h[0] * (h[4] * h[8] - h[5] * h[7]) - h[1] * (h[3] * h[8] - h[5] * h[6]) + h[2] * (h[3] * h[7] - h[4] * h[6]);
  }

  Homography inverse() const {
    const double det = determinant();
    if (std::abs(det) < 1e-15) throw std::domain_error("singular homography");
    Homography inv;
    inv.h = {(h[4] * h[8] - h[5] * h[7]) / det, (h[2] * h[7] - h[1] * h[8]) / det, (h[1] * h[5] - h[2] * h[4]) / det,
             (h[5] * h[6] - h[3] * h[8]) / det, (h[0] * h[8] - h[2] * h[6]) / det, (h[2] * h[3] - h[0] * h[5]) / det,
             (h[3] * h[7] - h[4] * h[6]) / det, (h[1] * h[6] - h[0] * h[7]) / det, (h[0] * h[4] - h[1] * h[3]) / det};
    return inv.normalized();
  }

  /// Scaled so that h33 = 1.
  Homography normalized() const {
    if (std::abs(h[8]) < 1e-15) throw std::domain_error("homography with h33 = 0 cannot be normalized");
    Homography out;
    for (int i = 0; i < 9; ++i) out.h[i] = h[i] / h[8];
    return out;
  }

  /// this * other: apply `other` first.
  Homography compose(const Homography& other) const {
    Homography out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += h[r * 3 + k] * other.h[k * 3 + c];
        out.h[r * 3 + c] = s;
      }
    return out;
  }

  double frobenius_distance(const Homography& o) const {
    double s = 0;
    for (int i = 0; i < 9; ++i) s += (h[i] - o.h[i]) * (h[i] - o.h[i]);
    return std::sqrt(s);
  }
};

}  // namespace af
