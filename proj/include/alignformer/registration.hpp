// Global pre-alignment: RANSAC homography from correspondences, resampling
// with a validity mask, and cropping to the common valid rectangle.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "alignformer/geometry.hpp"
#include "alignformer/image.hpp"
#include "alignformer/io.hpp"
#include "alignformer/sampling.hpp"

namespace af::reg {

inline constexpr double kMaxCondition = 1e8;

namespace detail {

/// Similarity taking the points to zero mean and mean distance sqrt(2).
inline Homography normalizer(const std::vector<Point2>& pts) {
  double mx = 0, my = 0;
  for (const auto& p : pts) {
    mx += p.x;
    my += p.y;
  }
  mx /= pts.size();
  my /= pts.size();
  double d = 0;
  for (const auto& p : pts) d += std::hypot(p.x - mx, p.y - my);
  d /= pts.size();
  if (d < 1e-12) throw std::domain_error("homography: coincident points");
  const double s = std::sqrt(2.0) / d;
  return {{s, 0, -s * mx, 0, s, -s * my, 0, 0, 1}};
}

}  // namespace detail

/// Normalized DLT over >= 4 pairs (A -> B). Throws std::domain_error when the
/// design matrix is rank-deficient (condition number above kMaxCondition).
inline Homography fit_homography_dlt(const std::vector<Correspondence>& pairs) {
  if (pairs.size() < 4) throw std::invalid_argument("fit_homography_dlt: need at least 4 correspondences");
  std::vector<Point2> a, b;
  for (const auto& [p, q] : pairs) {
    a.push_back(p);
    b.push_back(q);
  }
  const Homography ta = detail::normalizer(a), tb = detail::normalizer(b);
  const Eigen::Index n = static_cast<Eigen::Index>(pairs.size());
  Eigen::MatrixXd A(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Point2 p = ta.apply(a[i]), q = tb.apply(b[i]);
    A.row(2 * i) << -p.x, -p.y, -1, 0, 0, 0, q.x * p.x, q.x * p.y, q.x;
    A.row(2 * i + 1) << 0, 0, 0, -p.x, -p.y, -1, q.y * p.x, q.y * p.y, q.y;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // Eight constraints must be independent: compare the largest with the 8th singular value.
  const double s8 = sv(std::min<Eigen::Index>(7, sv.size() - 1));
  if (s8 <= 0 || sv(0) / s8 > kMaxCondition) throw std::domain_error("fit_homography_dlt: degenerate configuration");
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Homography hn;
  for (int i = 0; i < 9; ++i) hn.h[i] = h(i);
  Homography out = tb.inverse().compose(hn).compose(ta);
  if (std::abs(out.h[8]) < 1e-15) throw std::domain_error("fit_homography_dlt: h33 vanishes");
  out = out.normalized();
  if (std::abs(out.determinant()) < 1e-12) throw std::domain_error("fit_homography_dlt: singular result");
  return out;
}

inline double reprojection_error(const Homography& H, const Correspondence& c) {
  const double w = H.denominator(c.first);
  if (std::abs(w) < 1e-12) return std::numeric_limits<double>::infinity();
  const Point2 p = H.apply(c.first);
  return std::hypot(p.x - c.second.x, p.y - c.second.y);
}

struct RansacOptions {
  int iterations = 2000;
  double inlier_threshold = 1.0;  // pixels
  std::uint64_t seed = 1;
  int refinement_rounds = 3;
};

struct RansacResult {
  Homography homography;
  std::vector<bool> inliers;
  std::size_t inlier_count = 0;
  double rms_error = 0;  // over inliers, pixels
};

/// Deterministic per (seed, trial): every trial draws its sample from its own
/// generator, so trials are independent of evaluation order.
inline RansacResult estimate_homography_ransac(const CorrespondenceSet& corr, const RansacOptions& opt = {}) {
  const auto& pairs = corr.pairs;
  const std::size_t n = pairs.size();
  if (n < 4) throw std::invalid_argument("estimate_homography_ransac: need at least 4 correspondences");
  if (opt.iterations < 1 || opt.inlier_threshold <= 0) throw std::invalid_argument("estimate_homography_ransac: bad options");

  auto consensus = [&](const Homography& H, std::vector<bool>& mask, double& err) {
    std::size_t count = 0;
    err = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = reprojection_error(H, pairs[i]);
      mask[i] = e < opt.inlier_threshold;
      if (mask[i]) {
        ++count;
        err += e * e;
      }
    }
    return count;
  };

  RansacResult best;
  best.inliers.assign(n, false);
  double best_err = std::numeric_limits<double>::infinity();
  bool found = false;
  std::vector<bool> mask(n);
  for (int t = 0; t < opt.iterations; ++t) {
    std::mt19937_64 rng(opt.seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(t));
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t k = 0; k < 4; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, n - 1);
      std::swap(idx[k], idx[pick(rng)]);
    }
    std::vector<Correspondence> sample{pairs[idx[0]], pairs[idx[1]], pairs[idx[2]], pairs[idx[3]]};
    Homography H;
    try {
      H = fit_homography_dlt(sample);
    } catch (const std::domain_error&) {
      continue;
    }
    double err = 0;
    const std::size_t count = consensus(H, mask, err);
    if (count > best.inlier_count || (count == best.inlier_count && count > 0 && err < best_err)) {
      best.homography = H;
      best.inliers = mask;
      best.inlier_count = count;
      best_err = err;
      found = true;
    }
  }
  if (!found || best.inlier_count < 4) throw std::domain_error("estimate_homography_ransac: no non-degenerate consensus");

  // Least-squares refit on the consensus set, re-scoring until stable.
  for (int round = 0; round < opt.refinement_rounds; ++round) {
    std::vector<Correspondence> in;
    for (std::size_t i = 0; i < n; ++i)
      if (best.inliers[i]) in.push_back(pairs[i]);
    const Homography H = fit_homography_dlt(in);
    double err = 0;
    const std::size_t count = consensus(H, mask, err);
    if (count < best.inlier_count) break;
    const bool same = mask == best.inliers;
    best.homography = H;
    best.inliers = mask;
    best.inlier_count = count;
    best_err = err;
    if (same) break;
  }
  best.rms_error = std::sqrt(best_err / static_cast<double>(best.inlier_count));
  return best;
}

// ---------------------------------------------------------------------------
// Resampling

struct WarpedImage {
  ImageTensor image;
  BinaryMask valid;
};

/// out(p) = image(H^-1 p), bilinear; pixels whose source falls outside the
/// image are zero and marked invalid.
inline WarpedImage apply_homography(const ImageTensor& image, const Homography& H) {
  const Homography inv = H.inverse();
  const int h = image.height(), w = image.width(), C = image.channels();
  WarpedImage out{ImageTensor(h, w, C), BinaryMask(h, w, 0)};
  constexpr double kEps = 1e-9;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double den = inv.denominator({double(x), double(y)});
      if (std::abs(den) < 1e-12) continue;
      const Point2 s = inv.apply({double(x), double(y)});
      if (s.x < -kEps || s.y < -kEps || s.x > w - 1 + kEps || s.y > h - 1 + kEps) continue;
      const auto tap = BilinearTap<double>::at(s.x, s.y, w, h);
      for (int c = 0; c < C; ++c) {
        auto px = [&](int yy, int xx) { return static_cast<double>(image.at(yy, xx, c)); };
        out.image.at(y, x, c) = static_cast<float>(tap.w00 * px(tap.y0, tap.x0) + tap.w01 * px(tap.y0, tap.x1) +
                                                   tap.w10 * px(tap.y1, tap.x0) + tap.w11 * px(tap.y1, tap.x1));
      }
      out.valid.at(y, x) = 1;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Valid-region cropping

struct Rect {
  int x = 0, y = 0, width = 0, height = 0;
  int area() const { return width * height; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

/// Largest axis-aligned rectangle of ones, by the row-histogram stack method.
/// Ties keep the first rectangle found in row-major scan order.
inline Rect largest_valid_rectangle(const BinaryMask& mask) {
  const int H = mask.height(), W = mask.width();
  std::vector<int> heights(W, 0);
  Rect best;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) heights[x] = mask.at(y, x) ? heights[x] + 1 : 0;
    std::vector<int> stack;
    for (int x = 0; x <= W; ++x) {
      const int cur = x < W ? heights[x] : 0;
      while (!stack.empty() && heights[stack.back()] >= cur) {
        const int hgt = heights[stack.back()];
        stack.pop_back();
        const int left = stack.empty() ? 0 : stack.back() + 1;
        const int width = x - left;
        if (hgt * width > best.area()) best = {left, y - hgt + 1, width, hgt};
      }
      stack.push_back(x);
    }
  }
  return best;
}

struct CroppedPair {
  ImageTensor a, b;
  Rect rect;
};

inline CroppedPair crop_valid(const ImageTensor& a, const ImageTensor& b, const BinaryMask& valid_a,
                              const BinaryMask& valid_b) {
  if (!a.same_geometry(b) || valid_a.height() != a.height() || valid_a.width() != a.width() ||
      valid_b.height() != a.height() || valid_b.width() != a.width()) {
    throw std::invalid_argument("crop_valid: images and masks must share one geometry");
  }
  BinaryMask both(a.height(), a.width(), 0);
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) both.at(y, x) = valid_a.at(y, x) && valid_b.at(y, x);
  const Rect r = largest_valid_rectangle(both);
  if (r.area() == 0) throw std::domain_error("crop_valid: masks have no common valid pixel");
  if (r.width < ImageTensor::kMinSide || r.height < ImageTensor::kMinSide) {
    throw std::domain_error("crop_valid: common valid rectangle " + std::to_string(r.width) + "x" +
                            std::to_string(r.height) + " is below the minimum image size");
  }
  return {a.crop(r.y, r.x, r.height, r.width), b.crop(r.y, r.x, r.height, r.width), r};
}

// ---------------------------------------------------------------------------
// Key-value persistence: nine row-major numbers h11 .. h33.

inline void put_homography(io::KeyValues& kv, const std::string& prefix, const Homography& H) {
  for (int i = 0; i < 9; ++i) kv[prefix + ".h" + std::to_string(i / 3 + 1) + std::to_string(i % 3 + 1)] = io::format_number(H.h[i]);
}

inline Homography get_homography(const io::KeyValues& kv, const std::string& prefix) {
  Homography H;
  for (int i = 0; i < 9; ++i) H.h[i] = std::stod(kv.at(prefix + ".h" + std::to_string(i / 3 + 1) + std::to_string(i % 3 + 1)));
  return H;
}

}  // namespace af::reg
