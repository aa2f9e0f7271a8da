// Evaluation: PCK (with a perturbation study), PSNR/SSIM, Lab colour
// distribution intersection and slanted-edge MTF.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "alignformer/dataset.hpp"
#include "alignformer/flow.hpp"
#include "alignformer/geometry.hpp"
#include "alignformer/image.hpp"
#include "alignformer/sampling.hpp"

namespace af::metrics {

// ---------------------------------------------------------------------------
// PCK

/// Percentage of pairs with |p_A - p_B| < alpha * max(H, W).
inline double pck(const std::vector<Correspondence>& pairs, double alpha, int height, int width) {
  if (pairs.empty()) throw std::invalid_argument("pck: empty correspondence set");
  if (alpha <= 0) throw std::invalid_argument("pck: alpha must be > 0");
  const double thresh = alpha * std::max(height, width);
  std::size_t ok = 0;
  for (const auto& [a, b] : pairs) ok += std::hypot(a.x - b.x, a.y - b.y) < thresh ? 1 : 0;
  return 100.0 * static_cast<double>(ok) / static_cast<double>(pairs.size());
}

inline double pck(const CorrespondenceSet& corr, double alpha, int height, int width) {
  return pck(corr.pairs, alpha, height, width);
}

/// Keypoint lattice shared with the synthetic correspondence generator.
inline std::vector<Point2> keypoint_grid(int height, int width, int step) {
  if (step < 1) throw std::invalid_argument("keypoint_grid: step must be >= 1");
  std::vector<Point2> pts;
  for (int y = step / 2; y < height; y += step)
    for (int x = step / 2; x < width; x += step) pts.push_back({double(x), double(y)});
  return pts;
}

/// Correspondences read directly off a dense field: (p, p + flow(p)) for grid
/// points whose target lies inside the image.
inline std::vector<Correspondence> correspondences_from_flow(const FlowField& flow, int step) {
  std::vector<Correspondence> out;
  const int H = flow.height(), W = flow.width();
  for (const Point2& p : keypoint_grid(H, W, step)) {
    const int x = static_cast<int>(p.x), y = static_cast<int>(p.y);
    const Point2 q{p.x + flow.u(y, x), p.y + flow.v(y, x)};
    if (q.x >= 0 && q.y >= 0 && q.x <= W - 1 && q.y <= H - 1) out.push_back({p, q});
  }
  return out;
}

// ---------------------------------------------------------------------------
// ZNCC block matcher: the desk stand-in for a learned keypoint matcher.

struct MatcherConfig {
  int step = 4;             // keypoint lattice spacing in image A
  int patch_radius = 4;     // (2r+1)^2 template
  int search_radius = 10;   // integer search window in image B
  double min_score = 0.7;   // ZNCC acceptance
  double min_std = 0.01;    // reject flat templates (luminance units)
  double min_corner = 3e-4; // smaller structure-tensor eigenvalue per pixel; rejects single edges
};

namespace detail {

struct Plane {
  int h = 0, w = 0;
  std::vector<double> v;
  double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

inline Plane luminance_plane(const ImageTensor& im) {
  return {im.height(), im.width(), luminance(im)};
}

}  // namespace detail

/// Matches grid keypoints of `a` into `b` by zero-mean normalized
/// cross-correlation with parabolic sub-pixel refinement.
inline CorrespondenceSet match_zncc(const ImageTensor& a, const ImageTensor& b, const MatcherConfig& cfg = {}) {
  if (!a.same_geometry(b)) throw std::invalid_argument("match_zncc: images differ in size");
  const detail::Plane A = detail::luminance_plane(a), B = detail::luminance_plane(b);
  const int H = A.h, W = A.w, r = cfg.patch_radius, n = (2 * r + 1) * (2 * r + 1);
  CorrespondenceSet out;
  out.source = CorrespondenceSource::kMatcher;
  std::vector<double> tmpl(n);
  const int S = cfg.search_radius;
  std::vector<double> score((2 * S + 1) * (2 * S + 1));
  for (const Point2& p : keypoint_grid(H, W, cfg.step)) {
    const int px = static_cast<int>(p.x), py = static_cast<int>(p.y);
    if (px < r || py < r || px + r >= W || py + r >= H) continue;
    double mean = 0;
    for (int dy = -r, k = 0; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx, ++k) mean += (tmpl[k] = A.at(py + dy, px + dx));
    mean /= n;
    double var = 0;
    for (double& t : tmpl) {
      t -= mean;
      var += t * t;
    }
    if (std::sqrt(var / n) < cfg.min_std) continue;
    if (cfg.min_corner > 0) {
      double sxx = 0, syy = 0, sxy = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const int x = std::clamp(px + dx, 1, W - 2), y = std::clamp(py + dy, 1, H - 2);
          const double gx = 0.5 * (A.at(y, x + 1) - A.at(y, x - 1)), gy = 0.5 * (A.at(y + 1, x) - A.at(y - 1, x));
          sxx += gx * gx;
          syy += gy * gy;
          sxy += gx * gy;
        }
      const double tr = 0.5 * (sxx + syy), det = sxx * syy - sxy * sxy;
      const double lmin = tr - std::sqrt(std::max(0.0, tr * tr - det));
      if (lmin / n < cfg.min_corner) continue;
    }
    const double tnorm = std::sqrt(var);
    double best = -2;
    int bx = 0, by = 0;
    std::fill(score.begin(), score.end(), -2.0);
    for (int sy = -S; sy <= S; ++sy)
      for (int sx = -S; sx <= S; ++sx) {
        const int cx = px + sx, cy = py + sy;
        if (cx < r || cy < r || cx + r >= W || cy + r >= H) continue;
        double bm = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) bm += B.at(cy + dy, cx + dx);
        bm /= n;
        double dot = 0, bv = 0;
        for (int dy = -r, k = 0; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx, ++k) {
            const double d = B.at(cy + dy, cx + dx) - bm;
            dot += tmpl[k] * d;
            bv += d * d;
          }
        const double s = bv > 0 ? dot / (tnorm * std::sqrt(bv)) : -1.0;
        score[(sy + S) * (2 * S + 1) + (sx + S)] = s;
        if (s > best) {
          best = s;
          bx = sx;
          by = sy;
        }
      }
    if (best < cfg.min_score) continue;
    // Sub-pixel: ZNCC against bilinearly resampled patches on a 0.05 px lattice.
    auto zncc_at = [&](double ox, double oy) {
      double bm = 0;
      std::vector<double> patch(n);
      for (int dy = -r, k = 0; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx, ++k) {
          const auto tap = BilinearTap<double>::at(px + bx + ox + dx, py + by + oy + dy, W, H);
          bm += (patch[k] = tap.sample(B.v.data(), W));
        }
      bm /= n;
      double dot = 0, bv = 0;
      for (int k = 0; k < n; ++k) {
        const double d = patch[k] - bm;
        dot += tmpl[k] * d;
        bv += d * d;
      }
      return bv > 0 ? dot / (tnorm * std::sqrt(bv)) : -1.0;
    };
    double sx = 0, sy = 0, sbest = best;
    for (double step : {0.25, 0.05}) {
      const double cx0 = sx, cy0 = sy;
      for (int iy = -4; iy <= 4; ++iy)
        for (int ix = -4; ix <= 4; ++ix) {
          const double ox = cx0 + ix * step, oy = cy0 + iy * step;
          const double v = zncc_at(ox, oy);
          if (v > sbest) {
            sbest = v;
            sx = ox;
            sy = oy;
          }
        }
    }
    out.pairs.push_back({p, {px + bx + sx, py + by + sy}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Perturbation study

namespace detail {

/// Mirror a coordinate into [0, n-1].
inline double reflect(double x, int n) {
  if (n <= 1) return 0;
  const double period = 2.0 * (n - 1);
  double m = std::fmod(std::abs(x), period);
  return m > n - 1 ? period - m : m;
}

}  // namespace detail

/// Rewrites a field so every target p + flow(p) is mirrored into the image.
/// Under unbounded noise the targets become uniform over the image instead of
/// piling up on the border.
inline FlowField fold_flow(const FlowField& flow) {
  FlowField out = flow;
  const int H = flow.height(), W = flow.width();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      out.u(y, x) = static_cast<float>(detail::reflect(x + static_cast<double>(flow.u(y, x)), W) - x);
      out.v(y, x) = static_cast<float>(detail::reflect(y + static_cast<double>(flow.v(y, x)), H) - y);
    }
  return out;
}

enum class PckRoute { kOracle, kMatcher };

struct PerturbationTable {
  std::vector<double> sigmas;
  std::vector<double> alphas;
  std::vector<std::vector<double>> pck;  // [sigma][alpha], averaged over images
  std::vector<double> random_baseline;   // [alpha]: uniform-displacement Monte-Carlo limit
};

struct PerturbationOptions {
  PckRoute route = PckRoute::kOracle;
  int keypoint_step = 8;
  int monte_carlo_samples = 20000;  // per image
  MatcherConfig matcher;
};

namespace detail {

/// Displacements of grid keypoints after warping the reference with `flow`:
/// the pixel at p shows reference content from q = p + flow(p), which lives at
/// q + backward(q) in the degraded view.
inline std::vector<Correspondence> tracked_pairs(const FlowField& flow, const FlowField& backward,
                                                 const std::vector<Point2>& keypoints) {
  std::vector<Correspondence> out;
  out.reserve(keypoints.size());
  for (const Point2& p : keypoints) {
    const int x = static_cast<int>(p.x), y = static_cast<int>(p.y);
    const Point2 q{p.x + flow.u(y, x), p.y + flow.v(y, x)};
    const auto b = backward.sample(q.x, q.y);
    out.push_back({p, {q.x + b[0], q.y + b[1]}});
  }
  return out;
}

}  // namespace detail

/// Degraded -> reference flow for a scene from a per-scene provider of `kind`.
inline FlowField scene_flow(const data::ScenePair& s, FlowKind kind) {
  switch (kind) {
    case FlowKind::kOracle:
      return estimate_flow(OracleFlowProvider(s.gt_flow), s.degraded, s.reference);
    case FlowKind::kZero:
      return estimate_flow(ZeroFlowProvider(), s.degraded, s.reference);
    case FlowKind::kExternal:
      break;
  }
  throw std::invalid_argument("scene_flow: external flow needs a file per scene");
}

/// PCK of the flow-warped reference against the degraded view, for each noise
/// level sigma added to the estimated flow. Scenes need the backward oracle
/// (oracle route) or a clean degraded view (matcher route).
inline PerturbationTable perturbation_study(const std::vector<data::ScenePair>& scenes, const std::vector<double>& sigmas,
                                            const std::vector<double>& alphas, FlowKind provider, std::uint64_t seed,
                                            const PerturbationOptions& opt = {}) {
  if (scenes.empty()) throw std::invalid_argument("perturbation_study: no scenes");
  PerturbationTable t{sigmas, alphas, std::vector<std::vector<double>>(sigmas.size(), std::vector<double>(alphas.size(), 0)),
                      std::vector<double>(alphas.size(), 0)};
  for (std::size_t n = 0; n < scenes.size(); ++n) {
    const data::ScenePair& s = scenes[n];
    const int H = s.degraded.height(), W = s.degraded.width();
    const FlowField flow = scene_flow(s, provider);
    const std::uint64_t image_seed = seed * 0x100000001b3ull + n;

    std::vector<Point2> keypoints;
    if (opt.route == PckRoute::kOracle) {
      if (!s.gt_flow_backward) throw std::invalid_argument("perturbation_study: oracle route needs a backward field");
      for (const auto& [p, q] : correspondences_from_flow(flow, opt.keypoint_step)) keypoints.push_back(p);
      if (keypoints.empty()) throw std::runtime_error("perturbation_study: no visible keypoints");
    } else if (!s.clean_degraded) {
      throw std::invalid_argument("perturbation_study: matcher route needs the clean degraded view");
    }

    for (std::size_t i = 0; i < sigmas.size(); ++i) {
      const FlowField f = fold_flow(perturb_flow(flow, sigmas[i], image_seed));
      std::vector<Correspondence> pairs;
      if (opt.route == PckRoute::kOracle) {
        pairs = detail::tracked_pairs(f, *s.gt_flow_backward, keypoints);
      } else {
        pairs = match_zncc(warp_image(s.reference, f), *s.clean_degraded, opt.matcher).pairs;
      }
      for (std::size_t j = 0; j < alphas.size(); ++j) {
        t.pck[i][j] += pairs.empty() ? 0.0 : pck(pairs, alphas[j], H, W) / scenes.size();
      }
    }

    if (opt.route == PckRoute::kOracle && opt.monte_carlo_samples > 0) {
      std::mt19937_64 rng(image_seed ^ 0xa5a5a5a5ull);
      std::uniform_real_distribution<double> ux(0, W - 1), uy(0, H - 1);
      std::vector<Correspondence> pairs;
      for (int k = 0; k < opt.monte_carlo_samples; ++k) {
        const Point2& p = keypoints[k % keypoints.size()];
        const Point2 q{ux(rng), uy(rng)};
        const auto b = s.gt_flow_backward->sample(q.x, q.y);
        pairs.push_back({p, {q.x + b[0], q.y + b[1]}});
      }
      for (std::size_t j = 0; j < alphas.size(); ++j) t.random_baseline[j] += pck(pairs, alphas[j], H, W) / scenes.size();
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// PSNR / SSIM

inline constexpr double kPsnrCap = 99.0;

inline void require_same(const ImageTensor& a, const ImageTensor& b, const char* what) {
  if (!a.same_geometry(b) || a.channels() != b.channels()) {
    throw std::invalid_argument(std::string(what) + ": images differ in shape");
  }
}

/// Peak 1.0; identical images report kPsnrCap.
inline double psnr(const ImageTensor& a, const ImageTensor& b) {
  require_same(a, b, "psnr");
  double se = 0;
  const auto& va = a.values();
  const auto& vb = b.values();
  for (std::size_t i = 0; i < va.size(); ++i) {
    const double d = static_cast<double>(va[i]) - vb[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(va.size());
  if (mse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

/// Mean SSIM over channels: 11-tap Gaussian window (sigma 1.5), K1 0.01,
/// K2 0.03, dynamic range 1, valid region only.
inline double ssim(const ImageTensor& a, const ImageTensor& b) {
  require_same(a, b, "ssim");
  constexpr int kTaps = 11;
  const int H = a.height(), W = a.width(), C = a.channels();
  if (H < kTaps || W < kTaps) throw std::invalid_argument("ssim: images must be at least 11x11");
  std::array<double, kTaps> g{};
  double gs = 0;
  for (int i = 0; i < kTaps; ++i) gs += (g[i] = std::exp(-(i - 5) * (i - 5) / (2 * 1.5 * 1.5)));
  for (double& v : g) v /= gs;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const int oh = H - kTaps + 1, ow = W - kTaps + 1;

  double total = 0;
  for (int c = 0; c < C; ++c) {
    // Separable filtering of x, y, x^2, y^2, xy: rows first, then columns.
    std::array<std::vector<double>, 5> rows;
    for (auto& r : rows) r.assign(static_cast<std::size_t>(H) * ow, 0);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < ow; ++x) {
        std::array<double, 5> acc{};
        for (int k = 0; k < kTaps; ++k) {
          const double va = a.at(y, x + k, c), vb = b.at(y, x + k, c);
          acc[0] += g[k] * va;
          acc[1] += g[k] * vb;
          acc[2] += g[k] * va * va;
          acc[3] += g[k] * vb * vb;
          acc[4] += g[k] * va * vb;
        }
        for (int m = 0; m < 5; ++m) rows[m][static_cast<std::size_t>(y) * ow + x] = acc[m];
      }
    double sum = 0;
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        std::array<double, 5> s{};
        for (int k = 0; k < kTaps; ++k)
          for (int m = 0; m < 5; ++m) s[m] += g[k] * rows[m][static_cast<std::size_t>(y + k) * ow + x];
        const double mx = s[0], my = s[1];
        const double vx = s[2] - mx * mx, vy = s[3] - my * my, cxy = s[4] - mx * my;
        sum += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    total += sum / (static_cast<double>(oh) * ow);
  }
  return total / C;
}

// ---------------------------------------------------------------------------
// Colour distribution

struct Lab {
  double l = 0, a = 0, b = 0;
};

/// Linear sRGB -> XYZ -> CIE Lab, D65 white.
inline Lab linear_srgb_to_lab(double r, double g, double b) {
  const double X = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
  const double Y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double Z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
  constexpr double xn = 0.95047, yn = 1.0, zn = 1.08883;
  auto f = [](double t) {
    constexpr double d = 6.0 / 29.0;
    return t > d * d * d ? std::cbrt(t) : t / (3 * d * d) + 4.0 / 29.0;
  };
  const double fx = f(X / xn), fy = f(Y / yn), fz = f(Z / zn);
  return {116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)};
}

struct ColorDistribution {
  double l = 0, a = 0, b = 0;
};

inline constexpr int kColorBins = 64;

/// Per-channel intersection of normalized Lab marginal histograms, each in [0, 1].
/// Bin ranges: L in [0, 100], a and b in [-128, 128].
inline ColorDistribution color_distribution(const ImageTensor& x, const ImageTensor& y, int bins = kColorBins) {
  if (x.channels() != 3 || y.channels() != 3) throw std::invalid_argument("color_distribution: RGB images required");
  if (bins < 1) throw std::invalid_argument("color_distribution: bins must be >= 1");
  auto histograms = [bins](const ImageTensor& im) {
    std::array<std::vector<double>, 3> h;
    for (auto& v : h) v.assign(bins, 0);
    const std::array<double, 3> lo{0, -128, -128}, hi{100, 128, 128};
    const std::size_t n = static_cast<std::size_t>(im.height()) * im.width();
    for (int yy = 0; yy < im.height(); ++yy)
      for (int xx = 0; xx < im.width(); ++xx) {
        auto clip = [](float v) { return std::clamp(static_cast<double>(v), 0.0, 1.0); };
        const Lab lab = linear_srgb_to_lab(clip(im.at(yy, xx, 0)), clip(im.at(yy, xx, 1)), clip(im.at(yy, xx, 2)));
        const std::array<double, 3> v{lab.l, lab.a, lab.b};
        for (int c = 0; c < 3; ++c) {
          const int k = static_cast<int>(std::floor((v[c] - lo[c]) / (hi[c] - lo[c]) * bins));
          h[c][std::clamp(k, 0, bins - 1)] += 1.0 / static_cast<double>(n);
        }
      }
    return h;
  };
  const auto hx = histograms(x), hy = histograms(y);
  std::array<double, 3> out{};
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < bins; ++k) out[c] += std::min(hx[c][k], hy[c][k]);
  return {out[0], out[1], out[2]};
}

// ---------------------------------------------------------------------------
// Slanted-edge MTF

enum class EdgeOrientation { kAuto, kVertical, kHorizontal };

struct MtfCurve {
  std::vector<double> frequencies;  // cycles/pixel, ascending from 0
  std::vector<double> modulation;   // modulation[0] == 1
  double mtf50 = 0, mtf20 = 0;      // cycles/pixel
  double mtf50_lwph = 0, mtf20_lwph = 0;
  double edge_angle_deg = 0;        // measured tilt from the nominal axis
};

struct MtfOptions {
  EdgeOrientation orientation = EdgeOrientation::kAuto;
  int oversampling = 4;
  double min_tilt_deg = 2.0, max_tilt_deg = 10.0;
  double max_frequency = 1.0;        // cycles/pixel reported
  double frequency_step = 0.002;
  int picture_height = 0;            // for LW/PH; 0 uses the ROI height
};

namespace detail {

/// Frequency where `m` first falls to `level`, linearly interpolated; the last
/// frequency when it never does.
inline double crossing(const std::vector<double>& f, const std::vector<double>& m, double level) {
  for (std::size_t i = 1; i < m.size(); ++i) {
    if (m[i] <= level) {
      const double t = (m[i - 1] - level) / (m[i - 1] - m[i]);
      return f[i - 1] + t * (f[i] - f[i - 1]);
    }
  }
  return f.back();
}

}  // namespace detail

/// Slanted-edge MTF of a region holding one near-vertical or near-horizontal
/// edge tilted 2-10 degrees.
inline MtfCurve mtf_slanted_edge(const ImageTensor& roi, const MtfOptions& opt = {}) {
  const std::vector<double> lum = luminance(roi);
  int H = roi.height(), W = roi.width();
  EdgeOrientation orient = opt.orientation;
  auto pix = [&](int y, int x) { return lum[static_cast<std::size_t>(y) * roi.width() + x]; };
  if (orient == EdgeOrientation::kAuto) {
    double gx = 0, gy = 0;
    for (int y = 0; y + 1 < H; ++y)
      for (int x = 0; x + 1 < W; ++x) {
        gx += std::abs(pix(y, x + 1) - pix(y, x));
        gy += std::abs(pix(y + 1, x) - pix(y, x));
      }
    orient = gx >= gy ? EdgeOrientation::kVertical : EdgeOrientation::kHorizontal;
  }
  // Work in a frame where the edge is near-vertical: rows run along the edge.
  const bool transpose = orient == EdgeOrientation::kHorizontal;
  if (transpose) std::swap(H, W);
  auto px = [&](int r, int c) { return transpose ? pix(c, r) : pix(r, c); };

  // Per-row centroid of the absolute derivative, then a least-squares line c = a + b r.
  auto fit = [&](const double* prev_a, const double* prev_b, double half) {
    std::vector<double> rs, cs;
    for (int r = 0; r < H; ++r) {
      double s = 0, sc = 0;
      for (int c = 1; c + 1 < W; ++c) {
        if (prev_a && std::abs(c - (*prev_a + *prev_b * r)) > half) continue;
        const double d = std::abs(px(r, c + 1) - px(r, c - 1));
        s += d;
        sc += d * c;
      }
      if (s > 1e-9) {
        rs.push_back(r);
        cs.push_back(sc / s);
      }
    }
    if (rs.size() < 4) throw std::invalid_argument("mtf_slanted_edge: no detectable edge");
    Eigen::MatrixXd A(rs.size(), 2);
    Eigen::VectorXd y(rs.size());
    for (std::size_t i = 0; i < rs.size(); ++i) {
      A(i, 0) = 1;
      A(i, 1) = rs[i];
      y(i) = cs[i];
    }
    Eigen::Vector2d sol = A.colPivHouseholderQr().solve(y);
    return std::pair<double, double>{sol(0), sol(1)};
  };
  double contrast = 0;
  {
    double lo = std::numeric_limits<double>::max(), hi = std::numeric_limits<double>::lowest();
    for (double v : lum) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    contrast = hi - lo;
  }
  if (contrast < 1e-3) throw std::invalid_argument("mtf_slanted_edge: no detectable edge");
  auto [a, b] = fit(nullptr, nullptr, 0);
  const double half = std::max(8.0, W / 4.0);
  std::tie(a, b) = fit(&a, &b, half);
  const double tilt = std::atan(std::abs(b)) * 180.0 / std::numbers::pi;
  if (tilt < opt.min_tilt_deg || tilt > opt.max_tilt_deg) {
    throw std::invalid_argument("mtf_slanted_edge: edge tilt " + std::to_string(tilt) + " deg outside [" +
                                std::to_string(opt.min_tilt_deg) + ", " + std::to_string(opt.max_tilt_deg) + "]");
  }

  // Oversampled edge-spread function over perpendicular distance.
  const double norm = std::sqrt(1 + b * b);
  const int os = opt.oversampling;
  double reach = std::numeric_limits<double>::max();
  for (int r : {0, H - 1}) {
    const double c0 = a + b * r;
    reach = std::min({reach, c0 / norm, (W - 1 - c0) / norm});
  }
  const int half_bins = static_cast<int>(std::floor(reach * os)) - 1;
  if (half_bins < 4 * os) throw std::invalid_argument("mtf_slanted_edge: edge too close to the ROI border");
  const int nb = 2 * half_bins;
  std::vector<double> sum(nb, 0), count(nb, 0);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const double d = (c - (a + b * r)) / norm;
      const int k = static_cast<int>(std::floor(d * os)) + half_bins;
      if (k < 0 || k >= nb) continue;
      sum[k] += px(r, c);
      count[k] += 1;
    }
  std::vector<double> esf(nb);
  for (int k = 0; k < nb; ++k) esf[k] = count[k] > 0 ? sum[k] / count[k] : std::numeric_limits<double>::quiet_NaN();
  for (int k = 0; k < nb; ++k) {
    if (!std::isnan(esf[k])) continue;
    int l = k - 1, rr = k + 1;
    while (l >= 0 && std::isnan(esf[l])) --l;
    while (rr < nb && std::isnan(esf[rr])) ++rr;
    if (l < 0 && rr >= nb) throw std::invalid_argument("mtf_slanted_edge: empty edge profile");
    if (l < 0) esf[k] = esf[rr];
    else if (rr >= nb) esf[k] = esf[l];
    else esf[k] = esf[l] + (esf[rr] - esf[l]) * (k - l) / double(rr - l);
  }

  // LSF by central difference, Hamming-windowed about its centroid.
  std::vector<double> lsf(nb, 0);
  for (int k = 1; k + 1 < nb; ++k) lsf[k] = 0.5 * (esf[k + 1] - esf[k - 1]);
  double s = 0, sk = 0;
  for (int k = 0; k < nb; ++k) {
    s += std::abs(lsf[k]);
    sk += std::abs(lsf[k]) * k;
  }
  if (s < 1e-12) throw std::invalid_argument("mtf_slanted_edge: flat edge profile");
  const double centre = sk / s;
  const double span = std::min(centre, nb - 1 - centre);
  for (int k = 0; k < nb; ++k) {
    const double t = (k - centre) / span;
    lsf[k] *= std::abs(t) <= 1 ? 0.54 + 0.46 * std::cos(std::numbers::pi * t) : 0.0;
  }

  MtfCurve m;
  const double dx = 1.0 / os;
  double dc = 0;
  for (double v : lsf) dc += v;
  if (std::abs(dc) < 1e-12) throw std::invalid_argument("mtf_slanted_edge: degenerate line-spread function");
  for (double f = 0; f <= opt.max_frequency + 1e-12; f += opt.frequency_step) {
    double re = 0, im = 0;
    for (int k = 0; k < nb; ++k) {
      const double ph = -2 * std::numbers::pi * f * (k - centre) * dx;
      re += lsf[k] * std::cos(ph);
      im += lsf[k] * std::sin(ph);
    }
    double v = std::hypot(re, im) / std::abs(dc);
    // Undo the central-difference response sin(2 pi f dx) / (2 pi f dx).
    const double w = 2 * std::numbers::pi * f * dx;
    if (w > 1e-9 && w < std::numbers::pi / 2) v /= std::sin(w) / w;
    m.frequencies.push_back(f);
    m.modulation.push_back(v);
  }
  m.modulation[0] = 1.0;
  m.mtf50 = detail::crossing(m.frequencies, m.modulation, 0.5);
  m.mtf20 = detail::crossing(m.frequencies, m.modulation, 0.2);
  const int ph = opt.picture_height > 0 ? opt.picture_height : roi.height();
  m.mtf50_lwph = 2.0 * ph * m.mtf50;
  m.mtf20_lwph = 2.0 * ph * m.mtf20;
  m.edge_angle_deg = tilt;
  return m;
}

/// Closed-form MTF50 of a Gaussian edge blur: sqrt(ln 2 / (2 pi^2 sigma^2)).
inline double gaussian_mtf50(double sigma) {
  return std::sqrt(std::log(2.0) / (2 * std::numbers::pi * std::numbers::pi * sigma * sigma));
}

}  // namespace af::metrics
