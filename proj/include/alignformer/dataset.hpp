// Synthetic non-aligned degraded/reference pairs with known ground truth,
// procedural base textures, patch cropping and scene persistence.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignformer/flow.hpp"
#include "alignformer/geometry.hpp"
#include "alignformer/image.hpp"
#include "alignformer/io.hpp"

namespace af::data {

// ---------------------------------------------------------------------------
// Warps

/// Smooth displacement field defined by a coarse control grid spanning the
/// output window, evaluated with Catmull-Rom bicubic interpolation.
struct ResidualField {
  int grid = 0;  // control points per side; 0 disables the field
  double width = 1, height = 1;
  std::vector<double> dx, dy;  // grid * grid, row-major

  bool active() const { return grid >= 2; }

  static ResidualField random(int grid, double amplitude, double width, double height, std::uint64_t seed) {
    ResidualField f;
    f.grid = grid;
    f.width = width;
    f.height = height;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-amplitude, amplitude);
    f.dx.resize(static_cast<std::size_t>(grid) * grid);
    f.dy.resize(f.dx.size());
    for (std::size_t i = 0; i < f.dx.size(); ++i) {
      f.dx[i] = u(rng);
      f.dy[i] = u(rng);
    }
    return f;
  }

  std::array<double, 2> operator()(double x, double y) const {
    if (!active()) return {0, 0};
    const double gx = x / std::max(1.0, width - 1) * (grid - 1);
    const double gy = y / std::max(1.0, height - 1) * (grid - 1);
    const int ix = static_cast<int>(std::floor(gx));
    const int iy = static_cast<int>(std::floor(gy));
    const double tx = gx - ix, ty = gy - iy;
    auto weights = [](double t) {
      const double t2 = t * t, t3 = t2 * t;
      return std::array<double, 4>{-0.5 * t3 + t2 - 0.5 * t, 1.5 * t3 - 2.5 * t2 + 1.0, -1.5 * t3 + 2.0 * t2 + 0.5 * t,
                                   0.5 * t3 - 0.5 * t2};
    };
    const auto wx = weights(tx), wy = weights(ty);
    std::array<double, 2> out{0, 0};
    for (int j = 0; j < 4; ++j) {
      const int yy = std::clamp(iy - 1 + j, 0, grid - 1);
      for (int i = 0; i < 4; ++i) {
        const int xx = std::clamp(ix - 1 + i, 0, grid - 1);
        const double w = wy[j] * wx[i];
        out[0] += w * dx[static_cast<std::size_t>(yy) * grid + xx];
        out[1] += w * dy[static_cast<std::size_t>(yy) * grid + xx];
      }
    }
    return out;
  }
};

/// Forward map from base (scene) coordinates to image coordinates, both
/// expressed in output-window pixels: f(b) = H(b) + r(H(b)).
struct ParametricWarp {
  Homography homography;
  ResidualField residual;

  static ParametricWarp identity() { return {}; }
  static ParametricWarp translation(double tx, double ty) { return {Homography::translation(tx, ty), {}}; }

  Point2 forward(const Point2& b) const {
    const Point2 u = homography.apply(b);
    const auto r = residual(u.x, u.y);
    return {u.x + r[0], u.y + r[1]};
  }

  /// Solves f(b) = p by fixed-point iteration on the residual, then inverts H.
  Point2 inverse(const Point2& p) const {
    Point2 u = p;
    if (residual.active()) {
      for (int it = 0; it < 100; ++it) {
        const auto r = residual(u.x, u.y);
        const Point2 next{p.x - r[0], p.y - r[1]};
        const double step = std::hypot(next.x - u.x, next.y - u.y);
        u = next;
        if (step < 1e-12) break;
      }
    }
    return homography.inverse().apply(u);
  }

  /// Checks invertibility on [0,W]x[0,H]: H non-singular with a positive
  /// projective denominator, and the residual a contraction (Jacobian norm < 1).
  void validate(int width, int height) const {
    if (std::abs(homography.determinant()) < 1e-9) throw std::invalid_argument("warp: singular homography");
    const Homography inv = homography.inverse();
    const Point2 corners[4] = {{0, 0}, {double(width), 0}, {0, double(height)}, {double(width), double(height)}};
    const double sign = inv.denominator(corners[0]);
    for (const auto& c : corners) {
      if (inv.denominator(c) * sign <= 0) throw std::invalid_argument("warp: homography folds the image domain");
    }
    if (!residual.active()) return;
    const double h = 0.5;
    for (double y = 0; y <= height; y += 1.0) {
      for (double x = 0; x <= width; x += 1.0) {
        const auto rx0 = residual(x - h, y), rx1 = residual(x + h, y);
        const auto ry0 = residual(x, y - h), ry1 = residual(x, y + h);
        const double j00 = (rx1[0] - rx0[0]) / (2 * h), j01 = (ry1[0] - ry0[0]) / (2 * h);
        const double j10 = (rx1[1] - rx0[1]) / (2 * h), j11 = (ry1[1] - ry0[1]) / (2 * h);
        if (std::sqrt(j00 * j00 + j01 * j01 + j10 * j10 + j11 * j11) >= 1.0) {
          throw std::invalid_argument("warp: residual field is not invertible on the image domain");
        }
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Degradation

struct DegradationSpec {
  int out_height = 64;
  int out_width = 64;
  double blur_sigma = 0.0;
  std::array<double, 9> color_matrix{1, 0, 0, 0, 1, 0, 0, 0, 1};
  double gamma_shift = 0.0;
  int flare_count = 0;
  double flare_intensity = 2.0;  // peak added radiance before clipping
  double flare_radius = 4.0;     // pixels
  double noise_sigma = 0.0;
  ParametricWarp warp_degraded;
  ParametricWarp warp_reference;
  int correspondence_step = 8;

  void validate() const {
    if (blur_sigma < 0) throw std::invalid_argument("DegradationSpec: blur_sigma must be >= 0");
    if (noise_sigma < 0) throw std::invalid_argument("DegradationSpec: noise_sigma must be >= 0");
    if (flare_count < 0) throw std::invalid_argument("DegradationSpec: flare_count must be >= 0");
    if (flare_count > 0 && flare_intensity < 1) throw std::invalid_argument("DegradationSpec: flare_intensity must be >= 1");
    if (out_height < ImageTensor::kMinSide || out_width < ImageTensor::kMinSide) {
      throw std::invalid_argument("DegradationSpec: output window too small");
    }
    if (correspondence_step < 1) throw std::invalid_argument("DegradationSpec: correspondence_step must be >= 1");
    warp_degraded.validate(out_width, out_height);
    warp_reference.validate(out_width, out_height);
  }
};

/// A degraded/reference pair; ground-truth fields are present for synthetic scenes.
struct ScenePair {
  ImageTensor degraded;
  ImageTensor reference;
  std::optional<ImageTensor> clean_degraded;  // degraded geometry before photometric degradation
  std::optional<FlowField> gt_flow;           // degraded -> reference
  std::optional<FlowField> gt_flow_backward;  // reference -> degraded
  std::optional<BinaryMask> gt_occlusion;     // 1 = visible in the reference
  std::optional<std::vector<Correspondence>> gt_correspondences;
  std::uint64_t seed = 0;

  friend bool operator==(const ScenePair&, const ScenePair&) = default;
};

namespace detail {

inline ImageTensor render(const ImageTensor& base, const ParametricWarp& warp, int out_h, int out_w) {
  const double ox = (base.width() - out_w) / 2.0;
  const double oy = (base.height() - out_h) / 2.0;
  ImageTensor out(out_h, out_w, base.channels());
  const int C = base.channels();
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const Point2 b = warp.inverse({double(x), double(y)});
      const double sx = b.x + ox, sy = b.y + oy;
      if (sx < 0 || sy < 0 || sx > base.width() - 1 || sy > base.height() - 1) {
        throw std::invalid_argument("generate_scene: base image too small for the warped output window");
      }
      const auto tap = BilinearTap<double>::at(sx, sy, base.width(), base.height());
      for (int c = 0; c < C; ++c) {
        out.at(y, x, c) = static_cast<float>(tap.w00 * base.at(tap.y0, tap.x0, c) + tap.w01 * base.at(tap.y0, tap.x1, c) +
                                             tap.w10 * base.at(tap.y1, tap.x0, c) + tap.w11 * base.at(tap.y1, tap.x1, c));
      }
    }
  }
  return out;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double s = 0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += k[i + radius];
  }
  for (double& v : k) v /= s;
  return k;
}

}  // namespace detail

/// Separable Gaussian blur with clamp-to-edge borders; sigma = 0 is the identity.
inline ImageTensor gaussian_blur(const ImageTensor& in, double sigma) {
  if (sigma <= 0) return in;
  const auto k = detail::gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int H = in.height(), W = in.width(), C = in.channels();
  ImageTensor tmp(H, W, C), out(H, W, C);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * in.at(y, std::clamp(x + i, 0, W - 1), c);
        tmp.at(y, x, c) = static_cast<float>(s);
      }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c) {
        double s = 0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.at(std::clamp(y + i, 0, H - 1), x, c);
        out.at(y, x, c) = static_cast<float>(s);
      }
  return out;
}

/// Renders both views, applies warp -> blur -> color -> flare -> noise -> clip
/// to the degraded view and derives ground-truth flow, occlusion and
/// correspondences. Pure in (spec, base, seed).
inline ScenePair generate_scene(const DegradationSpec& spec, const ImageTensor& base, std::uint64_t seed) {
  spec.validate();
  if (base.height() < spec.out_height || base.width() < spec.out_width) {
    throw std::invalid_argument("generate_scene: base image smaller than the output window");
  }
  const int H = spec.out_height, W = spec.out_width;
  ScenePair pair;
  pair.seed = seed;
  const ImageTensor geometry = detail::render(base, spec.warp_degraded, H, W);
  pair.reference = detail::render(base, spec.warp_reference, H, W);
  pair.clean_degraded = geometry;

  std::mt19937_64 rng(seed);
  ImageTensor d = gaussian_blur(geometry, spec.blur_sigma);
  const int C = d.channels();
  const bool identity_color = spec.color_matrix == std::array<double, 9>{1, 0, 0, 0, 1, 0, 0, 0, 1};
  if (C == 3 && !identity_color) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double r = d.at(y, x, 0), g = d.at(y, x, 1), b = d.at(y, x, 2);
        for (int c = 0; c < 3; ++c) {
          const auto* m = &spec.color_matrix[c * 3];
          d.at(y, x, c) = static_cast<float>(m[0] * r + m[1] * g + m[2] * b);
        }
      }
  }
  if (spec.gamma_shift != 0) {
    for (float& v : d.values()) v = static_cast<float>(std::pow(std::max(0.0f, v), 1.0 + spec.gamma_shift));
  }
  if (spec.flare_count > 0) {
    std::uniform_real_distribution<double> ux(0, W - 1), uy(0, H - 1);
    for (int f = 0; f < spec.flare_count; ++f) {
      const double cx = ux(rng), cy = uy(rng);
      const double two_r2 = 2 * spec.flare_radius * spec.flare_radius;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          const double add = spec.flare_intensity * std::exp(-d2 / two_r2);
          for (int c = 0; c < C; ++c) d.at(y, x, c) = static_cast<float>(d.at(y, x, c) + add);
        }
    }
  }
  if (spec.noise_sigma > 0) {
    std::normal_distribution<double> n(0.0, spec.noise_sigma);
    for (float& v : d.values()) v = static_cast<float>(v + n(rng));
  }
  for (float& v : d.values()) v = std::clamp(v, 0.0f, 1.0f);
  pair.degraded = std::move(d);

  FlowField fw(H, W), bw(H, W);
  BinaryMask occ(H, W, 0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const Point2 q = spec.warp_reference.forward(spec.warp_degraded.inverse({double(x), double(y)}));
      fw.u(y, x) = static_cast<float>(q.x - x);
      fw.v(y, x) = static_cast<float>(q.y - y);
      occ.at(y, x) = (q.x >= 0 && q.y >= 0 && q.x <= W - 1 && q.y <= H - 1) ? 1 : 0;
      const Point2 p = spec.warp_degraded.forward(spec.warp_reference.inverse({double(x), double(y)}));
      bw.u(y, x) = static_cast<float>(p.x - x);
      bw.v(y, x) = static_cast<float>(p.y - y);
    }
  }
  std::vector<Correspondence> corr;
  const int step = spec.correspondence_step;
  for (int y = step / 2; y < H; y += step) {
    for (int x = step / 2; x < W; x += step) {
      const Point2 q = spec.warp_reference.forward(spec.warp_degraded.inverse({double(x), double(y)}));
      if (q.x >= 0 && q.y >= 0 && q.x <= W - 1 && q.y <= H - 1) corr.push_back({{double(x), double(y)}, q});
    }
  }
  pair.gt_flow = std::move(fw);
  pair.gt_flow_backward = std::move(bw);
  pair.gt_occlusion = std::move(occ);
  pair.gt_correspondences = std::move(corr);
  return pair;
}

/// Tiles the pair into size x size patches at the given stride. Flow values are
/// unchanged; masks additionally mark positions whose reference match leaves
/// the patch; correspondences are rebased and kept when inside both patches.
inline std::vector<ScenePair> crop_patches(const ScenePair& pair, int size, int stride) {
  const int H = pair.degraded.height(), W = pair.degraded.width();
  if (size > H || size > W) throw std::invalid_argument("crop_patches: patch larger than image");
  if (size < ImageTensor::kMinSide) throw std::invalid_argument("crop_patches: patch smaller than 8");
  if (stride < 1) throw std::invalid_argument("crop_patches: stride must be >= 1");
  std::vector<ScenePair> out;
  for (int y0 = 0; y0 + size <= H; y0 += stride) {
    for (int x0 = 0; x0 + size <= W; x0 += stride) {
      ScenePair p;
      p.seed = pair.seed;
      p.degraded = pair.degraded.crop(y0, x0, size, size);
      p.reference = pair.reference.crop(y0, x0, size, size);
      if (pair.clean_degraded) p.clean_degraded = pair.clean_degraded->crop(y0, x0, size, size);
      if (pair.gt_flow) p.gt_flow = pair.gt_flow->crop(y0, x0, size, size);
      if (pair.gt_flow_backward) p.gt_flow_backward = pair.gt_flow_backward->crop(y0, x0, size, size);
      if (pair.gt_occlusion) {
        BinaryMask m = pair.gt_occlusion->crop(y0, x0, size, size);
        if (p.gt_flow) {
          for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
              const double qx = x + p.gt_flow->u(y, x), qy = y + p.gt_flow->v(y, x);
              if (qx < 0 || qy < 0 || qx > size - 1 || qy > size - 1) m.at(y, x) = 0;
            }
        }
        p.gt_occlusion = std::move(m);
      }
      if (pair.gt_correspondences) {
        std::vector<Correspondence> c;
        for (const auto& [a, b] : *pair.gt_correspondences) {
          const Point2 ra{a.x - x0, a.y - y0}, rb{b.x - x0, b.y - y0};
          auto inside = [size](const Point2& q) { return q.x >= 0 && q.y >= 0 && q.x <= size - 1 && q.y <= size - 1; };
          if (inside(ra) && inside(rb)) c.push_back({ra, rb});
        }
        p.gt_correspondences = std::move(c);
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Procedural bases

/// Deterministic colourful texture: smooth background, gratings, value noise
/// and a scatter of flat shapes with sharp edges.
inline ImageTensor procedural_texture(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  ImageTensor im(height, width, 3);
  double g0[3], gx[3], gy[3];
  for (int c = 0; c < 3; ++c) {
    g0[c] = 0.25 + 0.5 * u01(rng);
    gx[c] = (u01(rng) - 0.5) * 0.4;
    gy[c] = (u01(rng) - 0.5) * 0.4;
  }
  const double fx = 0.05 + 0.2 * u01(rng), fy = 0.05 + 0.2 * u01(rng), phase = 6.28 * u01(rng);
  // Value noise on a coarse lattice.
  const int lattice = 9;
  std::vector<double> noise(lattice * lattice * 3);
  for (double& v : noise) v = u01(rng) - 0.5;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double nx = static_cast<double>(x) / width, ny = static_cast<double>(y) / height;
      const double lx = nx * (lattice - 1), ly = ny * (lattice - 1);
      const int ix = std::min(static_cast<int>(lx), lattice - 2), iy = std::min(static_cast<int>(ly), lattice - 2);
      const double tx = lx - ix, ty = ly - iy;
      for (int c = 0; c < 3; ++c) {
        auto n = [&](int yy, int xx) { return noise[(yy * lattice + xx) * 3 + c]; };
        const double vn = (1 - ty) * ((1 - tx) * n(iy, ix) + tx * n(iy, ix + 1)) + ty * ((1 - tx) * n(iy + 1, ix) + tx * n(iy + 1, ix + 1));
        const double grating = 0.08 * std::sin(2 * 3.14159265358979 * (fx * x + fy * y) + phase + c);
        im.at(y, x, c) = static_cast<float>(g0[c] + gx[c] * (nx - 0.5) + gy[c] * (ny - 0.5) + 0.3 * vn + grating);
      }
    }
  }
  const int shapes = 12 + static_cast<int>(u01(rng) * 12) + (height * width) / 400;
  for (int s = 0; s < shapes; ++s) {
    const double cx = u01(rng) * width, cy = u01(rng) * height;
    const double rx = 2 + u01(rng) * width / 8.0, ry = 2 + u01(rng) * height / 8.0;
    const bool ellipse = u01(rng) < 0.5;
    double col[3];
    for (double& v : col) v = 0.05 + 0.9 * u01(rng);
    const int y0 = std::max(0, static_cast<int>(cy - ry)), y1 = std::min(height - 1, static_cast<int>(cy + ry));
    const int x0 = std::max(0, static_cast<int>(cx - rx)), x1 = std::min(width - 1, static_cast<int>(cx + rx));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (ellipse) {
          const double ex = (x - cx) / rx, ey = (y - cy) / ry;
          if (ex * ex + ey * ey > 1) continue;
        }
        for (int c = 0; c < 3; ++c) im.at(y, x, c) = static_cast<float>(col[c]);
      }
  }
  for (float& v : im.values()) v = std::clamp(v, 0.02f, 0.98f);
  return im;
}

/// Straight dark/bright edge through the image centre, tilted `degrees` from
/// vertical, point-sampled from an ideal step convolved with a Gaussian of
/// `blur_sigma` pixels (0 = ideal step).
inline ImageTensor slanted_edge_chart(int height, int width, double degrees, double low, double high, double blur_sigma,
                                      int channels = 3) {
  ImageTensor im(height, width, channels);
  const double t = degrees * 3.14159265358979323846 / 180.0;
  const double nx = std::cos(t), ny = -std::sin(t);  // unit normal of the edge
  const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double d = (x - cx) * nx + (y - cy) * ny;
      double e;
      if (blur_sigma > 0) {
        e = 0.5 * std::erfc(-d / (blur_sigma * std::sqrt(2.0)));
      } else {
        e = d > 0 ? 1.0 : (d < 0 ? 0.0 : 0.5);
      }
      for (int c = 0; c < channels; ++c) im.at(y, x, c) = static_cast<float>(low + (high - low) * e);
    }
  return im;
}

// ---------------------------------------------------------------------------
// Randomized desk-scale scene specs

struct SceneRandomization {
  int out_size = 64;
  int base_margin = 24;
  double max_rotation_deg = 2.0;
  double max_scale_delta = 0.03;
  double max_translation = 3.0;
  double max_perspective = 1e-4;
  double residual_amplitude = 4.0;
  int residual_grid = 4;
  double blur_min = 0.8, blur_max = 1.6;
  double gain_min = 0.55, gain_max = 0.9;
  double cross_talk = 0.06;
  double gamma_shift_max = 0.25;
  int flare_max = 2;
  double flare_intensity_min = 1.5, flare_intensity_max = 3.0;
  double noise_min = 0.005, noise_max = 0.02;
  bool geometry = true;     // false: identity warps
  bool photometric = true;  // false: no degradation at all
  bool color_only = false;  // true: only the colour matrix and gamma shift
};

inline DegradationSpec random_spec(const SceneRandomization& r, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> u(-1.0, 1.0), u01(0.0, 1.0);
  DegradationSpec s;
  s.out_height = r.out_size;
  s.out_width = r.out_size;
  const double c = (r.out_size - 1) / 2.0;
  if (r.geometry) {
    auto random_h = [&](double strength) {
      Homography h = Homography::similarity(strength * r.max_rotation_deg * u(rng), 1.0 + strength * r.max_scale_delta * u(rng),
                                            strength * r.max_translation * u(rng), strength * r.max_translation * u(rng), c, c);
      const Homography shift = Homography::translation(-c, -c), back = Homography::translation(c, c);
      Homography persp;
      persp.h[6] = strength * r.max_perspective * u(rng);
      persp.h[7] = strength * r.max_perspective * u(rng);
      return back.compose(persp.compose(shift)).compose(h).normalized();
    };
    s.warp_degraded.homography = random_h(0.3);
    s.warp_reference.homography = random_h(1.0);
    s.warp_reference.residual = ResidualField::random(r.residual_grid, r.residual_amplitude, r.out_size, r.out_size, rng());
  }
  if (r.photometric) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        s.color_matrix[i * 3 + j] =
            i == j ? r.gain_min + (r.gain_max - r.gain_min) * u01(rng) : r.cross_talk * u(rng);
      }
    s.gamma_shift = r.gamma_shift_max * u(rng);
    if (!r.color_only) {
      s.blur_sigma = r.blur_min + (r.blur_max - r.blur_min) * u01(rng);
      s.flare_count = static_cast<int>(u01(rng) * (r.flare_max + 1));
      s.flare_intensity = r.flare_intensity_min + (r.flare_intensity_max - r.flare_intensity_min) * u01(rng);
      s.flare_radius = 2.0 + 3.0 * u01(rng);
      s.noise_sigma = r.noise_min + (r.noise_max - r.noise_min) * u01(rng);
    }
  }
  return s;
}

/// One synthetic scene from the built-in texture generator.
inline ScenePair make_synthetic_scene(const SceneRandomization& r, std::uint64_t seed) {
  const int base_size = r.out_size + 2 * r.base_margin;
  const ImageTensor base = procedural_texture(base_size, base_size, seed * 7919 + 17);
  return generate_scene(random_spec(r, seed), base, seed);
}

// ---------------------------------------------------------------------------
// Persistence: one directory per scene.

inline void save_scene(const std::filesystem::path& dir, const ScenePair& p) {
  std::filesystem::create_directories(dir);
  io::save_image(dir / "degraded.png", p.degraded);
  io::save_image(dir / "reference.png", p.reference);
  if (p.clean_degraded) io::save_image(dir / "clean.png", *p.clean_degraded);
  if (p.gt_flow) write_flow(dir / "flow_fw.flo", *p.gt_flow);
  if (p.gt_flow_backward) write_flow(dir / "flow_bw.flo", *p.gt_flow_backward);
  if (p.gt_occlusion) io::save_mask(dir / "occlusion.png", *p.gt_occlusion);
  if (p.gt_correspondences) io::write_correspondences(dir / "correspondences.txt", *p.gt_correspondences);
  io::write_key_values(dir / "scene.txt", {{"seed", std::to_string(p.seed)}});
}

inline ScenePair load_scene(const std::filesystem::path& dir) {
  ScenePair p;
  p.degraded = io::load_image(dir / "degraded.png");
  p.reference = io::load_image(dir / "reference.png");
  if (!p.degraded.same_geometry(p.reference)) throw std::runtime_error("scene " + dir.string() + ": views differ in size");
  if (std::filesystem::exists(dir / "clean.png")) p.clean_degraded = io::load_image(dir / "clean.png");
  if (std::filesystem::exists(dir / "flow_fw.flo")) p.gt_flow = read_flow(dir / "flow_fw.flo");
  if (std::filesystem::exists(dir / "flow_bw.flo")) p.gt_flow_backward = read_flow(dir / "flow_bw.flo");
  if (std::filesystem::exists(dir / "occlusion.png")) p.gt_occlusion = io::load_mask(dir / "occlusion.png");
  if (std::filesystem::exists(dir / "correspondences.txt")) p.gt_correspondences = io::read_correspondences(dir / "correspondences.txt");
  if (std::filesystem::exists(dir / "scene.txt")) p.seed = std::stoull(io::read_key_values(dir / "scene.txt").at("seed"));
  return p;
}

}  // namespace af::data
