// Dense flow fields, flow providers, warping, forward-backward occlusion
// masks and flow perturbation.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignformer/image.hpp"
#include "alignformer/sampling.hpp"
#include "alignformer/tensor.hpp"

namespace af {

/// H x W x 2 offsets in pixels: u horizontal, v vertical. Maps a position p in
/// the source image to p + (u, v) in the destination image.
class FlowField {
 public:
  FlowField() = default;
  FlowField(int height, int width, float u = 0.0f, float v = 0.0f)
      : h_(height), w_(width), data_(static_cast<std::size_t>(height) * width * 2) {
    if (height < 1 || width < 1) throw std::invalid_argument("FlowField: empty dimensions");
    for (std::size_t i = 0; i < data_.size(); i += 2) {
      data_[i] = u;
      data_[i + 1] = v;
    }
  }

  int height() const { return h_; }
  int width() const { return w_; }
  bool empty() const { return data_.empty(); }

  float& u(int y, int x) { return data_[(static_cast<std::size_t>(y) * w_ + x) * 2]; }
  float& v(int y, int x) { return data_[(static_cast<std::size_t>(y) * w_ + x) * 2 + 1]; }
  float u(int y, int x) const { return data_[(static_cast<std::size_t>(y) * w_ + x) * 2]; }
  float v(int y, int x) const { return data_[(static_cast<std::size_t>(y) * w_ + x) * 2 + 1]; }

  std::vector<float>& values() { return data_; }
  const std::vector<float>& values() const { return data_; }

  bool all_finite() const {
    for (float f : data_) {
      if (!std::isfinite(f)) return false;
    }
    return true;
  }

  /// Bilinear sample of (u, v) at a real position, clamped to the field.
  std::array<double, 2> sample(double x, double y) const {
    const auto tap = BilinearTap<double>::at(x, y, w_, h_);
    auto get = [&](int yy, int xx, int k) { return static_cast<double>(data_[(static_cast<std::size_t>(yy) * w_ + xx) * 2 + k]); };
    std::array<double, 2> out{};
    for (int k = 0; k < 2; ++k) {
      out[k] = tap.w00 * get(tap.y0, tap.x0, k) + tap.w01 * get(tap.y0, tap.x1, k) +
               tap.w10 * get(tap.y1, tap.x0, k) + tap.w11 * get(tap.y1, tap.x1, k);
    }
    return out;
  }

  FlowField crop(int y0, int x0, int height, int width) const {
    FlowField out(height, width);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        out.u(y, x) = u(y0 + y, x0 + x);
        out.v(y, x) = v(y0 + y, x0 + x);
      }
    return out;
  }

  FlowField scaled(float s) const {
    FlowField out = *this;
    for (float& f : out.data_) f *= s;
    return out;
  }

  friend bool operator==(const FlowField& a, const FlowField& b) {
    return a.h_ == b.h_ && a.w_ == b.w_ && a.data_ == b.data_;
  }

 private:
  int h_ = 0, w_ = 0;
  std::vector<float> data_;
};

/// Flow planes as an [N, 2, H, W] tensor for attention sampling.
template <typename T>
Tensor<T> flow_tensor(const std::vector<const FlowField*>& flows) {
  const FlowField& f0 = *flows.front();
  Tensor<T> t(static_cast<int>(flows.size()), 2, f0.height(), f0.width());
  for (std::size_t n = 0; n < flows.size(); ++n) {
    const FlowField& f = *flows[n];
    if (f.height() != f0.height() || f.width() != f0.width()) throw std::invalid_argument("flow_tensor: size mismatch");
    for (int y = 0; y < f.height(); ++y)
      for (int x = 0; x < f.width(); ++x) {
        t(static_cast<int>(n), 0, y, x) = static_cast<T>(f.u(y, x));
        t(static_cast<int>(n), 1, y, x) = static_cast<T>(f.v(y, x));
      }
  }
  return t;
}

// ---------------------------------------------------------------------------
// AFFLOW01 file format: 8-byte magic, u32 H, u32 W, then H*W*2 little-endian
// float32 values row-major with u before v.

namespace detail {
inline bool host_is_little_endian() {
  const std::uint16_t probe = 1;
  std::uint8_t first;
  std::memcpy(&first, &probe, 1);
  return first == 1;
}

template <typename U>
void write_le(std::ostream& os, U value) {
  std::array<char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(U));
  if (!host_is_little_endian()) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), sizeof(U));
}

template <typename U>
U read_le(std::istream& is) {
  std::array<char, sizeof(U)> bytes;
  if (!is.read(bytes.data(), sizeof(U))) throw std::runtime_error("unexpected end of file");
  if (!host_is_little_endian()) std::reverse(bytes.begin(), bytes.end());
  U value;
  std::memcpy(&value, bytes.data(), sizeof(U));
  return value;
}
}  // namespace detail

inline constexpr char kFlowMagic[8] = {'A', 'F', 'F', 'L', 'O', 'W', '0', '1'};

inline void write_flow(const std::filesystem::path& path, const FlowField& flow) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open flow file for writing: " + path.string());
  os.write(kFlowMagic, 8);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(flow.height()));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(flow.width()));
  for (float f : flow.values()) detail::write_le<float>(os, f);
  if (!os) throw std::runtime_error("failed writing flow file: " + path.string());
}

inline FlowField read_flow(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open flow file: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kFlowMagic, 8) != 0) {
    throw std::runtime_error("not an AFFLOW01 file: " + path.string());
  }
  const auto h = detail::read_le<std::uint32_t>(is);
  const auto w = detail::read_le<std::uint32_t>(is);
  if (h == 0 || w == 0 || h > 65536 || w > 65536) throw std::runtime_error("implausible flow dimensions in " + path.string());
  FlowField flow(static_cast<int>(h), static_cast<int>(w));
  for (float& f : flow.values()) f = detail::read_le<float>(is);
  return flow;
}

// ---------------------------------------------------------------------------
// Providers

enum class FlowKind { kOracle, kZero, kExternal };

inline std::string to_string(FlowKind k) {
  switch (k) {
    case FlowKind::kOracle: return "oracle";
    case FlowKind::kZero: return "zero";
    case FlowKind::kExternal: return "external";
  }
  return "unknown";
}

inline FlowKind parse_flow_kind(const std::string& s) {
  if (s == "oracle") return FlowKind::kOracle;
  if (s == "zero") return FlowKind::kZero;
  if (s == "external") return FlowKind::kExternal;
  throw std::invalid_argument("unknown flow provider: " + s);
}

/// Estimates the flow that maps src positions to dst positions.
class FlowProvider {
 public:
  virtual ~FlowProvider() = default;
  virtual FlowKind kind() const = 0;
  virtual FlowField estimate(const ImageTensor& src, const ImageTensor& dst) const = 0;
};

class ZeroFlowProvider final : public FlowProvider {
 public:
  FlowKind kind() const override { return FlowKind::kZero; }
  FlowField estimate(const ImageTensor& src, const ImageTensor&) const override {
    return FlowField(src.height(), src.width());
  }
};

/// Returns a stored ground-truth field for one (src, dst) ordering.
class OracleFlowProvider final : public FlowProvider {
 public:
  explicit OracleFlowProvider(std::optional<FlowField> field) {
    if (!field || field->empty()) throw std::invalid_argument("oracle flow requested but no ground-truth flow is available");
    field_ = std::move(*field);
  }
  FlowKind kind() const override { return FlowKind::kOracle; }
  FlowField estimate(const ImageTensor& src, const ImageTensor&) const override {
    if (src.height() != field_.height() || src.width() != field_.width()) {
      throw std::invalid_argument("oracle flow does not match source dimensions");
    }
    return field_;
  }

 private:
  FlowField field_;
};

/// Reads a precomputed AFFLOW01 file written by an external estimator.
class ExternalFlowProvider final : public FlowProvider {
 public:
  explicit ExternalFlowProvider(std::filesystem::path path) : path_(std::move(path)) {}
  FlowKind kind() const override { return FlowKind::kExternal; }
  FlowField estimate(const ImageTensor& src, const ImageTensor&) const override {
    if (!std::filesystem::exists(path_)) throw std::runtime_error("external flow file missing: " + path_.string());
    FlowField f = read_flow(path_);
    if (f.height() != src.height() || f.width() != src.width()) {
      throw std::runtime_error("external flow " + path_.string() + " has shape " + std::to_string(f.height()) + "x" +
                               std::to_string(f.width()) + ", expected " + std::to_string(src.height()) + "x" +
                               std::to_string(src.width()));
    }
    return f;
  }

 private:
  std::filesystem::path path_;
};

inline FlowField estimate_flow(const FlowProvider& provider, const ImageTensor& src, const ImageTensor& dst) {
  if (!src.same_geometry(dst)) throw std::invalid_argument("estimate_flow: src and dst differ in size");
  FlowField f = provider.estimate(src, dst);
  if (f.height() != src.height() || f.width() != src.width()) {
    throw std::runtime_error("flow provider returned a field of the wrong size");
  }
  return f;
}

// ---------------------------------------------------------------------------
// Warping

/// Bilinearly samples every plane of batch item n at p + flow(p), clamped.
template <typename T>
Tensor<T> warp_planes(const Tensor<T>& planes, const FlowField& flow) {
  if (planes.h() != flow.height() || planes.w() != flow.width()) {
    throw std::invalid_argument("warp_planes: flow size does not match tensor");
  }
  Tensor<T> out(planes.shape());
  const int H = planes.h(), W = planes.w();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto tap = BilinearTap<T>::at(static_cast<T>(x) + static_cast<T>(flow.u(y, x)),
                                          static_cast<T>(y) + static_cast<T>(flow.v(y, x)), W, H);
      for (int n = 0; n < planes.n(); ++n)
        for (int c = 0; c < planes.c(); ++c) out(n, c, y, x) = tap.sample(planes.plane(n, c).data(), W);
    }
  }
  return out;
}

/// output(p) = image(p + flow(p)), bilinear, clamped to the image rectangle.
inline ImageTensor warp_image(const ImageTensor& image, const FlowField& flow) {
  if (image.height() != flow.height() || image.width() != flow.width()) {
    throw std::invalid_argument("warp_image: flow size does not match image");
  }
  ImageTensor out(image.height(), image.width(), image.channels());
  const int H = image.height(), W = image.width(), C = image.channels();
  const float* src = image.values().data();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto tap = BilinearTap<double>::at(x + static_cast<double>(flow.u(y, x)),
                                               y + static_cast<double>(flow.v(y, x)), W, H);
      for (int c = 0; c < C; ++c) {
        auto px = [&](int yy, int xx) { return static_cast<double>(src[(static_cast<std::size_t>(yy) * W + xx) * C + c]); };
        out.at(y, x, c) = static_cast<float>(tap.w00 * px(tap.y0, tap.x0) + tap.w01 * px(tap.y0, tap.x1) +
                                             tap.w10 * px(tap.y1, tap.x0) + tap.w11 * px(tap.y1, tap.x1));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Occlusion

struct OcclusionParams {
  double alpha = 0.1;
  double beta = 1.0;
};

/// Forward-backward consistency: M(p) = 1 iff
/// |w + w_hat| < alpha (|w| + |w_hat|) + beta, with w = forward(p) and
/// w_hat = backward(p + w) sampled bilinearly.
inline BinaryMask occlusion_mask(const FlowField& forward, const FlowField& backward,
                                 const OcclusionParams& params = {}) {
  if (forward.height() != backward.height() || forward.width() != backward.width()) {
    throw std::invalid_argument("occlusion_mask: field sizes differ");
  }
  if (params.alpha < 0 || params.beta < 0) throw std::invalid_argument("occlusion_mask: alpha and beta must be >= 0");
  BinaryMask mask(forward.height(), forward.width(), 0);
  for (int y = 0; y < forward.height(); ++y) {
    for (int x = 0; x < forward.width(); ++x) {
      const double wu = forward.u(y, x), wv = forward.v(y, x);
      const auto wh = backward.sample(x + wu, y + wv);
      const double sum_norm = std::hypot(wu + wh[0], wv + wh[1]);
      const double bound = params.alpha * (std::hypot(wu, wv) + std::hypot(wh[0], wh[1])) + params.beta;
      mask.at(y, x) = sum_norm < bound ? 1 : 0;
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Perturbation and resampling

/// Adds sigma * z with z ~ N(0, 1) i.i.d. per component, z drawn from `seed`.
/// The same seed yields the same z for every sigma.
inline FlowField perturb_flow(const FlowField& flow, double sigma, std::uint64_t seed) {
  if (sigma < 0) throw std::invalid_argument("perturb_flow: sigma must be >= 0");
  FlowField out = flow;
  if (sigma == 0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  for (float& f : out.values()) f = static_cast<float>(f + sigma * z(rng));
  return out;
}

/// Bilinear resize of the field; u scaled by new_w / W and v by new_h / H.
inline FlowField resample_flow(const FlowField& flow, int new_h, int new_w) {
  if (new_h < 1 || new_w < 1) throw std::invalid_argument("resample_flow: target must be >= 1");
  if (new_h == flow.height() && new_w == flow.width()) return flow;
  const double su = static_cast<double>(new_w) / flow.width();
  const double sv = static_cast<double>(new_h) / flow.height();
  FlowField out(new_h, new_w);
  for (int y = 0; y < new_h; ++y) {
    const LinearAxis ay = LinearAxis::at(y, flow.height(), new_h);
    for (int x = 0; x < new_w; ++x) {
      const LinearAxis ax = LinearAxis::at(x, flow.width(), new_w);
      auto lerp2 = [&](auto get) {
        const double top = (1 - ax.lambda) * get(ay.i0, ax.i0) + ax.lambda * get(ay.i0, ax.i1);
        const double bot = (1 - ax.lambda) * get(ay.i1, ax.i0) + ax.lambda * get(ay.i1, ax.i1);
        return (1 - ay.lambda) * top + ay.lambda * bot;
      };
      out.u(y, x) = static_cast<float>(su * lerp2([&](int yy, int xx) { return static_cast<double>(flow.u(yy, xx)); }));
      out.v(y, x) = static_cast<float>(sv * lerp2([&](int yy, int xx) { return static_cast<double>(flow.v(yy, xx)); }));
    }
  }
  return out;
}

}  // namespace af
