// Domain alignment: a guidance net distilling a style vector from the
// reference, and a StyleConv matching net re-rendering the degraded image
// with the reference's global statistics.
#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignformer/image.hpp"
#include "alignformer/nn.hpp"

namespace af::dam {

using ag::Var;

struct DamConfig {
  int guidance_width = 64;  // also the style dimension
  int matching_width = 64;
  int image_channels = 3;
  double affine_init_std = 0.01;
};

inline constexpr int kMatchingLayers = 12;

enum class Resize { kNone, kDown, kUp };

/// Resize applied after each matching-net layer.
inline constexpr std::array<Resize, kMatchingLayers> kMatchingResize = {
    Resize::kNone, Resize::kDown, Resize::kNone, Resize::kDown, Resize::kNone, Resize::kNone,
    Resize::kNone, Resize::kUp,   Resize::kNone, Resize::kUp,   Resize::kNone, Resize::kNone};

/// Strides of the five guidance convolutions.
inline constexpr std::array<int, 5> kGuidanceStrides = {1, 2, 1, 2, 1};

template <typename T>
struct StyleConv {
  nn::Conv2d<T> conv;
  nn::Conv2d<T> affine;  // 1x1 over the style vector: d -> [y_s, y_b]

  static StyleConv make(ag::ParameterSet<T>& params, const std::string& name, int cin, int cout, int style_dim,
                        double affine_std, nn::Rng& rng) {
    StyleConv s;
    s.conv = nn::Conv2d<T>::make(params, name + ".conv", cin, cout, 3, 1, rng);
    Tensor<T> bias(1, 2 * cout, 1, 1);
    for (int c = 0; c < cout; ++c) bias[c] = T(1);
    s.affine.stride = 1;
    s.affine.pad = 0;
    s.affine.weight = params.add(name + ".affine.weight", nn::normal_tensor<T>({2 * cout, style_dim, 1, 1}, affine_std, rng));
    s.affine.bias = params.add(name + ".affine.bias", std::move(bias));
    return s;
  }

  Var<T> operator()(const Var<T>& x, const Var<T>& style) const {
    return ops::adain(conv(x), affine(style));
  }
};

template <typename T>
struct DamWeights {
  DamConfig config;
  ag::ParameterSet<T> params;
  std::vector<nn::Conv2d<T>> guidance;
  std::vector<StyleConv<T>> matching;

  static DamWeights build(const DamConfig& cfg, std::uint64_t seed) {
    DamWeights w;
    w.config = cfg;
    nn::Rng rng(seed);
    int cin = cfg.image_channels;
    for (std::size_t i = 0; i < kGuidanceStrides.size(); ++i) {
      w.guidance.push_back(nn::Conv2d<T>::make(w.params, "guidance.conv" + std::to_string(i + 1), cin, cfg.guidance_width,
                                               3, kGuidanceStrides[i], rng));
      cin = cfg.guidance_width;
    }
    cin = cfg.image_channels;
    for (int i = 0; i < kMatchingLayers; ++i) {
      const int cout = i + 1 == kMatchingLayers ? cfg.image_channels : cfg.matching_width;
      w.matching.push_back(StyleConv<T>::make(w.params, "matching.styleconv" + std::to_string(i + 1), cin, cout,
                                              cfg.guidance_width, cfg.affine_init_std, rng));
      cin = cout;
    }
    return w;
  }
};

inline void require_divisible(const Shape& s, int factor, const char* what) {
  if (s[2] % factor != 0 || s[3] % factor != 0) {
    throw std::invalid_argument(std::string(what) + ": spatial size " + std::to_string(s[2]) + "x" +
                                std::to_string(s[3]) + " must be divisible by " + std::to_string(factor));
  }
}

/// [N, C, H, W] reference -> [N, d, 1, 1] guidance vector.
template <typename T>
Var<T> guidance_forward(const DamWeights<T>& w, const Var<T>& reference, nn::ShapeTrace* trace = nullptr) {
  require_divisible(reference.shape(), 4, "guidance_forward");
  Var<T> x = reference;
  for (std::size_t i = 0; i < w.guidance.size(); ++i) {
    x = w.guidance[i](x);
    if (i + 1 < w.guidance.size()) x = nn::lrelu(x);
    nn::trace(trace, "guidance.conv" + std::to_string(i + 1), x.shape());
  }
  x = ops::global_avg_pool(x);
  nn::trace(trace, "guidance.gap", x.shape());
  return x;
}

/// Style-modulated re-rendering of the degraded image; output size equals input.
template <typename T>
Var<T> matching_forward(const DamWeights<T>& w, const Var<T>& degraded, const Var<T>& style,
                        nn::ShapeTrace* trace = nullptr) {
  require_divisible(degraded.shape(), 4, "matching_forward");
  if (style.shape() != Shape{degraded.shape()[0], w.config.guidance_width, 1, 1}) {
    throw std::invalid_argument("matching_forward: style " + to_string(style.shape()) + " does not fit batch " +
                                to_string(degraded.shape()));
  }
  Var<T> x = degraded;
  for (int i = 0; i < kMatchingLayers; ++i) {
    x = nn::lrelu(w.matching[i](x, style));
    const Shape s = x.shape();
    if (kMatchingResize[i] == Resize::kDown) x = ops::resize_bilinear(x, s[2] / 2, s[3] / 2);
    if (kMatchingResize[i] == Resize::kUp) x = ops::resize_bilinear(x, s[2] * 2, s[3] * 2);
    nn::trace(trace, "matching.styleconv" + std::to_string(i + 1), x.shape());
  }
  return x;
}

template <typename T>
Var<T> dam_forward(const DamWeights<T>& w, const Var<T>& degraded, const Var<T>& reference,
                   nn::ShapeTrace* trace = nullptr) {
  return matching_forward(w, degraded, guidance_forward(w, reference, trace), trace);
}

/// Inference on a single pair of images, without building a graph.
inline ImageTensor dam_forward(const DamWeights<float>& w, const ImageTensor& degraded, const ImageTensor& reference) {
  ag::NoGradGuard guard;
  Var<float> out = dam_forward(w, Var<float>(to_tensor<float>(degraded)), Var<float>(to_tensor<float>(reference)));
  return from_tensor(out.value());
}

}  // namespace af::dam
