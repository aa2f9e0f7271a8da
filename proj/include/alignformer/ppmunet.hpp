// Restoration network: U-Net with pyramid pooling modules at three encoder scales.
#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignformer/image.hpp"
#include "alignformer/nn.hpp"

namespace af::ppm {

using ag::Var;

struct PpmConfig {
  std::vector<int> bins{1, 2, 3, 6};

  void validate() const {
    if (bins.empty()) throw std::invalid_argument("PpmConfig: no bins");
    for (std::size_t i = 0; i < bins.size(); ++i) {
      if (bins[i] < 1) throw std::invalid_argument("PpmConfig: bins must be >= 1");
      if (i > 0 && bins[i] <= bins[i - 1]) throw std::invalid_argument("PpmConfig: bins must be ascending");
    }
  }
};

template <typename T>
struct PpmWeights {
  std::vector<nn::Conv2d<T>> reduce;  // 1x1, C -> C / len(bins)
  nn::Conv2d<T> fuse;                 // 3x3, C + len(bins) * C/len(bins) -> C

  static PpmWeights make(ag::ParameterSet<T>& params, const std::string& name, int channels, const PpmConfig& cfg,
                         nn::Rng& rng) {
    cfg.validate();
    PpmWeights w;
    const int branch = std::max(1, channels / static_cast<int>(cfg.bins.size()));
    for (int b : cfg.bins) {
      w.reduce.push_back(nn::Conv2d<T>::make(params, name + ".bin" + std::to_string(b), channels, branch, 1, 1, rng, true, 0));
    }
    w.fuse = nn::Conv2d<T>::make(params, name + ".fuse", channels + branch * static_cast<int>(cfg.bins.size()), channels,
                                 3, 1, rng);
    return w;
  }
};

template <typename T>
Var<T> ppm_forward(const Var<T>& f, const PpmConfig& cfg, const PpmWeights<T>& w) {
  const Shape s = f.shape();
  for (int b : cfg.bins) {
    if (b > s[2] || b > s[3]) {
      throw std::invalid_argument("ppm_forward: bin " + std::to_string(b) + " exceeds spatial size " + to_string(s));
    }
  }
  std::vector<Var<T>> parts{f};
  for (std::size_t i = 0; i < cfg.bins.size(); ++i) {
    Var<T> p = w.reduce[i](ops::adaptive_avg_pool(f, cfg.bins[i]));
    parts.push_back(ops::resize_bilinear(p, s[2], s[3]));
  }
  return w.fuse(ops::concat_channels<T>(parts));
}

struct PpmUnetConfig {
  // Encoder widths at full, 1/2, 1/4, 1/8 resolution.
  std::array<int, 4> widths{32, 64, 128, 128};
  PpmConfig ppm;
  bool use_ppm = true;  // false replaces each PPM with the identity
  int image_channels = 3;
};

template <typename T>
struct PpmUnetWeights {
  PpmUnetConfig config;
  ag::ParameterSet<T> params;
  std::vector<nn::Conv2d<T>> convs;  // Conv1..Conv16
  std::vector<PpmWeights<T>> ppms;   // PPM1..PPM3

  static PpmUnetWeights build(const PpmUnetConfig& cfg, std::uint64_t seed) {
    PpmUnetWeights w;
    w.config = cfg;
    nn::Rng rng(seed);
    const auto [c1, c2, c3, c4] = cfg.widths;
    struct Spec {
      int cin, cout, stride;
    };
    const std::vector<Spec> specs = {
        {cfg.image_channels, c1, 1}, {c1, c2, 2}, {c2, c2, 1},  // Conv1-3
        {c2, c3, 2}, {c3, c3, 1},                               // Conv4-5
        {c3, c4, 2}, {c4, c4, 1},                               // Conv6-7
        {c4, c4, 1}, {c4, c4, 1},                               // Conv8-9
        {c4, c3, 1}, {c3, c3, 1},                               // Conv10-11
        {c3, c2, 1}, {c2, c2, 1},                               // Conv12-13
        {c2, c1, 1}, {c1, c1, 1},                               // Conv14-15
        {c1, cfg.image_channels, 1},                            // Conv16
    };
    for (std::size_t i = 0; i < specs.size(); ++i) {
      w.convs.push_back(nn::Conv2d<T>::make(w.params, "conv" + std::to_string(i + 1), specs[i].cin, specs[i].cout, 3,
                                            specs[i].stride, rng));
    }
    if (cfg.use_ppm) {
      w.ppms.push_back(PpmWeights<T>::make(w.params, "ppm1", c2, cfg.ppm, rng));
      w.ppms.push_back(PpmWeights<T>::make(w.params, "ppm2", c3, cfg.ppm, rng));
      w.ppms.push_back(PpmWeights<T>::make(w.params, "ppm3", c4, cfg.ppm, rng));
    }
    return w;
  }
};

template <typename T>
Var<T> ppmunet_forward(const PpmUnetWeights<T>& w, const Var<T>& input, nn::ShapeTrace* trace = nullptr) {
  const Shape s = input.shape();
  if (s[2] % 8 != 0 || s[3] % 8 != 0) {
    throw std::invalid_argument("ppmunet_forward: spatial size " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                                " must be divisible by 8");
  }
  auto conv = [&](int i, const Var<T>& x, bool act = true) {
    Var<T> y = w.convs[i - 1](x);
    if (act) y = nn::lrelu(y);
    nn::trace(trace, "Conv" + std::to_string(i), y.shape());
    return y;
  };
  auto ppm = [&](int i, const Var<T>& x) {
    Var<T> y = w.config.use_ppm ? ppm_forward(x, w.config.ppm, w.ppms[i - 1]) : x;
    nn::trace(trace, "PPM" + std::to_string(i), y.shape());
    return y;
  };
  auto add = [&](const std::string& name, const Var<T>& a, const Var<T>& b) {
    Var<T> y = ops::add(a, b);
    nn::trace(trace, name, y.shape());
    return y;
  };
  auto up = [&](const Var<T>& x) {
    Var<T> y = ops::resize_bilinear(x, x.shape()[2] * 2, x.shape()[3] * 2);
    nn::trace(trace, "Upsample", y.shape());
    return y;
  };

  Var<T> x = conv(3, conv(2, conv(1, input)));
  const Var<T> p1 = ppm(1, x);
  x = conv(5, conv(4, p1));
  const Var<T> p2 = ppm(2, x);
  x = conv(7, conv(6, p2));
  const Var<T> p3 = ppm(3, x);
  x = conv(9, conv(8, p3));
  x = up(add("Add3", x, p3));
  x = conv(11, conv(10, x));
  x = up(add("Add2", x, p2));
  x = conv(13, conv(12, x));
  x = up(add("Add1", x, p1));
  x = conv(15, conv(14, x));
  return conv(16, x, false);
}

/// Single-image inference; output clamped to [0, 1] for saving.
inline ImageTensor restore(const PpmUnetWeights<float>& w, const ImageTensor& degraded) {
  ag::NoGradGuard guard;
  return from_tensor(ppmunet_forward(w, Var<float>(to_tensor<float>(degraded))).value()).clamped();
}

}  // namespace af::ppm
