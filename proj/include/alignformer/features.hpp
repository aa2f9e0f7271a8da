// Fixed feature extractor used by the contextual and perceptual losses: a
// VGG-shaped conv stack, either seeded-random or loaded from a checkpoint.
#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignformer/io.hpp"
#include "alignformer/nn.hpp"

namespace af::feat {

using ag::Var;

enum class FeatureMode { kFixedRandom, kPretrainedVgg19 };

inline std::string to_string(FeatureMode m) {
  return m == FeatureMode::kFixedRandom ? "fixed-random-convnet" : "pretrained-vgg19";
}

inline FeatureMode parse_feature_mode(const std::string& s) {
  if (s == "fixed-random-convnet") return FeatureMode::kFixedRandom;
  if (s == "pretrained-vgg19") return FeatureMode::kPretrainedVgg19;
  throw std::invalid_argument("unknown feature extractor mode: " + s);
}

/// Stage layout of VGG-19 up to conv4_4.
inline constexpr std::array<int, 4> kConvsPerStage = {2, 2, 4, 4};
inline const std::vector<std::string> kTaps = {"conv1_2", "conv2_2", "conv3_4", "conv4_4"};

struct FeatureConfig {
  FeatureMode mode = FeatureMode::kFixedRandom;
  std::array<int, 4> widths{16, 32, 64, 64};
  std::uint64_t seed = 20230601;
  std::filesystem::path weights;  // checkpoint with conv{s}_{i}.weight / .bias (pretrained mode)
};

template <typename T>
class FeatureExtractor {
 public:
  explicit FeatureExtractor(const FeatureConfig& cfg = {}) : cfg_(cfg) {
    if (cfg.mode == FeatureMode::kPretrainedVgg19) {
      load(io::load_checkpoint(cfg.weights));
    } else {
      nn::Rng rng(cfg.seed);
      int cin = 3;
      for (int s = 0; s < 4; ++s) {
        for (int i = 0; i < kConvsPerStage[s]; ++i) {
          convs_.push_back(nn::Conv2d<T>::make(params_, layer_name(s, i), cin, cfg.widths[s], 3, 1, rng, true));
          cin = cfg.widths[s];
        }
      }
      params_.set_requires_grad(false);
    }
  }

  FeatureMode mode() const { return cfg_.mode; }
  const ag::ParameterSet<T>& parameters() const { return params_; }

  /// Runs the stack up to `tap` (one of kTaps) and returns the post-ReLU map.
  Var<T> operator()(const Var<T>& image, const std::string& tap) const {
    auto taps = extract(image, {tap});
    return taps.at(tap);
  }

  std::map<std::string, Var<T>> extract(const Var<T>& image, const std::vector<std::string>& wanted) const {
    int last_stage = -1;
    for (const auto& w : wanted) last_stage = std::max(last_stage, tap_stage(w));
    Var<T> x = image;
    if (cfg_.mode == FeatureMode::kPretrainedVgg19) x = imagenet_normalize(x);
    std::map<std::string, Var<T>> out;
    std::size_t k = 0;
    for (int s = 0; s <= last_stage; ++s) {
      if (s > 0) x = ops::max_pool2(x);
      for (int i = 0; i < kConvsPerStage[s]; ++i) x = ops::relu(convs_[k++](x));
      const std::string name = kTaps[s];
      for (const auto& w : wanted)
        if (w == name) out.emplace(name, x);
    }
    return out;
  }

  static int tap_stage(const std::string& tap) {
    for (int s = 0; s < 4; ++s)
      if (kTaps[s] == tap) return s;
    throw std::invalid_argument("unknown feature tap: " + tap);
  }

 private:
  static std::string layer_name(int s, int i) { return "conv" + std::to_string(s + 1) + "_" + std::to_string(i + 1); }

  void load(const io::Checkpoint& ck) {
    int cin = 3;
    for (int s = 0; s < 4; ++s) {
      for (int i = 0; i < kConvsPerStage[s]; ++i) {
        const std::string n = layer_name(s, i);
        const Tensor<float>& w = ck.array(n + ".weight");
        const Tensor<float>& b = ck.array(n + ".bias");
        if (w.c() != cin || w.h() != 3 || w.w() != 3) throw std::runtime_error("vgg weights: bad shape for " + n);
        nn::Conv2d<T> conv;
        conv.stride = 1;
        conv.pad = 1;
        conv.weight = params_.add(n + ".weight", w.template cast<T>());
        conv.bias = params_.add(n + ".bias", b.reshaped({1, w.n(), 1, 1}).template cast<T>());
        convs_.push_back(conv);
        cin = w.n();
      }
      cfg_.widths[s] = cin;
    }
    params_.set_requires_grad(false);
  }

  static Var<T> imagenet_normalize(const Var<T>& x) {
    static constexpr double mean[3] = {0.485, 0.456, 0.406};
    static constexpr double stdv[3] = {0.229, 0.224, 0.225};
    Tensor<T> scale(x.shape()), shift(x.shape());
    for (int n = 0; n < x.shape()[0]; ++n)
      for (int c = 0; c < x.shape()[1]; ++c) {
        for (auto& v : scale.plane(n, c)) v = static_cast<T>(1.0 / stdv[c % 3]);
        for (auto& v : shift.plane(n, c)) v = static_cast<T>(mean[c % 3] / stdv[c % 3]);
      }
    return ops::sub(ops::mul(x, Var<T>(scale)), Var<T>(shift));
  }

  FeatureConfig cfg_;
  ag::ParameterSet<T> params_;
  std::vector<nn::Conv2d<T>> convs_;
};

}  // namespace af::feat
