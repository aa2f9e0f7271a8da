// Layer building blocks, initialization and the Adam optimizer.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "alignformer/autograd.hpp"
#include "alignformer/ops.hpp"

namespace af::nn {

using ag::ParameterSet;
using ag::Var;

using Rng = std::mt19937_64;

inline constexpr double kLeakySlope = 0.2;

/// Kaiming-normal tensor for a leaky-ReLU network, fan-in mode.
template <typename T>
Tensor<T> kaiming_normal(const Shape& shape, int fan_in, Rng& rng, double slope = kLeakySlope) {
  const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
  Tensor<T> t(shape);
  for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> normal_tensor(const Shape& shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(shape);
  for (auto& v : t.vec()) v = static_cast<T>(dist(rng));
  return t;
}

/// Square-kernel convolution with "same" padding for stride 1.
template <typename T>
struct Conv2d {
  Var<T> weight;
  Var<T> bias;
  int stride = 1;
  int pad = 1;

  static Conv2d make(ParameterSet<T>& params, const std::string& name, int cin, int cout, int kernel,
                     int stride, Rng& rng, bool with_bias = true, int pad = -1) {
    Conv2d conv;
    conv.stride = stride;
    conv.pad = pad >= 0 ? pad : kernel / 2;
    conv.weight = params.add(name + ".weight",
                             kaiming_normal<T>({cout, cin, kernel, kernel}, cin * kernel * kernel, rng));
    if (with_bias) conv.bias = params.add(name + ".bias", Tensor<T>(1, cout, 1, 1));
    return conv;
  }

  int out_channels() const { return weight.shape()[0]; }
  int in_channels() const { return weight.shape()[1]; }
  int kernel() const { return weight.shape()[2]; }

  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
};

template <typename T>
Var<T> lrelu(const Var<T>& x) {
  return ops::leaky_relu(x, static_cast<T>(kLeakySlope));
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam over a ParameterSet. Moments are kept in the parameter's scalar type.
template <typename T>
class Adam {
 public:
  Adam(const ParameterSet<T>& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
    for (const auto& [name, v] : params_.entries()) {
      m_.emplace_back(v.shape());
      v_.emplace_back(v.shape());
    }
  }

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::int64_t step_count() const { return step_; }

  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const auto& entries = params_.entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      const Var<T>& p = entries[k].second;
      if (!p.node()->has_grad()) continue;
      const Tensor<T>& g = p.node()->grad;
      Tensor<T>& w = p.node()->value;
      Tensor<T>& m = m_[k];
      Tensor<T>& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        m[i] = static_cast<T>(mi);
        v[i] = static_cast<T>(vi);
        const double update = cfg_.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.epsilon);
        w[i] = static_cast<T>(w[i] - update);
      }
    }
  }

  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }

  void restore(std::vector<Tensor<T>> m, std::vector<Tensor<T>> v, std::int64_t step) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw std::invalid_argument("Adam::restore: size mismatch");
    for (std::size_t k = 0; k < m.size(); ++k) {
      if (m[k].shape() != m_[k].shape() || v[k].shape() != v_[k].shape()) {
        throw std::invalid_argument("Adam::restore: moment shape mismatch");
      }
    }
    m_ = std::move(m);
    v_ = std::move(v);
    step_ = step;
  }

 private:
  ParameterSet<T> params_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  std::int64_t step_ = 0;
};

/// Multi-step schedule: the base rate is halved (times `gamma`) at each milestone.
inline double multistep_lr(double base, const std::vector<std::int64_t>& milestones, double gamma,
                           std::int64_t iteration) {
  double lr = base;
  for (auto m : milestones) {
    if (iteration >= m) lr *= gamma;
  }
  return lr;
}

/// Records per-layer output shapes when attached to a forward pass.
struct ShapeTrace {
  std::vector<std::pair<std::string, Shape>> rows;
  void record(const std::string& layer, const Shape& s) { rows.emplace_back(layer, s); }
};

inline void trace(ShapeTrace* t, const std::string& layer, const Shape& s) {
  if (t) t->record(layer, s);
}

}  // namespace af::nn
