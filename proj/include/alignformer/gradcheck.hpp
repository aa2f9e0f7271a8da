// Central-difference gradient verification for scalar-valued graphs.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "alignformer/autograd.hpp"

namespace af::ag {

struct GradCheckResult {
  double relative_error = 0;  // ||analytic - numeric|| / max(||analytic|| + ||numeric||, tiny)
  double max_abs_error = 0;
  std::size_t checked = 0;
  std::size_t kinks = 0;  // probes straddling a non-differentiable point
};

/// Compares backward() against central differences of `f` w.r.t. every input.
/// When `max_probes` > 0 only that many randomly chosen coordinates per input
/// are probed. With `kink_tolerance` > 0 a probe whose one-sided slopes
/// disagree by more than that fraction straddles a ReLU/max-pool switch; the
/// analytic value is then compared with the nearer one-sided slope.
inline GradCheckResult check_gradients(const std::function<Var<double>()>& f, const std::vector<Var<double>>& inputs,
                                       double h = 1e-4, std::size_t max_probes = 0, std::uint64_t seed = 1,
                                       double kink_tolerance = 0) {
  for (const auto& v : inputs) {
    v.node()->requires_grad = true;
    v.zero_grad();
  }
  Var<double> out = f();
  backward(out);
  const double f0 = out.item();
  const double floor = 1e-8 * std::max(1.0, std::abs(f0));
  std::vector<Tensor<double>> analytic;
  for (const auto& v : inputs) analytic.push_back(v.grad());

  std::mt19937_64 rng(seed);
  GradCheckResult r;
  double diff2 = 0, norm_a = 0, norm_n = 0;
  NoGradGuard guard;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double>& x = inputs[k].node()->value;
    std::vector<std::size_t> idx(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_probes > 0 && idx.size() > max_probes) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_probes);
    }
    for (std::size_t i : idx) {
      const double saved = x[i];
      x[i] = saved + h;
      const double fp = f().item();
      x[i] = saved - h;
      const double fm = f().item();
      x[i] = saved;
      const double a = analytic[k][i];
      double num = (fp - fm) / (2 * h);
      if (kink_tolerance > 0) {
        const double up = (fp - f0) / h, down = (f0 - fm) / h;
        if (std::abs(up - down) > kink_tolerance * (std::abs(up) + std::abs(down)) + floor) {
          ++r.kinks;
          num = std::abs(up - a) < std::abs(down - a) ? up : down;
        }
      }
      diff2 += (a - num) * (a - num);
      norm_a += a * a;
      norm_n += num * num;
      r.max_abs_error = std::max(r.max_abs_error, std::abs(a - num));
      ++r.checked;
    }
  }
  r.relative_error = std::sqrt(diff2) / std::max(std::sqrt(norm_a) + std::sqrt(norm_n), 1e-30);
  return r;
}

}  // namespace af::ag
