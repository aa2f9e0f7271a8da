// Differentiable tensor operations. Every op computes its forward value eagerly
// and registers a closure that accumulates input gradients on backward().
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "alignformer/autograd.hpp"
#include "alignformer/sampling.hpp"
#include "alignformer/tensor.hpp"

namespace af::ops {

using ag::Node;
using ag::Var;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
Var<T> constant(Tensor<T> t) {
  return Var<T>(std::move(t), false);
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return Var<T>(x.value(), false);
}

// ---------------------------------------------------------------------------
// Convolution

namespace detail {

struct ConvGeometry {
  int cin, h, w, k, stride, pad, hout, wout;
  int rows() const { return cin * k * k; }
  int cols() const { return hout * wout; }
  bool is_pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
  const int n_out = g.cols();
  for (int c = 0; c < g.cin; ++c) {
    const T* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * n_out;
        for (int oy = 0; oy < g.hout; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.wout;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wout, T(0));
            continue;
          }
          const T* src = plane + iy * g.w;
          if (g.stride == 1) {
            for (int ox = 0; ox < g.wout; ++ox) {
              const int ix = ox - g.pad + kx;
              dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
            }
          } else {
            for (int ox = 0; ox < g.wout; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* img) {
  const int n_out = g.cols();
  for (int c = 0; c < g.cin; ++c) {
    T* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = cols + static_cast<std::size_t>((c * g.k + ky) * g.k + kx) * n_out;
        for (int oy = 0; oy < g.hout; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = plane + iy * g.w;
          const T* src = row + oy * g.wout;
          for (int ox = 0; ox < g.wout; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation. `weight` is [Cout, Cin, k, k]; `bias` is [1, Cout, 1, 1]
/// or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = weight.value();
  if (wv.c() != xv.c() || wv.h() != wv.w()) {
    throw std::invalid_argument("conv2d: weight " + to_string(wv.shape()) + " incompatible with input " +
                                to_string(xv.shape()));
  }
  detail::ConvGeometry g{xv.c(), xv.h(), xv.w(), wv.h(), stride, pad, 0, 0};
  g.hout = (g.h + 2 * pad - g.k) / stride + 1;
  g.wout = (g.w + 2 * pad - g.k) / stride + 1;
  if (g.hout <= 0 || g.wout <= 0) throw std::invalid_argument("conv2d: input too small");
  const int cout = wv.n();
  const bool has_bias = bias.defined();
  if (has_bias && bias.value().size() != static_cast<std::size_t>(cout)) {
    throw std::invalid_argument("conv2d: bias size mismatch");
  }

  Tensor<T> out(xv.n(), cout, g.hout, g.wout);
  ConstMatMap<T> wm(wv.data(), cout, g.rows());
  AlignedVector<T> cols(g.is_pointwise() ? 0 : static_cast<std::size_t>(g.rows()) * g.cols());
  for (int n = 0; n < xv.n(); ++n) {
    const T* colsp = xv.item(n).data();
    if (!g.is_pointwise()) {
      detail::im2col(xv.item(n).data(), g, cols.data());
      colsp = cols.data();
    }
    ConstMatMap<T> cm(colsp, g.rows(), g.cols());
    MatMap<T> om(out.item(n).data(), cout, g.cols());
    om.noalias() = wm * cm;
    if (has_bias) {
      for (int c = 0; c < cout; ++c) om.row(c).array() += bias.value()[c];
    }
  }

  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return ag::make_result<T>(std::move(out), std::move(inputs), [g, cout, has_bias](Node<T>& node) {
    const Tensor<T>& xv = node.inputs[0]->value;
    const Tensor<T>& wv = node.inputs[1]->value;
    Tensor<T>* gx = ag::input_grad(node, 0);
    Tensor<T>* gw = ag::input_grad(node, 1);
    Tensor<T>* gb = has_bias ? ag::input_grad(node, 2) : nullptr;
    ConstMatMap<T> wm(wv.data(), cout, g.rows());
    AlignedVector<T> cols(g.is_pointwise() ? 0 : static_cast<std::size_t>(g.rows()) * g.cols());
    AlignedVector<T> dcols(static_cast<std::size_t>(g.rows()) * g.cols());
    for (int n = 0; n < xv.n(); ++n) {
      ConstMatMap<T> gm(node.grad.item(n).data(), cout, g.cols());
      if (gw) {
        const T* colsp = xv.item(n).data();
        if (!g.is_pointwise()) {
          detail::im2col(xv.item(n).data(), g, cols.data());
          colsp = cols.data();
        }
        ConstMatMap<T> cm(colsp, g.rows(), g.cols());
        MatMap<T> gwm(gw->data(), cout, g.rows());
        gwm.noalias() += gm * cm.transpose();
      }
      if (gb) {
        for (int c = 0; c < cout; ++c) (*gb)[c] += gm.row(c).sum();
      }
      if (gx) {
        if (g.is_pointwise()) {
          MatMap<T> gxm(gx->item(n).data(), g.rows(), g.cols());
          gxm.noalias() += wm.transpose() * gm;
        } else {
          MatMap<T> dm(dcols.data(), g.rows(), g.cols());
          dm.noalias() = wm.transpose() * gm;
          detail::col2im_add(dcols.data(), g, gx->item(n).data());
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v = v > 0 ? v : slope * v;
  return ag::make_result<T>(std::move(out), {x}, [slope](Node<T>& node) {
    const Tensor<T>& xv = node.inputs[0]->value;
    Tensor<T>* gx = ag::input_grad(node, 0);
    if (!gx) return;
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += node.grad[i] * (xv[i] > 0 ? T(1) : slope);
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return leaky_relu(x, T(0));
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return ag::make_result<T>(std::move(out), {a, b}, [](Node<T>& node) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Tensor<T>* g = ag::input_grad(node, k)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += node.grad[i];
      }
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return ag::make_result<T>(std::move(out), {a, b}, [](Node<T>& node) {
    if (Tensor<T>* g = ag::input_grad(node, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += node.grad[i];
    }
    if (Tensor<T>* g = ag::input_grad(node, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= node.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return ag::make_result<T>(std::move(out), {a, b}, [](Node<T>& node) {
    const auto& av = node.inputs[0]->value;
    const auto& bv = node.inputs[1]->value;
    if (Tensor<T>* g = ag::input_grad(node, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += node.grad[i] * bv[i];
    }
    if (Tensor<T>* g = ag::input_grad(node, 1)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += node.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> out = x.value();
  for (auto& v : out.vec()) v *= s;
  return ag::make_result<T>(std::move(out), {x}, [s](Node<T>& node) {
    if (Tensor<T>* g = ag::input_grad(node, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * node.grad[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (T v : x.value().vec()) s += v;
  return ag::make_result<T>(Tensor<T>(1, 1, 1, 1, s), {x}, [](Node<T>& node) {
    if (Tensor<T>* g = ag::input_grad(node, 0)) {
      for (auto& v : g->vec()) v += node.grad[0];
    }
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const T n = static_cast<T>(x.value().size());
  return scale(sum(x), T(1) / n);
}

/// Mean absolute value over all elements.
template <typename T>
Var<T> mean_abs(const Var<T>& x) {
  const auto& xv = x.value();
  T s = 0;
  for (T v : xv.vec()) s += std::abs(v);
  const T inv_n = T(1) / static_cast<T>(xv.size());
  return ag::make_result<T>(Tensor<T>(1, 1, 1, 1, s * inv_n), {x}, [inv_n](Node<T>& node) {
    const auto& xv = node.inputs[0]->value;
    if (Tensor<T>* g = ag::input_grad(node, 0)) {
      const T gs = node.grad[0] * inv_n;
      for (std::size_t i = 0; i < g->size(); ++i) {
        (*g)[i] += xv[i] > 0 ? gs : (xv[i] < 0 ? -gs : T(0));
      }
    }
  });
}

/// [N,C,H,W] -> [N,C,1,1].
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& xv = x.value();
  Tensor<T> out(xv.n(), xv.c(), 1, 1);
  const T inv = T(1) / static_cast<T>(xv.plane_size());
  for (int n = 0; n < xv.n(); ++n) {
    for (int c = 0; c < xv.c(); ++c) {
      auto p = xv.plane(n, c);
      out(n, c, 0, 0) = std::accumulate(p.begin(), p.end(), T(0)) * inv;
    }
  }
  return ag::make_result<T>(std::move(out), {x}, [inv](Node<T>& node) {
    Tensor<T>* g = ag::input_grad(node, 0);
    if (!g) return;
    for (int n = 0; n < g->n(); ++n) {
      for (int c = 0; c < g->c(); ++c) {
        const T gv = node.grad(n, c, 0, 0) * inv;
        for (auto& v : g->plane(n, c)) v += gv;
      }
    }
  });
}

/// Adaptive mean pooling to bins x bins cells, cell i spanning
/// [floor(i*H/b), ceil((i+1)*H/b)).
template <typename T>
Var<T> adaptive_avg_pool(const Var<T>& x, int bins) {
  const auto& xv = x.value();
  if (bins < 1 || bins > xv.h() || bins > xv.w()) {
    throw std::invalid_argument("adaptive_avg_pool: bin count " + std::to_string(bins) +
                                " exceeds spatial size " + to_string(xv.shape()));
  }
  auto start = [](int i, int size, int b) { return (i * size) / b; };
  auto end = [](int i, int size, int b) { return ((i + 1) * size + b - 1) / b; };
  Tensor<T> out(xv.n(), xv.c(), bins, bins);
  for (int n = 0; n < xv.n(); ++n) {
    for (int c = 0; c < xv.c(); ++c) {
      for (int by = 0; by < bins; ++by) {
        for (int bx = 0; bx < bins; ++bx) {
          const int y0 = start(by, xv.h(), bins), y1 = end(by, xv.h(), bins);
          const int x0 = start(bx, xv.w(), bins), x1 = end(bx, xv.w(), bins);
          T s = 0;
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) s += xv(n, c, y, xx);
          out(n, c, by, bx) = s / static_cast<T>((y1 - y0) * (x1 - x0));
        }
      }
    }
  }
  return ag::make_result<T>(std::move(out), {x}, [bins, start, end](Node<T>& node) {
    Tensor<T>* g = ag::input_grad(node, 0);
    if (!g) return;
    for (int n = 0; n < g->n(); ++n) {
      for (int c = 0; c < g->c(); ++c) {
        for (int by = 0; by < bins; ++by) {
          for (int bx = 0; bx < bins; ++bx) {
            const int y0 = start(by, g->h(), bins), y1 = end(by, g->h(), bins);
            const int x0 = start(bx, g->w(), bins), x1 = end(bx, g->w(), bins);
            const T gv = node.grad(n, c, by, bx) / static_cast<T>((y1 - y0) * (x1 - x0));
            for (int y = y0; y < y1; ++y)
              for (int xx = x0; xx < x1; ++xx) (*g)(n, c, y, xx) += gv;
          }
        }
      }
    }
  });
}

/// 2x2 max pooling, stride 2.
template <typename T>
Var<T> max_pool2(const Var<T>& x) {
  const auto& xv = x.value();
  const int ho = xv.h() / 2, wo = xv.w() / 2;
  if (ho < 1 || wo < 1) throw std::invalid_argument("max_pool2: input too small");
  Tensor<T> out(xv.n(), xv.c(), ho, wo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  std::size_t o = 0;
  for (int n = 0; n < xv.n(); ++n) {
    for (int c = 0; c < xv.c(); ++c) {
      for (int y = 0; y < ho; ++y) {
        for (int xx = 0; xx < wo; ++xx, ++o) {
          std::size_t best = xv.index(n, c, 2 * y, 2 * xx);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx = xv.index(n, c, 2 * y + dy, 2 * xx + dx);
              if (xv[idx] > xv[best]) best = idx;
            }
          out[o] = xv[best];
          (*argmax)[o] = best;
        }
      }
    }
  }
  return ag::make_result<T>(std::move(out), {x}, [argmax](Node<T>& node) {
    Tensor<T>* g = ag::input_grad(node, 0);
    if (!g) return;
    for (std::size_t i = 0; i < argmax->size(); ++i) (*g)[(*argmax)[i]] += node.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Resampling and layout

/// Bilinear resize with half-pixel centers.
template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w) {
  const auto& xv = x.value();
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: empty target");
  if (out_h == xv.h() && out_w == xv.w()) return x;
  std::vector<LinearAxis> ay(out_h), ax(out_w);
  for (int i = 0; i < out_h; ++i) ay[i] = LinearAxis::at(i, xv.h(), out_h);
  for (int i = 0; i < out_w; ++i) ax[i] = LinearAxis::at(i, xv.w(), out_w);
  Tensor<T> out(xv.n(), xv.c(), out_h, out_w);
  for (int n = 0; n < xv.n(); ++n) {
    for (int c = 0; c < xv.c(); ++c) {
      const T* src = xv.plane(n, c).data();
      T* dst = out.plane(n, c).data();
      for (int y = 0; y < out_h; ++y) {
        const T ly = static_cast<T>(ay[y].lambda);
        const T* r0 = src + ay[y].i0 * xv.w();
        const T* r1 = src + ay[y].i1 * xv.w();
        for (int xx = 0; xx < out_w; ++xx) {
          const T lx = static_cast<T>(ax[xx].lambda);
          const int i0 = ax[xx].i0, i1 = ax[xx].i1;
          dst[y * out_w + xx] = (1 - ly) * ((1 - lx) * r0[i0] + lx * r0[i1]) + ly * ((1 - lx) * r1[i0] + lx * r1[i1]);
        }
      }
    }
  }
  return ag::make_result<T>(std::move(out), {x}, [ay, ax](Node<T>& node) {
    Tensor<T>* g = ag::input_grad(node, 0);
    if (!g) return;
    const int out_h = node.grad.h(), out_w = node.grad.w(), in_w = g->w();
    for (int n = 0; n < g->n(); ++n) {
      for (int c = 0; c < g->c(); ++c) {
        const T* go = node.grad.plane(n, c).data();
        T* gi = g->plane(n, c).data();
        for (int y = 0; y < out_h; ++y) {
          const T ly = static_cast<T>(ay[y].lambda);
          T* r0 = gi + ay[y].i0 * in_w;
          T* r1 = gi + ay[y].i1 * in_w;
          for (int xx = 0; xx < out_w; ++xx) {
            const T lx = static_cast<T>(ax[xx].lambda);
            const int i0 = ax[xx].i0, i1 = ax[xx].i1;
            const T v = go[y * out_w + xx];
            r0[i0] += (1 - ly) * (1 - lx) * v;
            r0[i1] += (1 - ly) * lx * v;
            r1[i0] += ly * (1 - lx) * v;
            r1[i1] += ly * lx * v;
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Shape s0 = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw std::invalid_argument("concat_channels: mismatched " + to_string(s) + " vs " + to_string(s0));
    }
    total += s[1];
  }
  Tensor<T> out(s0[0], total, s0[2], s0[3]);
  const std::size_t plane = out.plane_size();
  for (int n = 0; n < s0[0]; ++n) {
    int offset = 0;
    for (const auto& p : parts) {
      const auto src = p.value().item(n);
      std::copy(src.begin(), src.end(), out.item(n).data() + offset * plane);
      offset += p.shape()[1];
    }
  }
  return ag::make_result<T>(std::move(out), parts, [](Node<T>& node) {
    const std::size_t plane = node.grad.plane_size();
    int offset = 0;
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const int ck = node.inputs[k]->value.c();
      if (Tensor<T>* g = ag::input_grad(node, k)) {
        for (int n = 0; n < node.grad.n(); ++n) {
          const T* src = node.grad.item(n).data() + offset * plane;
          auto dst = g->item(n);
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
      }
      offset += ck;
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization

/// Adaptive instance normalization. `style` is [N, 2C, 1, 1] holding the
/// per-channel scales followed by the per-channel biases.
template <typename T>
Var<T> adain(const Var<T>& x, const Var<T>& style, T eps = T(1e-5)) {
  const auto& xv = x.value();
  const int C = xv.c();
  if (style.shape() != Shape{xv.n(), 2 * C, 1, 1}) {
    throw std::invalid_argument("adain: style " + to_string(style.shape()) + " does not fit " +
                                to_string(xv.shape()));
  }
  const auto& sv = style.value();
  const T inv_n = T(1) / static_cast<T>(xv.plane_size());
  Tensor<T> out(xv.shape());
  for (int n = 0; n < xv.n(); ++n) {
    for (int c = 0; c < C; ++c) {
      auto p = xv.plane(n, c);
      T mu = 0;
      for (T v : p) mu += v;
      mu *= inv_n;
      T var = 0;
      for (T v : p) var += (v - mu) * (v - mu);
      const T sigma = std::sqrt(var * inv_n);
      const T ys = sv(n, c, 0, 0), yb = sv(n, C + c, 0, 0);
      const T k = ys / (sigma + eps);
      auto o = out.plane(n, c);
      for (std::size_t i = 0; i < p.size(); ++i) o[i] = k * (p[i] - mu) + yb;
    }
  }
  return ag::make_result<T>(std::move(out), {x, style}, [eps, inv_n](Node<T>& node) {
    const auto& xv = node.inputs[0]->value;
    const auto& sv = node.inputs[1]->value;
    Tensor<T>* gx = ag::input_grad(node, 0);
    Tensor<T>* gs = ag::input_grad(node, 1);
    const int C = xv.c();
    for (int n = 0; n < xv.n(); ++n) {
      for (int c = 0; c < C; ++c) {
        auto p = xv.plane(n, c);
        auto g = node.grad.plane(n, c);
        T mu = 0;
        for (T v : p) mu += v;
        mu *= inv_n;
        T var = 0;
        for (T v : p) var += (v - mu) * (v - mu);
        const T sigma = std::sqrt(var * inv_n);
        const T denom = sigma + eps;
        const T ys = sv(n, c, 0, 0);
        T sum_g = 0, sum_g_xhat = 0, sum_g_a = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const T a = p[i] - mu;
          sum_g += g[i];
          sum_g_xhat += g[i] * a / denom;
          sum_g_a += g[i] * a;
        }
        if (gs) {
          (*gs)(n, c, 0, 0) += sum_g_xhat;
          (*gs)(n, C + c, 0, 0) += sum_g;
        }
        if (gx) {
          // d xhat_i / d x_j = (delta_ij - 1/N)/denom - a_i a_j / (denom^2 N sigma)
          const T mean_g = sum_g * inv_n;
          const T coupling = sigma > 0 ? sum_g_a * inv_n / (denom * denom * sigma) : T(0);
          auto dst = gx->plane(n, c);
          for (std::size_t i = 0; i < p.size(); ++i) {
            const T a = p[i] - mu;
            dst[i] += ys * ((g[i] - mean_g) / denom - coupling * a);
          }
        }
      }
    }
  });
}

/// Layer normalization across channels at every spatial position, with
/// per-channel affine gamma/beta of shape [1, C, 1, 1].
template <typename T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  const auto& xv = x.value();
  const int C = xv.c();
  const std::size_t P = xv.plane_size();
  if (gamma.value().size() != static_cast<std::size_t>(C) || beta.value().size() != static_cast<std::size_t>(C)) {
    throw std::invalid_argument("layer_norm_channels: affine size mismatch");
  }
  Tensor<T> out(xv.shape());
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (int n = 0; n < xv.n(); ++n) {
    const T* base = xv.item(n).data();
    T* ob = out.item(n).data();
    for (std::size_t p = 0; p < P; ++p) {
      T mu = 0;
      for (int c = 0; c < C; ++c) mu += base[c * P + p];
      mu /= C;
      T var = 0;
      for (int c = 0; c < C; ++c) var += (base[c * P + p] - mu) * (base[c * P + p] - mu);
      var /= C;
      const T inv = T(1) / std::sqrt(var + eps);
      for (int c = 0; c < C; ++c) ob[c * P + p] = gv[c] * (base[c * P + p] - mu) * inv + bv[c];
    }
  }
  return ag::make_result<T>(std::move(out), {x, gamma, beta}, [eps](Node<T>& node) {
    const auto& xv = node.inputs[0]->value;
    const auto& gv = node.inputs[1]->value;
    Tensor<T>* gx = ag::input_grad(node, 0);
    Tensor<T>* gg = ag::input_grad(node, 1);
    Tensor<T>* gb = ag::input_grad(node, 2);
    const int C = xv.c();
    const std::size_t P = xv.plane_size();
    std::vector<T> xhat(C), gxh(C);
    for (int n = 0; n < xv.n(); ++n) {
      const T* base = xv.item(n).data();
      const T* go = node.grad.item(n).data();
      for (std::size_t p = 0; p < P; ++p) {
        T mu = 0;
        for (int c = 0; c < C; ++c) mu += base[c * P + p];
        mu /= C;
        T var = 0;
        for (int c = 0; c < C; ++c) var += (base[c * P + p] - mu) * (base[c * P + p] - mu);
        var /= C;
        const T inv = T(1) / std::sqrt(var + eps);
        T mean_gxh = 0, mean_gxh_xhat = 0;
        for (int c = 0; c < C; ++c) {
          xhat[c] = (base[c * P + p] - mu) * inv;
          const T g = go[c * P + p];
          if (gg) (*gg)[c] += g * xhat[c];
          if (gb) (*gb)[c] += g;
          gxh[c] = g * gv[c];
          mean_gxh += gxh[c];
          mean_gxh_xhat += gxh[c] * xhat[c];
        }
        if (!gx) continue;
        mean_gxh /= C;
        mean_gxh_xhat /= C;
        T* dst = gx->item(n).data();
        for (int c = 0; c < C; ++c) dst[c * P + p] += inv * (gxh[c] - mean_gxh - xhat[c] * mean_gxh_xhat);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Adversarial log-likelihood terms on logits

/// mean(-log(max(sigmoid(z), eps)))
template <typename T>
Var<T> mean_neg_log_sigmoid(const Var<T>& logits, T eps = T(1e-8)) {
  const auto& zv = logits.value();
  T s = 0;
  for (T z : zv.vec()) {
    const T p = T(1) / (T(1) + std::exp(-z));
    s += -std::log(std::max(p, eps));
  }
  const T inv_n = T(1) / static_cast<T>(zv.size());
  return ag::make_result<T>(Tensor<T>(1, 1, 1, 1, s * inv_n), {logits}, [eps, inv_n](Node<T>& node) {
    const auto& zv = node.inputs[0]->value;
    Tensor<T>* g = ag::input_grad(node, 0);
    if (!g) return;
    for (std::size_t i = 0; i < zv.size(); ++i) {
      const T p = T(1) / (T(1) + std::exp(-zv[i]));
      if (p > eps) (*g)[i] += node.grad[0] * inv_n * -(T(1) - p);
    }
  });
}

/// mean(-log(max(1 - sigmoid(z), eps)))
template <typename T>
Var<T> mean_neg_log_one_minus_sigmoid(const Var<T>& logits, T eps = T(1e-8)) {
  const auto& zv = logits.value();
  T s = 0;
  for (T z : zv.vec()) {
    const T q = T(1) / (T(1) + std::exp(z));
    s += -std::log(std::max(q, eps));
  }
  const T inv_n = T(1) / static_cast<T>(zv.size());
  return ag::make_result<T>(Tensor<T>(1, 1, 1, 1, s * inv_n), {logits}, [eps, inv_n](Node<T>& node) {
    const auto& zv = node.inputs[0]->value;
    Tensor<T>* g = ag::input_grad(node, 0);
    if (!g) return;
    for (std::size_t i = 0; i < zv.size(); ++i) {
      const T q = T(1) / (T(1) + std::exp(zv[i]));
      if (q > eps) (*g)[i] += node.grad[0] * inv_n * (T(1) - q);
    }
  });
}

}  // namespace af::ops
