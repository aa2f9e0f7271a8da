// Geometric alignment: flow-guided local-grid attention, the attention block,
// and the full pseudo ground-truth generator built around them.
#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "alignformer/dam.hpp"
#include "alignformer/flow.hpp"
#include "alignformer/geometry.hpp"
#include "alignformer/nn.hpp"
#include "alignformer/sampling.hpp"

namespace af::gam {

using ag::Node;
using ag::Var;

/// Integer offsets d with |d|_1 <= r, in row-major order.
inline std::vector<std::array<int, 2>> grid_offsets(int r) {
  if (r < 0) throw std::invalid_argument("grid_offsets: radius must be >= 0");
  std::vector<std::array<int, 2>> out;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if (std::abs(dx) + std::abs(dy) <= r) out.push_back({dx, dy});
  return out;
}

/// The key/value sampling positions around p'.
inline std::vector<Point2> local_grid(const Point2& p_prime, int r) {
  std::vector<Point2> out;
  for (const auto& [dx, dy] : grid_offsets(r)) out.push_back({p_prime.x + dx, p_prime.y + dy});
  return out;
}

struct AttentionConfig {
  int radius = 2;
  int proj_dim = 32;
};

/// Scaled dot-product attention of every query against keys/values bilinearly
/// sampled on the local grid around p + flow(p). q, k, v are [N, d, H, W];
/// flow is a constant [N, 2, H, W] tensor of (u, v) offsets.
template <typename T>
Var<T> local_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Tensor<T>& flow, int radius) {
  const Shape s = q.shape();
  if (k.shape() != s || v.shape() != s) throw std::invalid_argument("local_attention: q/k/v shapes differ");
  if (flow.shape() != Shape{s[0], 2, s[2], s[3]}) {
    throw std::invalid_argument("local_attention: flow " + to_string(flow.shape()) + " does not fit " + to_string(s));
  }
  const int N = s[0], D = s[1], H = s[2], W = s[3];
  const auto offsets = grid_offsets(radius);
  const int G = static_cast<int>(offsets.size());
  const std::size_t P = static_cast<std::size_t>(H) * W;
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(D));

  auto taps_at = [offsets, W, H](const Tensor<T>& fl, int n, int y, int x, std::vector<BilinearTap<T>>& taps) {
    const T px = static_cast<T>(x) + fl(n, 0, y, x);
    const T py = static_cast<T>(y) + fl(n, 1, y, x);
    for (std::size_t j = 0; j < offsets.size(); ++j) {
      taps[j] = BilinearTap<T>::at(px + offsets[j][0], py + offsets[j][1], W, H);
    }
  };

  Tensor<T> out(s);
  std::vector<BilinearTap<T>> taps(G);
  std::vector<T> score(G);
  for (int n = 0; n < N; ++n) {
    const T* qb = q.value().item(n).data();
    const T* kb = k.value().item(n).data();
    const T* vb = v.value().item(n).data();
    T* ob = out.item(n).data();
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * W + x;
        taps_at(flow, n, y, x, taps);
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < G; ++j) {
          T dot = 0;
          for (int c = 0; c < D; ++c) dot += qb[c * P + p] * taps[j].sample(kb + c * P, W);
          score[j] = dot * inv_sqrt_d;
          mx = std::max(mx, score[j]);
        }
        T z = 0;
        for (int j = 0; j < G; ++j) z += (score[j] = std::exp(score[j] - mx));
        for (int j = 0; j < G; ++j) score[j] /= z;
        for (int c = 0; c < D; ++c) {
          T acc = 0;
          for (int j = 0; j < G; ++j) acc += score[j] * taps[j].sample(vb + c * P, W);
          ob[c * P + p] = acc;
        }
      }
    }
  }

  return ag::make_result<T>(std::move(out), {q, k, v}, [flow, offsets, taps_at, inv_sqrt_d, N, D, H, W, G, P](Node<T>& node) {
    Tensor<T>* gq = ag::input_grad(node, 0);
    Tensor<T>* gk = ag::input_grad(node, 1);
    Tensor<T>* gv = ag::input_grad(node, 2);
    std::vector<BilinearTap<T>> taps(G);
    std::vector<T> a(G), da(G), ks(static_cast<std::size_t>(G) * D), vs(static_cast<std::size_t>(G) * D);
    for (int n = 0; n < N; ++n) {
      const T* qb = node.inputs[0]->value.item(n).data();
      const T* kb = node.inputs[1]->value.item(n).data();
      const T* vb = node.inputs[2]->value.item(n).data();
      const T* gb = node.grad.item(n).data();
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * W + x;
          taps_at(flow, n, y, x, taps);
          T mx = -std::numeric_limits<T>::infinity();
          for (int j = 0; j < G; ++j) {
            T dot = 0;
            for (int c = 0; c < D; ++c) {
              ks[j * D + c] = taps[j].sample(kb + c * P, W);
              vs[j * D + c] = taps[j].sample(vb + c * P, W);
              dot += qb[c * P + p] * ks[j * D + c];
            }
            a[j] = dot * inv_sqrt_d;
            mx = std::max(mx, a[j]);
          }
          T z = 0;
          for (int j = 0; j < G; ++j) z += (a[j] = std::exp(a[j] - mx));
          T weighted = 0;
          for (int j = 0; j < G; ++j) {
            a[j] /= z;
            T d = 0;
            for (int c = 0; c < D; ++c) d += gb[c * P + p] * vs[j * D + c];
            da[j] = d;
            weighted += a[j] * d;
          }
          for (int j = 0; j < G; ++j) {
            const T ds = a[j] * (da[j] - weighted) * inv_sqrt_d;
            for (int c = 0; c < D; ++c) {
              if (gq) gq->item(n)[c * P + p] += ds * ks[j * D + c];
              if (gk) taps[j].scatter(gk->item(n).data() + c * P, W, ds * qb[c * P + p]);
              if (gv) taps[j].scatter(gv->item(n).data() + c * P, W, a[j] * gb[c * P + p]);
            }
          }
        }
      }
    }
  });
}

template <typename T>
struct ProjectionWeights {
  nn::Conv2d<T> wq, wk, wv;  // 1x1, C -> d

  static ProjectionWeights make(ag::ParameterSet<T>& params, const std::string& name, int channels, int dim,
                                nn::Rng& rng) {
    ProjectionWeights w;
    auto proj = [&](const std::string& n) {
      nn::Conv2d<T> c = nn::Conv2d<T>::make(params, name + "." + n, channels, dim, 1, 1, rng, true, 0);
      // Unit-gain linear init.
      c.weight.mutable_value() = nn::normal_tensor<T>(c.weight.shape(), 1.0 / std::sqrt(static_cast<double>(channels)), rng);
      return c;
    };
    w.wq = proj("wq");
    w.wk = proj("wk");
    w.wv = proj("wv");
    return w;
  }
};

template <typename T>
Var<T> flow_guided_attention(const Var<T>& f_d, const Var<T>& f_r, const Tensor<T>& flow, int radius,
                             const ProjectionWeights<T>& w) {
  if (f_d.shape() != f_r.shape()) throw std::invalid_argument("flow_guided_attention: feature shapes differ");
  return local_attention(w.wq(f_d), w.wk(f_r), w.wv(f_r), flow, radius);
}

template <typename T>
struct AttentionBlockWeights {
  ProjectionWeights<T> proj;
  Var<T> ln_gamma, ln_beta;
  nn::Conv2d<T> mlp1, mlp2;  // d -> 2d -> d

  static AttentionBlockWeights make(ag::ParameterSet<T>& params, const std::string& name, int channels, int dim,
                                    nn::Rng& rng) {
    AttentionBlockWeights w;
    w.proj = ProjectionWeights<T>::make(params, name, channels, dim, rng);
    w.ln_gamma = params.add(name + ".ln.gamma", Tensor<T>(1, dim, 1, 1, T(1)));
    w.ln_beta = params.add(name + ".ln.beta", Tensor<T>(1, dim, 1, 1));
    w.mlp1 = nn::Conv2d<T>::make(params, name + ".mlp1", dim, 2 * dim, 1, 1, rng, true, 0);
    w.mlp2 = nn::Conv2d<T>::make(params, name + ".mlp2", 2 * dim, dim, 1, 1, rng, true, 0);
    return w;
  }
};

/// z = MLP(LN(f)) + f with f the flow-guided attention output.
template <typename T>
Var<T> attention_block(const Var<T>& f_d, const Var<T>& f_r, const Tensor<T>& flow, int radius,
                       const AttentionBlockWeights<T>& w) {
  Var<T> f = flow_guided_attention(f_d, f_r, flow, radius, w.proj);
  Var<T> h = ops::layer_norm_channels(f, w.ln_gamma, w.ln_beta);
  h = w.mlp2(nn::lrelu(w.mlp1(h)));
  return ops::add(h, f);
}

// ---------------------------------------------------------------------------
// Full assembly

struct AlignFormerConfig {
  std::vector<int> channels{32, 64, 128};
  int radius = 2;
  bool fusion_skips = true;  // fusion decoder also sees extractor-A features
  int image_channels = 3;
};

/// U-shaped CNN emitting one feature map per scale (full, 1/2, 1/4, ...).
template <typename T>
struct Extractor {
  std::vector<nn::Conv2d<T>> enc_a, enc_b, dec;

  static Extractor make(ag::ParameterSet<T>& params, const std::string& name, const std::vector<int>& ch, int cin,
                        nn::Rng& rng) {
    Extractor e;
    for (std::size_t s = 0; s < ch.size(); ++s) {
      const int in = s == 0 ? cin : ch[s - 1];
      e.enc_a.push_back(nn::Conv2d<T>::make(params, name + ".enc" + std::to_string(s) + "a", in, ch[s], 3, s == 0 ? 1 : 2, rng));
      e.enc_b.push_back(nn::Conv2d<T>::make(params, name + ".enc" + std::to_string(s) + "b", ch[s], ch[s], 3, 1, rng));
    }
    for (std::size_t s = 0; s + 1 < ch.size(); ++s) {
      e.dec.push_back(nn::Conv2d<T>::make(params, name + ".dec" + std::to_string(s), ch[s] + ch[s + 1], ch[s], 3, 1, rng));
    }
    return e;
  }

  std::vector<Var<T>> operator()(const Var<T>& image) const {
    std::vector<Var<T>> enc;
    Var<T> x = image;
    for (std::size_t s = 0; s < enc_a.size(); ++s) {
      x = nn::lrelu(enc_b[s](nn::lrelu(enc_a[s](x))));
      enc.push_back(x);
    }
    std::vector<Var<T>> out(enc.size());
    out.back() = enc.back();
    for (int s = static_cast<int>(enc.size()) - 2; s >= 0; --s) {
      const Shape sh = enc[s].shape();
      Var<T> up = ops::resize_bilinear(out[s + 1], sh[2], sh[3]);
      out[s] = nn::lrelu(dec[s](ops::concat_channels<T>({up, enc[s]})));
    }
    return out;
  }
};

template <typename T>
struct AlignFormerWeights {
  AlignFormerConfig config;
  ag::ParameterSet<T> params;  // trainable part only; DAM is held separately
  Extractor<T> extractor_a, extractor_b;
  std::vector<AttentionBlockWeights<T>> blocks;
  std::vector<nn::Conv2d<T>> fusion_in, fusion_dec;
  nn::Conv2d<T> fusion_out;

  static AlignFormerWeights build(const AlignFormerConfig& cfg, std::uint64_t seed) {
    if (cfg.channels.empty()) throw std::invalid_argument("AlignFormerConfig: at least one scale required");
    AlignFormerWeights w;
    w.config = cfg;
    nn::Rng rng(seed);
    const auto& ch = cfg.channels;
    w.extractor_a = Extractor<T>::make(w.params, "extractor_a", ch, cfg.image_channels, rng);
    w.extractor_b = Extractor<T>::make(w.params, "extractor_b", ch, cfg.image_channels, rng);
    for (std::size_t s = 0; s < ch.size(); ++s) {
      w.blocks.push_back(AttentionBlockWeights<T>::make(w.params, "attn" + std::to_string(s), ch[s], ch[s], rng));
    }
    const std::size_t S = ch.size();
    for (std::size_t s = 0; s < S; ++s) {
      int in = ch[s] + (cfg.fusion_skips ? ch[s] : 0) + (s + 1 < S ? ch[s + 1] : 0);
      w.fusion_in.push_back(nn::Conv2d<T>::make(w.params, "fusion.in" + std::to_string(s), in, ch[s], 3, 1, rng));
      w.fusion_dec.push_back(nn::Conv2d<T>::make(w.params, "fusion.dec" + std::to_string(s), ch[s], ch[s], 3, 1, rng));
    }
    w.fusion_out = nn::Conv2d<T>::make(w.params, "fusion.out", ch[0], cfg.image_channels, 3, 1, rng);
    return w;
  }

  int downsample_factor() const { return 1 << (static_cast<int>(config.channels.size()) - 1); }
};

/// Stacks per-item flows into a [N, 2, h, w] tensor, resampled to h x w.
template <typename T>
Tensor<T> flow_at_scale(const std::vector<FlowField>& flows, int h, int w) {
  std::vector<FlowField> scaled;
  std::vector<const FlowField*> ptrs;
  scaled.reserve(flows.size());
  for (const auto& f : flows) scaled.push_back(resample_flow(f, h, w));
  for (const auto& f : scaled) ptrs.push_back(&f);
  return flow_tensor<T>(ptrs);
}

/// Given the domain-aligned degraded batch and the reference batch with one
/// full-resolution flow per item, produces the pseudo ground truth I_P.
template <typename T>
Var<T> alignformer_core(const AlignFormerWeights<T>& w, const Var<T>& aligned_degraded, const Var<T>& reference,
                        const std::vector<FlowField>& flows, nn::ShapeTrace* trace = nullptr) {
  const Shape in = aligned_degraded.shape();
  if (reference.shape() != in) throw std::invalid_argument("alignformer: input shapes differ");
  if (static_cast<int>(flows.size()) != in[0]) throw std::invalid_argument("alignformer: one flow per item required");
  dam::require_divisible(in, w.downsample_factor(), "alignformer");
  const auto fa = w.extractor_a(aligned_degraded);
  const auto fb = w.extractor_b(reference);
  const std::size_t S = fa.size();
  std::vector<Var<T>> z(S);
  for (std::size_t s = 0; s < S; ++s) {
    const Shape sh = fa[s].shape();
    z[s] = attention_block(fa[s], fb[s], flow_at_scale<T>(flows, sh[2], sh[3]), w.config.radius, w.blocks[s]);
    nn::trace(trace, "attn" + std::to_string(s), z[s].shape());
  }
  Var<T> u;
  for (int s = static_cast<int>(S) - 1; s >= 0; --s) {
    std::vector<Var<T>> parts{z[s]};
    if (w.config.fusion_skips) parts.push_back(fa[s]);
    if (u.defined()) parts.push_back(ops::resize_bilinear(u, z[s].shape()[2], z[s].shape()[3]));
    u = nn::lrelu(w.fusion_in[s](ops::concat_channels<T>(parts)));
    u = nn::lrelu(w.fusion_dec[s](u));
    nn::trace(trace, "fusion" + std::to_string(s), u.shape());
  }
  Var<T> out = w.fusion_out(u);
  nn::trace(trace, "fusion.out", out.shape());
  return out;
}

struct AlignFormerOutput {
  ImageTensor pseudo;        // I_P
  ImageTensor aligned;       // DAM output
  FlowField flow;            // full-resolution aligned -> reference
  std::vector<FlowField> flows_per_scale;
};

/// Single-pair inference: DAM, flow estimation, attention, fusion.
inline AlignFormerOutput alignformer_forward(const AlignFormerWeights<float>& w, const dam::DamWeights<float>& dam_w,
                                             const ImageTensor& degraded, const ImageTensor& reference,
                                             const FlowProvider& provider) {
  ag::NoGradGuard guard;
  AlignFormerOutput out;
  out.aligned = dam::dam_forward(dam_w, degraded, reference);
  out.flow = estimate_flow(provider, out.aligned, reference);
  Var<float> pseudo = alignformer_core(w, Var<float>(to_tensor<float>(out.aligned)), Var<float>(to_tensor<float>(reference)),
                                       {out.flow});
  out.pseudo = from_tensor(pseudo.value());
  int h = degraded.height(), wd = degraded.width();
  for (std::size_t s = 0; s < w.config.channels.size(); ++s) {
    out.flows_per_scale.push_back(resample_flow(out.flow, h, wd));
    h /= 2;
    wd /= 2;
  }
  return out;
}

}  // namespace af::gam
