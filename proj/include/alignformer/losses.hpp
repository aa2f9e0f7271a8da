// Training objectives: contextual loss, domain losses, masked reconstruction
// terms and the conditional PatchGAN.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "alignformer/features.hpp"
#include "alignformer/nn.hpp"

namespace af::loss {

using ag::Node;
using ag::Var;

// ---------------------------------------------------------------------------
// Contextual loss

enum class CxDistance { kCosine, kNormalizedL2 };
enum class CxCenter { kReferenceMean, kNone };

struct CxOptions {
  CxDistance distance = CxDistance::kCosine;
  CxCenter center = CxCenter::kReferenceMean;
  double softmin_temperature = 0.0;  // 0 = hard min
  double eps = 1e-8;
};

inline std::string to_string(CxDistance d) { return d == CxDistance::kCosine ? "cosine" : "normalized-l2"; }
inline std::string to_string(CxCenter c) { return c == CxCenter::kReferenceMean ? "reference-mean" : "none"; }
inline CxDistance parse_cx_distance(const std::string& s) {
  if (s == "cosine") return CxDistance::kCosine;
  if (s == "normalized-l2") return CxDistance::kNormalizedL2;
  throw std::invalid_argument("unknown cx distance: " + s);
}
inline CxCenter parse_cx_center(const std::string& s) {
  if (s == "reference-mean") return CxCenter::kReferenceMean;
  if (s == "none") return CxCenter::kNone;
  throw std::invalid_argument("unknown cx center: " + s);
}

/// Feature-set loss on [N, C, H, W] maps:
///   L = mean_n (1/|X|) sum_j min_i D(x_j, y_i).
/// Features are shifted by the mean of y and L2-normalized (norm floored at eps).
template <typename T>
Var<T> cx_loss_features(const Var<T>& x, const Var<T>& y, const CxOptions& opt = {}) {
  const Shape sx = x.shape(), sy = y.shape();
  if (sx[0] != sy[0] || sx[1] != sy[1]) throw std::invalid_argument("cx_loss: batch/channel mismatch");
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  const int N = sx[0], C = sx[1];
  const int nx = sx[2] * sx[3], ny = sy[2] * sy[3];
  const T eps = static_cast<T>(opt.eps);
  const T tau = static_cast<T>(opt.softmin_temperature);
  const bool l2 = opt.distance == CxDistance::kNormalizedL2;
  const bool center = opt.center == CxCenter::kReferenceMean;

  struct Item {
    Mat ux, uy;       // C x n centered features
    Mat xh, yh;       // normalized
    Eigen::Matrix<T, Eigen::Dynamic, 1> nxs, nys;  // floored norms
    Mat w;            // ny x nx matching weights (one-hot for hard min)
    Mat dd;           // derivative of D w.r.t. cosine, ny x nx
  };
  std::vector<Item> items(N);
  T total = 0;
  for (int n = 0; n < N; ++n) {
    Item& it = items[n];
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(x.value().item(n).data(), C, nx);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> Y(y.value().item(n).data(), C, ny);
    Eigen::Matrix<T, Eigen::Dynamic, 1> mu = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(C);
    if (center) mu = Y.rowwise().mean();
    it.ux = X.colwise() - mu;
    it.uy = Y.colwise() - mu;
    it.nxs = it.ux.colwise().norm().transpose().cwiseMax(eps);
    it.nys = it.uy.colwise().norm().transpose().cwiseMax(eps);
    it.xh = it.ux * it.nxs.cwiseInverse().asDiagonal();
    it.yh = it.uy * it.nys.cwiseInverse().asDiagonal();
    Mat cosm = it.yh.transpose() * it.xh;  // ny x nx
    Mat dist(ny, nx);
    it.dd.resize(ny, nx);
    for (int j = 0; j < nx; ++j)
      for (int i = 0; i < ny; ++i) {
        const T c = cosm(i, j);
        if (l2) {
          const T d = std::sqrt(std::max(T(0), T(2) - T(2) * c));
          dist(i, j) = d;
          it.dd(i, j) = d > T(1e-12) ? -T(1) / d : T(0);
        } else {
          dist(i, j) = T(1) - c;
          it.dd(i, j) = T(-1);
        }
      }
    it.w = Mat::Zero(ny, nx);
    T sum = 0;
    for (int j = 0; j < nx; ++j) {
      int best = 0;
      T mn = dist(0, j);
      for (int i = 1; i < ny; ++i)
        if (dist(i, j) < mn) {
          mn = dist(i, j);
          best = i;
        }
      if (tau > 0) {
        T z = 0;
        for (int i = 0; i < ny; ++i) z += (it.w(i, j) = std::exp(-(dist(i, j) - mn) / tau));
        it.w.col(j) /= z;
        sum += mn - tau * std::log(z);
      } else {
        it.w(best, j) = 1;
        sum += mn;
      }
    }
    total += sum / nx;
  }
  total /= N;

  return ag::make_result<T>(Tensor<T>(1, 1, 1, 1, total), {x, y},
                            [items = std::move(items), N, C, nx, ny, center, eps](Node<T>& node) {
    Tensor<T>* gx = ag::input_grad(node, 0);
    Tensor<T>* gy = ag::input_grad(node, 1);
    const T g = node.grad[0] / (static_cast<T>(N) * nx);
    for (int n = 0; n < N; ++n) {
      const Item& it = items[n];
      // dL/dcos(i,j) = g * w(i,j) * dD/dcos
      Mat gc = (it.w.array() * it.dd.array()).matrix() * g;
      Mat gxh = it.yh * gc;              // C x nx
      Mat gyh = it.xh * gc.transpose();  // C x ny
      auto back_norm = [eps](const Mat& u, const Mat& h, const Eigen::Matrix<T, Eigen::Dynamic, 1>& norms, const Mat& gh) {
        Mat gu(u.rows(), u.cols());
        for (Eigen::Index k = 0; k < u.cols(); ++k) {
          if (norms(k) > eps) {
            const T dot = h.col(k).dot(gh.col(k));
            gu.col(k) = (gh.col(k) - h.col(k) * dot) / norms(k);
          } else {
            gu.col(k) = gh.col(k) / eps;
          }
        }
        return gu;
      };
      Mat gux = back_norm(it.ux, it.xh, it.nxs, gxh);
      Mat guy = back_norm(it.uy, it.yh, it.nys, gyh);
      if (gx) {
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> GX(gx->item(n).data(), C, nx);
        GX += gux;
      }
      if (gy) {
        Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> GY(gy->item(n).data(), C, ny);
        GY += guy;
        if (center) {
          const Eigen::Matrix<T, Eigen::Dynamic, 1> gmu = -(gux.rowwise().sum() + guy.rowwise().sum()) / static_cast<T>(ny);
          GY.colwise() += gmu;
        }
      }
    }
  });
}

/// Contextual loss between two images at one feature tap.
template <typename T>
Var<T> cx_loss(const Var<T>& x, const Var<T>& y, const feat::FeatureExtractor<T>& phi, const std::string& tap,
               const CxOptions& opt = {}) {
  return cx_loss_features(phi(x, tap), phi(y, tap), opt);
}

inline const std::string kDomainTap = "conv4_4";

/// Mean of the contextual loss over several feature taps, one extractor pass per image.
template <typename T>
Var<T> cx_loss_taps(const Var<T>& x, const Var<T>& y, const feat::FeatureExtractor<T>& phi,
                    const std::vector<std::string>& taps, const CxOptions& opt = {}) {
  if (taps.empty()) throw std::invalid_argument("cx_loss_taps: no feature taps");
  const auto fx = phi.extract(x, taps), fy = phi.extract(y, taps);
  Var<T> total;
  for (const auto& t : taps) {
    Var<T> l = cx_loss_features(fx.at(t), fy.at(t), opt);
    total = total.defined() ? ops::add(total, l) : l;
  }
  return taps.size() == 1 ? total : ops::scale(total, T(1) / static_cast<T>(taps.size()));
}

template <typename T>
Var<T> dam_loss(const Var<T>& aligned, const Var<T>& reference, const feat::FeatureExtractor<T>& phi,
                const CxOptions& opt = {}, const std::vector<std::string>& taps = {kDomainTap}) {
  return cx_loss_taps(aligned, reference, phi, taps, opt);
}

template <typename T>
Var<T> align_loss(const Var<T>& pseudo, const Var<T>& reference, const feat::FeatureExtractor<T>& phi,
                  const CxOptions& opt = {}, const std::vector<std::string>& taps = {kDomainTap}) {
  return cx_loss_taps(pseudo, reference, phi, taps, opt);
}

// ---------------------------------------------------------------------------
// Masked reconstruction terms

/// mean |M * (a - b)| over all elements; `mask` is a constant broadcast to a's shape.
template <typename T>
Var<T> masked_l1(const Var<T>& a, const Var<T>& b, const Var<T>& mask) {
  return ops::mean_abs(ops::mul(mask, ops::sub(a, b)));
}

/// mean |phi(M * a) - phi(M * b)| at the given tap.
template <typename T>
Var<T> masked_perceptual(const Var<T>& a, const Var<T>& b, const Var<T>& mask, const feat::FeatureExtractor<T>& phi,
                         const std::string& tap) {
  return ops::mean_abs(ops::sub(phi(ops::mul(mask, a), tap), phi(ops::mul(mask, b), tap)));
}

// ---------------------------------------------------------------------------
// Conditional PatchGAN

struct DiscriminatorConfig {
  std::vector<int> widths{32, 64, 128, 128};  // four k=2, s=2 stages: 16 px receptive field
  int image_channels = 3;
};

template <typename T>
struct DiscriminatorWeights {
  DiscriminatorConfig config;
  ag::ParameterSet<T> params;
  std::vector<nn::Conv2d<T>> convs;
  nn::Conv2d<T> head;

  static DiscriminatorWeights build(const DiscriminatorConfig& cfg, std::uint64_t seed) {
    DiscriminatorWeights d;
    d.config = cfg;
    nn::Rng rng(seed);
    int cin = 2 * cfg.image_channels;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      d.convs.push_back(nn::Conv2d<T>::make(d.params, "disc.conv" + std::to_string(i + 1), cin, cfg.widths[i], 2, 2, rng, true, 0));
      cin = cfg.widths[i];
    }
    d.head = nn::Conv2d<T>::make(d.params, "disc.head", cin, 1, 1, 1, rng, true, 0);
    return d;
  }

  /// Receptive field of one output score in input pixels.
  int receptive_field() const { return 1 << static_cast<int>(convs.size()); }
};

/// Per-patch logits for the pair (condition, candidate).
template <typename T>
Var<T> discriminator_logits(const DiscriminatorWeights<T>& d, const Var<T>& condition, const Var<T>& candidate) {
  Var<T> x = ops::concat_channels<T>({condition, candidate});
  for (const auto& c : d.convs) x = nn::lrelu(c(x));
  return d.head(x);
}

/// L_GAN = -mean log D(I_D, I_O): generator term, gradient flows into I_O.
template <typename T>
Var<T> generator_gan_loss(const DiscriminatorWeights<T>& d, const Var<T>& degraded, const Var<T>& restored) {
  return ops::mean_neg_log_sigmoid(discriminator_logits(d, degraded, restored));
}

/// L_D = -mean log D(I_D, I_P) - mean log(1 - D(I_D, I_O)), with I_O detached.
template <typename T>
Var<T> discriminator_loss(const DiscriminatorWeights<T>& d, const Var<T>& degraded, const Var<T>& pseudo,
                          const Var<T>& restored) {
  return ops::add(ops::mean_neg_log_sigmoid(discriminator_logits(d, degraded, pseudo)),
                  ops::mean_neg_log_one_minus_sigmoid(discriminator_logits(d, degraded, ops::detach(restored))));
}

struct GanLosses {
  double l_gan = 0;
  double l_d = 0;
};

template <typename T>
GanLosses gan_losses(const DiscriminatorWeights<T>& d, const Var<T>& degraded, const Var<T>& pseudo,
                     const Var<T>& restored) {
  ag::NoGradGuard guard;
  return {static_cast<double>(generator_gan_loss(d, degraded, restored).item()),
          static_cast<double>(discriminator_loss(d, degraded, pseudo, restored).item())};
}

/// Same losses from per-patch probability maps, log arguments clamped at eps.
inline GanLosses gan_losses_from_probabilities(const std::vector<double>& p_pseudo, const std::vector<double>& p_restored,
                                               double eps = 1e-8) {
  if (p_pseudo.empty() || p_restored.empty()) throw std::invalid_argument("gan_losses: empty score map");
  double real = 0, fake = 0, fake_inv = 0;
  for (double p : p_pseudo) real -= std::log(std::max(p, eps));
  for (double p : p_restored) {
    fake -= std::log(std::max(p, eps));
    fake_inv -= std::log(std::max(1.0 - p, eps));
  }
  const double nr = static_cast<double>(p_pseudo.size()), nf = static_cast<double>(p_restored.size());
  return {fake / nf, real / nr + fake_inv / nf};
}

// ---------------------------------------------------------------------------
// Restoration objective

struct LossWeights {
  double lambda_1 = 1e-2;
  double lambda_vgg = 1.0;
  double lambda_gan = 5e-3;
};

inline const std::string kPerceptualTap = "conv2_2";

template <typename T>
struct RestorationLoss {
  Var<T> total;
  double l1 = 0, perceptual = 0, gan = 0;
};

template <typename T>
RestorationLoss<T> restoration_loss(const Var<T>& restored, const Var<T>& pseudo, const Var<T>& degraded,
                                    const Var<T>& mask, const feat::FeatureExtractor<T>& phi,
                                    const DiscriminatorWeights<T>* disc, const LossWeights& w,
                                    const std::string& tap = kPerceptualTap) {
  RestorationLoss<T> r;
  Var<T> l1 = masked_l1(restored, pseudo, mask);
  Var<T> perc = masked_perceptual(restored, pseudo, mask, phi, tap);
  r.l1 = static_cast<double>(l1.item());
  r.perceptual = static_cast<double>(perc.item());
  r.total = ops::add(ops::scale(l1, static_cast<T>(w.lambda_1)), ops::scale(perc, static_cast<T>(w.lambda_vgg)));
  if (disc && w.lambda_gan != 0) {
    Var<T> g = generator_gan_loss(*disc, degraded, restored);
    r.gan = static_cast<double>(g.item());
    r.total = ops::add(r.total, ops::scale(g, static_cast<T>(w.lambda_gan)));
  }
  return r;
}

}  // namespace af::loss
