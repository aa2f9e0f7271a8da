// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "alignformer/alignformer.hpp"
#include "alignformer/gradcheck.hpp"

using namespace af;
using ag::Var;
namespace fs = std::filesystem;

namespace {

namespace tol {
constexpr double kAttentionWarp = 1e-5;
constexpr double kBruteForce = 1e-6;
constexpr double kGradStep = 1e-4;
constexpr double kGradRel = 1e-3;
constexpr double kCx = 1e-12;
constexpr double kLn2 = 1e-9;
constexpr double kPckMonotone = 1.0;  // percentage points
constexpr double kFrobenius = 1e-6;
constexpr double kReprojection = 1e-3;
constexpr double kMtfRelative = 0.05;
constexpr double kPriorRelative = 1e-12;
constexpr double kDamLossRatio = 0.5;
constexpr double kRestoreGainDb = 1.0;
constexpr double kRuntimeSeconds = 1800.0;
}  // namespace tol

struct Outcome {
  bool ok = true;
  std::string detail;
  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(s);
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

FlowField random_field(int h, int w, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, scale);
  FlowField f(h, w);
  for (float& v : f.values()) v = static_cast<float>(n(rng));
  return f;
}

const feat::FeatureExtractor<double>& phi() {
  static const feat::FeatureExtractor<double> p;
  return p;
}

// --- 1 -------------------------------------------------------------------------------------

Outcome occlusion() {
  Outcome o;
  auto all = [](const BinaryMask& m, int v) {
    return std::all_of(m.values().begin(), m.values().end(), [v](auto b) { return b == v; });
  };
  o.require(all(occlusion_mask(FlowField(16, 16), FlowField(16, 16)), 1), "zero fields not visible");
  o.require(all(occlusion_mask(FlowField(16, 16, 5, 0), FlowField(16, 16, -5, 0), {0.1, 1}), 1),
            "cancelling pair not visible");
  o.require(all(occlusion_mask(FlowField(16, 16, 5, 0), FlowField(16, 16), {0.1, 1}), 0),
            "inconsistent pair not occluded");

  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n(0, 3);
  std::uniform_real_distribution<double> ua(0.0, 0.5), ub(0.0, 3.0), grow(0.0, 1.0);
  int scale_bad = 0, mono_bad = 0;
  for (int k = 0; k < 100; ++k) {
    // Constant fields: bilinear lookups land on identical values before and after scaling.
    const double s = std::ldexp(1.0, static_cast<int>(k % 4) - 1);  // 0.5, 1, 2, 4
    const float fu = static_cast<float>(n(rng)), fv = static_cast<float>(n(rng));
    const float bu = static_cast<float>(n(rng)), bv = static_cast<float>(n(rng));
    const OcclusionParams p{ua(rng), ub(rng)};
    const BinaryMask a = occlusion_mask(FlowField(8, 8, fu, fv), FlowField(8, 8, bu, bv), p);
    const BinaryMask b = occlusion_mask(FlowField(8, 8, float(fu * s), float(fv * s)),
                                        FlowField(8, 8, float(bu * s), float(bv * s)), {p.alpha, p.beta * s});
    scale_bad += !(a == b);

    const FlowField f = random_field(12, 12, 3, 5000 + k), bw = random_field(12, 12, 3, 6000 + k);
    const OcclusionParams q{ua(rng), ub(rng)};
    const BinaryMask base = occlusion_mask(f, bw, q);
    const BinaryMask wider = occlusion_mask(f, bw, {q.alpha + grow(rng), q.beta + grow(rng)});
    for (std::size_t i = 0; i < base.values().size(); ++i) mono_bad += wider.values()[i] < base.values()[i];
  }
  o.require(scale_bad == 0, std::to_string(scale_bad) + " scale violations");
  o.require(mono_bad == 0, std::to_string(mono_bad) + " monotonicity violations");
  if (o.ok) o.detail = "3 examples, 100 scale pairs, 100 monotone pairs";
  return o;
}

// --- 2, 3, 4 ---------------------------------------------------------------------------------

Outcome grid_cardinality() {
  Outcome o;
  for (int r = 0; r <= 5; ++r) {
    const auto n = gam::local_grid({2.5, -1.25}, r).size();
    o.require(n == static_cast<std::size_t>(2 * r * r + 2 * r + 1), "r=" + std::to_string(r) + " has " + std::to_string(n));
  }
  if (o.ok) o.detail = "r=0..5: 1 5 13 25 41 61";
  return o;
}

Outcome radius_zero_is_warp() {
  Outcome o;
  double worst = 0;
  for (int k = 0; k < 20; ++k) {
    ag::ParameterSet<double> ps;
    nn::Rng rng(k);
    auto w = gam::ProjectionWeights<double>::make(ps, "p", 5, 4, rng);
    const Tensor<double> fd = random_tensor({1, 5, 7, 9}, 100 + k), fr = random_tensor({1, 5, 7, 9}, 200 + k);
    Tensor<double> flow = random_tensor({1, 2, 7, 9}, 300 + k, -3, 3);
    FlowField f(7, 9);
    for (int y = 0; y < 7; ++y)
      for (int x = 0; x < 9; ++x) {
        f.u(y, x) = static_cast<float>(flow(0, 0, y, x));
        f.v(y, x) = static_cast<float>(flow(0, 1, y, x));
        flow(0, 0, y, x) = f.u(y, x);
        flow(0, 1, y, x) = f.v(y, x);
      }
    const auto out = gam::flow_guided_attention(Var<double>(fd), Var<double>(fr), flow, 0, w).value();
    worst = std::max(worst, max_abs_diff(out, warp_planes(w.wv(Var<double>(fr)).value(), f)));
  }
  o.require(worst < tol::kAttentionWarp, "max diff " + num(worst));
  o.detail = o.ok ? "20 instances, max diff " + num(worst) : o.detail;
  return o;
}

Tensor<double> brute_force(const Tensor<double>& fd, const Tensor<double>& fr, const Tensor<double>& flow, int r,
                           const gam::ProjectionWeights<double>& w) {
  const int C = fd.c(), H = fd.h(), W = fd.w(), D = w.wq.out_channels();
  auto project = [&](const nn::Conv2d<double>& p, const Tensor<double>& f, int y, int x, int o) {
    double s = p.bias.value()[o];
    for (int c = 0; c < C; ++c) s += p.weight.value()(o, c, 0, 0) * f(0, c, y, x);
    return s;
  };
  auto sample = [&](const nn::Conv2d<double>& p, double sx, double sy, int o) {
    sx = std::clamp(sx, 0.0, W - 1.0);
    sy = std::clamp(sy, 0.0, H - 1.0);
    const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
    const int x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
    const double ax = sx - x0, ay = sy - y0;
    return (1 - ay) * ((1 - ax) * project(p, fr, y0, x0, o) + ax * project(p, fr, y0, x1, o)) +
           ay * ((1 - ax) * project(p, fr, y1, x0, o) + ax * project(p, fr, y1, x1, o));
  };
  Tensor<double> out(1, D, H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      std::vector<Point2> grid;
      const double cx = x + flow(0, 0, y, x), cy = y + flow(0, 1, y, x);
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
          if (std::abs(dx) + std::abs(dy) <= r) grid.push_back({cx + dx, cy + dy});
      std::vector<double> e;
      for (const auto& g : grid) {
        double dot = 0;
        for (int o = 0; o < D; ++o) dot += project(w.wq, fd, y, x, o) * sample(w.wk, g.x, g.y, o);
        e.push_back(dot / std::sqrt(static_cast<double>(D)));
      }
      const double mx = *std::max_element(e.begin(), e.end());
      double z = 0;
      for (double& v : e) z += (v = std::exp(v - mx));
      for (int o = 0; o < D; ++o) {
        double acc = 0;
        for (std::size_t j = 0; j < grid.size(); ++j) acc += e[j] / z * sample(w.wv, grid[j].x, grid[j].y, o);
        out(0, o, y, x) = acc;
      }
    }
  return out;
}

Outcome attention_brute_force() {
  Outcome o;
  double worst = 0;
  for (int r : {1, 2}) {
    for (int k = 0; k < 10; ++k) {
      ag::ParameterSet<double> ps;
      nn::Rng rng(100 * r + k);
      auto w = gam::ProjectionWeights<double>::make(ps, "p", 4, 4, rng);
      const Tensor<double> fd = random_tensor({1, 4, 4, 4}, 700 + k), fr = random_tensor({1, 4, 4, 4}, 800 + k);
      const Tensor<double> flow = random_tensor({1, 2, 4, 4}, 900 + k, -2, 2);
      const auto out = gam::flow_guided_attention(Var<double>(fd), Var<double>(fr), flow, r, w).value();
      worst = std::max(worst, max_abs_diff(out, brute_force(fd, fr, flow, r, w)));
    }
  }
  o.require(worst < tol::kBruteForce, "max diff " + num(worst));
  o.detail = o.ok ? "H=W=C=d=4, r in {1,2}, 20 instances, max diff " + num(worst) : o.detail;
  return o;
}

// --- 5 -----------------------------------------------------------------------------------------

Outcome gradients() {
  Outcome o;
  std::vector<std::pair<std::string, double>> errs;
  auto check = [&](const std::string& name, const std::function<Var<double>()>& f, const std::vector<Var<double>>& in) {
    const auto r = ag::check_gradients(f, in, tol::kGradStep);
    errs.emplace_back(name, r.relative_error);
    o.require(r.relative_error < tol::kGradRel, name + " rel " + num(r.relative_error));
  };
  {
    auto w = dam::DamWeights<double>::build({4, 4, 3, 0.3}, 11);
    Var<double> x(random_tensor({1, 3, 16, 16}, 12, 0, 1), true), ref(random_tensor({1, 3, 16, 16}, 13, 0, 1), true);
    const Var<double> probe(random_tensor({1, 3, 16, 16}, 14));
    check("dam", [&] { return ops::sum(ops::mul(dam::dam_forward(w, x, ref), probe)); }, {x, ref});
  }
  {
    ag::ParameterSet<double> ps;
    nn::Rng rng(4);
    auto w = gam::AttentionBlockWeights<double>::make(ps, "b", 3, 4, rng);
    Var<double> fd(random_tensor({1, 3, 4, 4}, 5), true), fr(random_tensor({1, 3, 4, 4}, 6), true);
    const Tensor<double> flow = random_tensor({1, 2, 4, 4}, 7, -1.3, 1.3);
    const Var<double> probe(random_tensor({1, 4, 4, 4}, 8));
    std::vector<Var<double>> in{fd, fr};
    for (const auto& [n, v] : ps.entries()) in.push_back(v);
    check("attention", [&] { return ops::sum(ops::mul(gam::attention_block(fd, fr, flow, 2, w), probe)); }, in);
  }
  {
    ag::ParameterSet<double> ps;
    nn::Rng rng(3);
    ppm::PpmConfig cfg;
    auto w = ppm::PpmWeights<double>::make(ps, "ppm", 8, cfg, rng);
    Var<double> x(random_tensor({1, 8, 6, 6}, 4), true);
    const Var<double> probe(random_tensor({1, 8, 6, 6}, 5));
    check("ppm", [&] { return ops::sum(ops::mul(ppm::ppm_forward(x, cfg, w), probe)); }, {x});
  }
  {
    Var<double> x(random_tensor({2, 4, 3, 3}, 7), true), y(random_tensor({2, 4, 2, 3}, 8), true);
    check("cx", [&] { return loss::cx_loss_features(x, y); }, {x, y});
  }
  {
    Var<double> a(random_tensor({1, 3, 8, 8}, 2, 0, 1), true);
    const Var<double> b(random_tensor({1, 3, 8, 8}, 3, 0, 1));
    Tensor<double> m(1, 3, 8, 8, 1.0);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 8; ++y) m(0, c, y, 0) = 0;
    const Var<double> mask(m);
    check("masked_l1", [&] { return loss::masked_l1(a, b, mask); }, {a});
    check("masked_perceptual", [&] { return loss::masked_perceptual(a, b, mask, phi(), "conv2_2"); }, {a});
    auto d = loss::DiscriminatorWeights<double>::build({{4, 4}}, 5);
    Var<double> x(random_tensor({1, 3, 8, 8}, 6, 0, 1), true);
    check("gan", [&] { return loss::generator_gan_loss(d, b, x); }, {x});
  }
  if (o.ok) {
    double worst = 0;
    for (const auto& [n, e] : errs) worst = std::max(worst, e);
    o.detail = std::to_string(errs.size()) + " components, worst rel " + num(worst);
  }
  return o;
}

// --- 6, 7 --------------------------------------------------------------------------------------

Outcome cx_truths() {
  Outcome o;
  const Tensor<double> x = random_tensor({2, 3, 16, 16}, 1, 0, 1);
  o.require(std::abs(loss::cx_loss(Var<double>(x), Var<double>(x), phi(), "conv4_4").item()) < tol::kCx, "self not 0");

  Tensor<double> a(1, 2, 1, 2), b(1, 2, 1, 2);
  a(0, 0, 0, 0) = 1;
  a(0, 1, 0, 1) = 1;
  b(0, 0, 0, 0) = 1;
  b(0, 0, 0, 1) = 1;
  loss::CxOptions none;
  none.center = loss::CxCenter::kNone;
  const double toy = loss::cx_loss_features(Var<double>(a), Var<double>(b), none).item();
  o.require(std::abs(toy - 0.5) < tol::kCx, "toy value " + num(toy));

  const Tensor<double> f = random_tensor({1, 5, 4, 6}, 2), g = random_tensor({1, 5, 3, 5}, 3);
  Tensor<double> gp(g.shape());
  std::vector<int> perm(15);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937(4));
  for (int c = 0; c < 5; ++c)
    for (int i = 0; i < 15; ++i) gp.plane(0, c)[i] = g.plane(0, c)[perm[i]];
  const double p1 = loss::cx_loss_features(Var<double>(f), Var<double>(g)).item();
  const double p2 = loss::cx_loss_features(Var<double>(f), Var<double>(gp)).item();
  o.require(std::abs(p1 - p2) < tol::kCx, "not permutation invariant");

  const Tensor<double> u = random_tensor({1, 3, 16, 16}, 5, 0, 1), v = random_tensor({1, 3, 16, 16}, 6, 0.2, 0.6);
  const double uv = loss::cx_loss(Var<double>(u), Var<double>(v), phi(), "conv4_4").item();
  const double vu = loss::cx_loss(Var<double>(v), Var<double>(u), phi(), "conv4_4").item();
  o.require(uv >= 0 && vu >= 0, "negative value");
  o.require(std::abs(uv - vu) > 1e-6, "symmetric on a generic pair");
  if (o.ok) o.detail = "self 0, toy 0.5, permutation invariant, non-negative, asymmetric";
  return o;
}

Outcome gan_arithmetic() {
  Outcome o;
  const auto l = loss::gan_losses_from_probabilities(std::vector<double>(16, 0.5), std::vector<double>(16, 0.5));
  o.require(std::abs(l.l_gan - std::log(2.0)) < tol::kLn2, "L_GAN " + num(l.l_gan));
  o.require(std::abs(l.l_d - 2 * std::log(2.0)) < tol::kLn2, "L_D " + num(l.l_d));
  auto d = loss::DiscriminatorWeights<double>::build({}, 1);
  for (const auto& [n, v] : d.params.entries()) v.node()->value.fill(0);
  const Var<double> x(random_tensor({2, 3, 64, 64}, 4, 0, 1));
  const auto g = loss::gan_losses(d, x, x, x);
  o.require(std::abs(g.l_gan - std::log(2.0)) < tol::kLn2, "network L_GAN " + num(g.l_gan));
  o.require(std::abs(g.l_d - 2 * std::log(2.0)) < tol::kLn2, "network L_D " + num(g.l_d));
  if (o.ok) o.detail = "D=0.5: L_GAN=ln2, L_D=2ln2 (closed form and network)";
  return o;
}

// --- 8, 9 --------------------------------------------------------------------------------------

Outcome pck_properties() {
  Outcome o;
  const std::vector<Correspondence> same{{{1, 2}, {1, 2}}, {{50, 60}, {50, 60}}};
  for (double a : {1e-4, 0.01, 0.1}) o.require(metrics::pck(same, a, 100, 100) == 100.0, "identity below 100%");
  std::vector<Correspondence> off;
  for (int i = 0; i < 10; ++i) off.push_back({{double(i), 0}, {double(i) + 3, 4}});
  o.require(metrics::pck(off, 0.004, 1000, 1000) == 0.0, "5 px counted at 4 px threshold");
  o.require(metrics::pck(off, 0.006, 1000, 1000) == 100.0, "5 px missed at 6 px threshold");

  data::SceneRandomization r;
  r.out_size = 256;
  r.base_margin = 64;
  r.photometric = false;
  std::vector<data::ScenePair> scenes;
  for (int i = 0; i < 8; ++i) scenes.push_back(data::make_synthetic_scene(r, 300 + i));
  const std::vector<double> sigmas{0, 2, 4, 8}, alphas{0.01, 0.03, 0.10};
  const auto t = metrics::perturbation_study(scenes, sigmas, alphas, FlowKind::kOracle, 17);
  std::ostringstream rows;
  for (std::size_t j = 0; j < alphas.size(); ++j) {
    rows << (j ? " | " : "") << "a=" << alphas[j] << ":";
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
      rows << ' ' << num(t.pck[i][j]);
      if (i) o.require(t.pck[i][j] <= t.pck[i - 1][j] + tol::kPckMonotone, "rise at sigma " + num(sigmas[i]));
    }
  }
  for (std::size_t i = 0; i < sigmas.size(); ++i)
    for (std::size_t j = 1; j < alphas.size(); ++j)
      o.require(t.pck[i][j] + tol::kPckMonotone >= t.pck[i][j - 1], "falls with alpha");
  if (o.ok) o.detail = "identity 100%, 5 px flip, 8x256^2 " + rows.str();
  return o;
}

Outcome ransac() {
  Outcome o;
  Homography H = Homography::similarity(12, 1.1, 15, -8, 320, 240);
  H.h[6] = 2e-4;
  H.h[7] = -1e-4;
  H = H.normalized();
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ux(0, 640), uy(0, 480);
  CorrespondenceSet clean;
  for (int i = 0; i < 60; ++i) {
    const Point2 p{ux(rng), uy(rng)};
    clean.pairs.push_back({p, H.apply(p)});
  }
  const auto exact = reg::estimate_homography_ransac(CorrespondenceSet{{clean.pairs.begin(), clean.pairs.begin() + 8}});
  const double frob = exact.homography.frobenius_distance(H);
  o.require(frob < tol::kFrobenius, "Frobenius " + num(frob));

  CorrespondenceSet s = clean;
  for (int i = 0; i < 60; ++i) s.pairs.push_back({{ux(rng), uy(rng)}, {ux(rng), uy(rng)}});
  std::shuffle(s.pairs.begin(), s.pairs.end(), std::mt19937_64(6));
  std::vector<bool> truth;
  for (const auto& c : s.pairs) truth.push_back(reg::reprojection_error(H, c) < 1e-6);
  reg::RansacOptions opt;
  opt.seed = 9;
  const auto r = reg::estimate_homography_ransac(s, opt);
  o.require(r.inliers == truth, "inlier set differs");
  double worst = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (truth[i]) worst = std::max(worst, reg::reprojection_error(r.homography, s.pairs[i]));
  o.require(worst < tol::kReprojection, "reprojection " + num(worst));
  if (o.ok) o.detail = "Frobenius " + num(frob) + ", 60/120 inliers exact, reprojection " + num(worst);
  return o;
}

// --- 10 ----------------------------------------------------------------------------------------

Outcome mtf(const io::KeyValues& run) {
  Outcome o;
  std::ostringstream os;
  for (double sigma : {1.0, 2.0, 4.0}) {
    const auto c = metrics::mtf_slanted_edge(data::slanted_edge_chart(128, 256, 5.0, 0.2, 0.8, sigma));
    const double ratio = c.mtf50 / metrics::gaussian_mtf50(sigma);
    os << "s" << sigma << " " << num(ratio) << " ";
    o.require(std::abs(ratio - 1) < tol::kMtfRelative, "sigma " + num(sigma) + " ratio " + num(ratio));
  }
  const auto sharp = metrics::mtf_slanted_edge(data::slanted_edge_chart(128, 256, 4, 0.2, 0.8, 1.0));
  const auto blurry = metrics::mtf_slanted_edge(data::slanted_edge_chart(128, 256, 4, 0.2, 0.8, 2.5));
  bool dominates = sharp.frequencies == blurry.frequencies;
  for (std::size_t i = 0; dominates && i < sharp.modulation.size() && sharp.frequencies[i] <= 0.5; ++i)
    dominates = sharp.modulation[i] + 1e-3 >= blurry.modulation[i];
  o.require(dominates, "sharper edge does not dominate");
  if (run.contains("mtf50.degraded")) {
    const double d = std::stod(run.at("mtf50.degraded")), r = std::stod(run.at("mtf50.restored")),
                 f = std::stod(run.at("mtf50.reference"));
    os << "| degraded " << num(d) << " restored " << num(r) << " reference " << num(f);
    o.require(d < r && r < f, "ordering degraded<restored<reference broken");
  } else {
    o.require(false, "no end-to-end MTF");
  }
  o.detail = o.ok ? os.str() : o.detail + " [" + os.str() + "]";
  return o;
}

// --- 11, 12 ------------------------------------------------------------------------------------

Outcome shape_traces() {
  Outcome o;
  ag::NoGradGuard g;
  {
    auto w = dam::DamWeights<float>::build({}, 1);
    nn::ShapeTrace t;
    const Var<float> img(Tensor<float>(1, 3, 256, 256, 0.5f));
    dam::dam_forward(w, img, img, &t);
    const std::vector<Shape> expected = {
        {1, 64, 256, 256}, {1, 64, 128, 128}, {1, 64, 128, 128}, {1, 64, 64, 64},   {1, 64, 64, 64},
        {1, 64, 1, 1},     {1, 64, 256, 256}, {1, 64, 128, 128}, {1, 64, 128, 128}, {1, 64, 64, 64},
        {1, 64, 64, 64},   {1, 64, 64, 64},   {1, 64, 64, 64},   {1, 64, 128, 128}, {1, 64, 128, 128},
        {1, 64, 256, 256}, {1, 64, 256, 256}, {1, 3, 256, 256}};
    bool same = t.rows.size() == expected.size();
    for (std::size_t i = 0; same && i < expected.size(); ++i) same = t.rows[i].second == expected[i];
    o.require(same, "DAM trace differs");
  }
  {
    auto w = ppm::PpmUnetWeights<float>::build({}, 1);
    nn::ShapeTrace t;
    ppm::ppmunet_forward(w, Var<float>(Tensor<float>(1, 3, 256, 256, 0.5f)), &t);
    const std::vector<std::pair<std::string, Shape>> expected = {
        {"Conv1", {1, 32, 256, 256}},    {"Conv2", {1, 64, 128, 128}},   {"Conv3", {1, 64, 128, 128}},
        {"PPM1", {1, 64, 128, 128}},     {"Conv4", {1, 128, 64, 64}},    {"Conv5", {1, 128, 64, 64}},
        {"PPM2", {1, 128, 64, 64}},      {"Conv6", {1, 128, 32, 32}},    {"Conv7", {1, 128, 32, 32}},
        {"PPM3", {1, 128, 32, 32}},      {"Conv8", {1, 128, 32, 32}},    {"Conv9", {1, 128, 32, 32}},
        {"Add3", {1, 128, 32, 32}},      {"Upsample", {1, 128, 64, 64}}, {"Conv10", {1, 128, 64, 64}},
        {"Conv11", {1, 128, 64, 64}},    {"Add2", {1, 128, 64, 64}},     {"Upsample", {1, 128, 128, 128}},
        {"Conv12", {1, 64, 128, 128}},   {"Conv13", {1, 64, 128, 128}},  {"Add1", {1, 64, 128, 128}},
        {"Upsample", {1, 64, 256, 256}}, {"Conv14", {1, 32, 256, 256}},  {"Conv15", {1, 32, 256, 256}},
        {"Conv16", {1, 3, 256, 256}}};
    o.require(t.rows == expected, "PPM-UNet trace differs");
  }
  if (o.ok) o.detail = "guidance/matching net 18 rows, restoration net 25 rows at 256x256";
  return o;
}

Outcome global_prior() {
  Outcome o;
  double ratio[2] = {0, 0};
  for (bool use : {true, false}) {
    ppm::PpmUnetConfig cfg;
    cfg.widths = {4, 8, 8, 8};
    cfg.use_ppm = use;
    auto net = ppm::PpmUnetWeights<double>::build(cfg, 9);
    Var<double> img(random_tensor({1, 3, 128, 128}, 10), true);
    const auto out = ppm::ppmunet_forward(net, img);
    Tensor<double> seed(out.shape());
    seed(0, 0, 0, 0) = 1;
    ag::backward(ops::sum(ops::mul(out, Var<double>(seed))));
    double far = 0, near = 0;
    for (int c = 0; c < 3; ++c) {
      far = std::max(far, std::abs(img.grad()(0, c, 127, 127)));
      near = std::max(near, std::abs(img.grad()(0, c, 0, 0)));
    }
    ratio[use ? 0 : 1] = far / near;
  }
  o.require(ratio[0] > 0, "no far gradient with PPM");
  o.require(ratio[1] < tol::kPriorRelative, "far gradient without PPM " + num(ratio[1]));
  if (o.ok) o.detail = "far/near gradient " + num(ratio[0]) + " with PPM, " + num(ratio[1]) + " without";
  return o;
}

// --- 13, 14 ------------------------------------------------------------------------------------

struct DeskRun {
  pipe::PipelineConfig cfg;
  pipe::StageResult dam, align, pseudo, restore;
  io::KeyValues eval;
  double seconds = 0;
  std::string error;
};

DeskRun run_desk(const fs::path& out) {
  DeskRun r;
  r.cfg = pipe::desk_preset();
  r.cfg.paths.out = out.string();
  const auto t0 = std::chrono::steady_clock::now();
  auto lap = [&](const char* s) {
    std::cerr << "  [" << s << " done at "
              << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s]\n";
  };
  try {
    pipe::gen_data(r.cfg);
    r.dam = pipe::train_dam(r.cfg);
    lap("dam");
    r.align = pipe::train_alignformer(r.cfg);
    lap("alignformer");
    r.pseudo = pipe::gen_pseudo(r.cfg);
    r.restore = pipe::train_restoration(r.cfg);
    lap("restoration");
    r.eval = pipe::evaluate(r.cfg);
    lap("evaluation");
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

double value(const io::KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw std::runtime_error("missing metric " + key);
  return std::stod(it->second);
}

Outcome end_to_end(const DeskRun& r) {
  Outcome o;
  if (!r.error.empty()) {
    o.require(false, "pipeline error: " + r.error);
    return o;
  }
  const double l0 = value(r.dam.metrics, "loss.first_window_mean"), l1 = value(r.dam.metrics, "loss.last_window_mean");
  o.require(l1 <= tol::kDamLossRatio * l0, "(a) DAM loss " + num(l0) + " -> " + num(l1));
  const auto& am = r.align.metrics;
  o.require(am.at("dam_hash.before") == am.at("dam_hash.after") && am.at("dam_hash.after") == am.at("dam_hash.file_after"),
            "(b) DAM hash changed");
  const double pseudo = value(r.eval, "pck.pseudo@0.03"), ref = value(r.eval, "pck.reference@0.03");
  o.require(pseudo >= ref, "(c) PCK pseudo " + num(pseudo) + " < reference " + num(ref));
  const double restored = value(r.eval, "test.restored.psnr"), identity = value(r.eval, "test.identity.psnr");
  o.require(value(r.eval, "test.scenes") == 8, "(d) held-out split is not 8 scenes");
  o.require(restored - identity >= tol::kRestoreGainDb,
            "(d) restored " + num(restored) + " dB vs identity " + num(identity) + " dB");
  const double zero = value(r.eval, "ablation.flow.zero.pck@0.03"), oracle = value(r.eval, "ablation.flow.oracle.pck@0.03");
  o.require(zero < oracle, "(e) zero-flow PCK " + num(zero) + " >= oracle " + num(oracle));
  o.require(r.seconds < tol::kRuntimeSeconds, "runtime " + num(r.seconds) + " s");
  std::ostringstream os;
  os << "DAM loss " << num(l0) << "->" << num(l1) << ", PCK@0.03 pseudo " << num(pseudo) << " ref " << num(ref)
     << ", PSNR " << num(restored) << " vs " << num(identity) << " dB, flow zero " << num(zero) << " oracle "
     << num(oracle) << ", " << num(r.seconds) << " s";
  o.detail = o.ok ? os.str() : o.detail + " [" + os.str() + "]";
  return o;
}

std::string bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

Outcome determinism(const DeskRun& r) {
  Outcome o;
  pipe::PipelineConfig c = r.cfg;
  c.dam.training.iterations = 30;
  c.restoration.training.iterations = 30;
  std::string dam_bytes[2], restore_bytes[2];
  for (int k = 0; k < 2; ++k) {
    c.paths.dam = "determinism_dam_" + std::to_string(k);
    c.paths.restoration = "determinism_restore_" + std::to_string(k);
    dam_bytes[k] = bytes(pipe::train_dam(c).checkpoint);
    restore_bytes[k] = bytes(pipe::train_restoration(c).checkpoint);
  }
  o.require(!dam_bytes[0].empty() && dam_bytes[0] == dam_bytes[1], "DAM checkpoints differ");
  o.require(!restore_bytes[0].empty() && restore_bytes[0] == restore_bytes[1], "restoration checkpoints differ");

  const auto j = pipe::to_json(r.cfg);
  o.require(pipe::to_json(pipe::config_from_json(j)) == j, "config JSON round trip");
  const fs::path saved = fs::path(r.cfg.paths.out) / "roundtrip.json";
  pipe::save_config(saved, r.cfg);
  o.require(pipe::to_json(pipe::load_config(saved)) == j, "config file round trip");
  const fs::path metrics = pipe::stage_dir(r.cfg, pipe::Stage::kEval) / "metrics.txt";
  o.require(!r.eval.empty() && io::read_key_values(metrics) == r.eval, "metrics file round trip");
  if (o.ok) o.detail = "2x30-iteration DAM and restoration checkpoints identical, config and metrics round trip";
  return o;
}

Outcome guarded(const std::function<Outcome()>& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    return {false, std::string("exception: ") + e.what()};
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::string workdir = "acceptance_run";
  app.add_option("--workdir", workdir, "scratch directory for the end-to-end run");
  CLI11_PARSE(app, argc, argv);

  const fs::path out = fs::path(workdir) / "desk";
  fs::remove_all(out);
  fs::create_directories(out);

  std::cerr << "end-to-end desk run in " << out.string() << '\n';
  const DeskRun desk = run_desk(out);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"occlusion mask examples, scale consistency, monotonicity", occlusion},
      {"local grid cardinality", grid_cardinality},
      {"radius-0 attention equals warped values", radius_zero_is_warp},
      {"attention matches brute force", attention_brute_force},
      {"finite-difference gradient checks", gradients},
      {"contextual loss truths", cx_truths},
      {"adversarial loss arithmetic", gan_arithmetic},
      {"PCK identity, threshold and perturbation monotonicity", pck_properties},
      {"RANSAC homography recovery", ransac},
      {"MTF50 oracle and sharpness ordering", [&] { return mtf(desk.eval); }},
      {"network shape traces", shape_traces},
      {"pyramid pooling global prior", global_prior},
      {"end-to-end desk run", [&] { return end_to_end(desk); }},
      {"determinism and round trips", [&] { return determinism(desk); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const Outcome o = guarded(criteria[i].second);
    failed += !o.ok;
    std::cout << (o.ok ? "PASS" : "FAIL") << ' ' << std::setw(2) << i + 1 << ' ' << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
  return failed ? 1 : 0;
}
