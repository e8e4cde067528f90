#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lftrack/graph.hpp"
#include "lftrack/nn.hpp"
#include "lftrack/track.hpp"
#include "lftrack/types.hpp"

namespace lftrack::grad {

// Scalar objective rebuilt from scratch on every call; must be deterministic
// in the store contents (fixed seeds, fixed masks).
using LossFn = std::function<ad::Var<double>(ad::Graph<double>&, nn::ParamStore<double>&)>;

struct GradIssue {
  std::string name;
  Index row = 0, col = 0;
  double analytic = 0, fd = 0, rel = 0;
};

struct GradReport {
  bool pass = false;
  double worst_rel = 0;
  std::string worst_param;
  std::size_t checked = 0;
  std::vector<GradIssue> failures;
};

// Analytic gradients of f at the store's current values, one matrix per
// parameter entry.
inline std::vector<MatXd> compute_grads(const LossFn& f, nn::ParamStore<double>& ps) {
  ad::Graph<double> g;
  ad::Var<double> loss = f(g, ps);
  ps.zero_grad();
  g.backward(loss.id);
  std::vector<MatXd> grads;
  grads.reserve(std::size_t(ps.size()));
  for (Index i = 0; i < ps.size(); ++i) grads.push_back(ps.entry(i).grad);
  return grads;
}

// Central-difference comparison of supplied gradients against f, sweeping
// every scalar of every parameter. Relative error uses a floor so near-zero
// pairs are compared absolutely, and pairs where both sides sit below the
// floor count as agreeing: there the finite difference is pure cancellation
// noise (structurally dead directions like an attention key bias).
inline GradReport fd_compare(const LossFn& f, nn::ParamStore<double>& ps,
                             const std::vector<MatXd>& grads, double eps = 1e-4,
                             double tol = 1e-4, double floor = 1e-6) {
  if (Index(grads.size()) != ps.size())
    throw ValidationError("gradient list does not match the parameter store");
  auto eval = [&]() {
    ad::Graph<double> g;
    const double v = f(g, ps).v()(0, 0);
    if (!std::isfinite(v)) throw NumericError("finite-difference probe produced a non-finite loss");
    return v;
  };
  GradReport rep;
  rep.pass = true;
  for (Index p = 0; p < ps.size(); ++p) {
    auto& e = ps.entry(p);
    const MatXd& ga = grads[std::size_t(p)];
    if (ga.rows() != e.value.rows() || ga.cols() != e.value.cols())
      throw ValidationError("gradient shape mismatch for " + e.name);
    for (Index i = 0; i < e.value.rows(); ++i)
      for (Index j = 0; j < e.value.cols(); ++j) {
        const double saved = e.value(i, j);
        e.value(i, j) = saved + eps;
        const double up = eval();
        e.value(i, j) = saved - eps;
        const double dn = eval();
        e.value(i, j) = saved;
        const double fd = (up - dn) / (2 * eps);
        const double mag = std::max(std::abs(ga(i, j)), std::abs(fd));
        const double rel = mag < floor ? 0.0 : std::abs(ga(i, j) - fd) / std::max(floor, mag);
        ++rep.checked;
        if (rel > rep.worst_rel) {
          rep.worst_rel = rel;
          rep.worst_param = e.name;
        }
        if (rel > tol) {
          rep.pass = false;
          if (rep.failures.size() < 16) rep.failures.push_back({e.name, i, j, ga(i, j), fd, rel});
        }
      }
  }
  return rep;
}

inline GradReport grad_check(const LossFn& f, nn::ParamStore<double>& ps, double eps = 1e-4,
                             double tol = 1e-4, double floor = 1e-6) {
  return fd_compare(f, ps, compute_grads(f, ps), eps, tol, floor);
}

// ---------------------------------------------------------------------------
// Standard component checks at toy dimensions. Each bundles its own store and
// a deterministic scalar objective over every parameter in it, built fresh on
// each evaluation so finite differences see the perturbed values.

struct ComponentCheck {
  std::string name;
  nn::ParamStore<double> ps;
  LossFn loss;
  double tol = 1e-4;
};

namespace detail {

inline MatXd rand_const(Rng& rng, Index r, Index c, double lo = -1.0, double hi = 1.0) {
  MatXd m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = rng.uniform(lo, hi);
  return m;
}

}  // namespace detail

inline std::vector<ComponentCheck> standard_checks(uint64_t seed = 1) {
  std::vector<ComponentCheck> checks;

  // Two-frame joint encoder: shared patch projection + positions + one
  // residual layer, both normalization placements.
  for (bool pre : {true, false}) {
    ComponentCheck c;
    c.name = pre ? "encoder_prenorm" : "encoder_postnorm";
    Rng rng(seed);
    const Index patch = 4, dim = 4, n = 4;  // 8x8 planes -> 4 tokens per frame
    nn::LinearP proj = nn::make_linear(c.ps, "proj", patch * patch * 3, dim, rng);
    const Index pos = c.ps.add("pos", nn::trunc_normal_init<double>(rng, n, dim));
    nn::EncoderLayerP layer = nn::make_encoder_layer(c.ps, "l0", dim, 2, rng);
    MatXd raw1 = nn::patch_tokens<double>({detail::rand_const(rng, 8, 8, 0.0, 1.0)}, patch);
    MatXd raw2 = nn::patch_tokens<double>({detail::rand_const(rng, 8, 8, 0.0, 1.0)}, patch);
    c.loss = [proj, pos, layer, raw1, raw2, pre](ad::Graph<double>& g,
                                                 nn::ParamStore<double>& ps) {
      ad::Var<double> p = nn::param(g, ps, pos);
      ad::Var<double> t1 = ad::add(nn::linear(ps, proj, ad::constant(g, raw1)), p);
      ad::Var<double> t2 = ad::add(nn::linear(ps, proj, ad::constant(g, raw2)), p);
      ad::Var<double> e = nn::encoder_layer(ps, layer, ad::concat_rows(t1, t2), pre);
      return ad::sum_all(ad::cmul(e, e));
    };
    checks.push_back(std::move(c));
  }

  // Masked side branch through the soft relation (the straight-through
  // estimator's backward path), both masking placements.
  for (auto mode : {nn::MaskMode::post_softmax, nn::MaskMode::pre_softmax}) {
    ComponentCheck c;
    c.name = mode == nn::MaskMode::post_softmax ? "gas_branch_post" : "gas_branch_pre";
    c.tol = 1e-3;
    Rng rng(seed + 1);
    gas::GasP p = gas::make_gas(c.ps, "gas", 4, rng);
    MatXd x = detail::rand_const(rng, 4, 4);
    gas::GasConfig<double> gcfg;
    gcfg.mask_mode = mode;
    gcfg.relax_soft = true;
    c.loss = [p, x, gcfg](ad::Graph<double>& g, nn::ParamStore<double>& ps) {
      ad::Var<double> y = gas::gas_branch(ps, p, ad::constant(g, x), gcfg);
      return ad::sum_all(ad::cmul(y, y));
    };
    checks.push_back(std::move(c));
  }

  // Reconstruction decoder: embedding, mask token, one decoder layer, and
  // the masked distance with its frozen target.
  {
    ComponentCheck c;
    c.name = "ssl_decoder";
    Rng rng(seed + 2);
    const Index dim = 4;
    nn::LinearP emb = nn::make_linear(c.ps, "emb", 2, dim, rng);
    ssl::DecoderP dec = ssl::make_decoder(c.ps, "dec", dim, 2, 1, rng);
    MatXd x = detail::rand_const(rng, 4, 2);
    MatXd positions = detail::rand_const(rng, 4, dim);
    // the loss freezes its target, so the target must be held fixed here or
    // finite differences would see a dependence the backward pass skips
    MatXd target = detail::rand_const(rng, 4, dim);
    ssl::TokenMask mask;
    mask.values = {1, 0, 0, 1};
    mask.count = 2;
    c.loss = [emb, dec, x, positions, target, mask](ad::Graph<double>& g,
                                                    nn::ParamStore<double>& ps) {
      ad::Var<double> e = nn::linear(ps, emb, ad::constant(g, x));
      ssl::DecodeConfig<double> dcfg;
      dcfg.training = false;
      ad::Var<double> d = ssl::decode(ps, dec, e, mask, positions, dcfg);
      return ssl::ssl_loss(d, ad::constant(g, target), mask);
    };
    checks.push_back(std::move(c));
  }

  // Dual-stream correlation head: backbone, depthwise correlation, fusion,
  // classification + regression heads, and both losses behind them.
  {
    ComponentCheck c;
    c.name = "track_head";
    Rng rng(seed + 3);
    const Index dim = 4;
    track::BackboneP bb = track::make_backbone(c.ps, "cnn", dim, rng);
    nn::LinearP fuse = nn::make_linear(c.ps, "fuse", 2 * dim, dim, rng);
    nn::LinearP cls = nn::make_linear(c.ps, "cls", dim, 1, rng);
    nn::LinearP reg = nn::make_linear(c.ps, "reg", dim, 4, rng);
    nn::LinearP side = nn::make_linear(c.ps, "side", dim, dim, rng);
    MatXd tmpl = track::plane_to_rows3<double>(detail::rand_const(rng, 8, 8, 0.0, 1.0));
    MatXd search = track::plane_to_rows3<double>(detail::rand_const(rng, 16, 16, 0.0, 1.0));
    MatXd extra_feat = detail::rand_const(rng, 4, dim);
    MatXd target = track::gaussian_target<double>(9.0, 9.0, 6.0, 6.0, 2, 8, 0);
    MatXd target_col(4, 1);
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 2; ++j) target_col(i * 2 + j, 0) = target(i, j);
    Box gt;
    gt.cx = 9;
    gt.cy = 9;
    gt.w = 6;
    gt.h = 6;
    c.loss = [bb, fuse, cls, reg, side, tmpl, search, extra_feat, target_col,
              gt](ad::Graph<double>& g, nn::ParamStore<double>& ps) {
      ad::Var<double> t = track::conv_backbone(ps, bb, ad::constant(g, tmpl), 8);
      ad::Var<double> s = track::conv_backbone(ps, bb, ad::constant(g, search), 16);
      ad::Var<double> corr_a = ad::depthwise_xcorr(t, s, 1, 1, 2, 2);
      ad::Var<double> corr_b = nn::linear(ps, side, ad::constant(g, extra_feat));
      ad::Var<double> fused = ad::gelu(track::fuse_streams(ps, fuse, corr_a, corr_b));
      ad::Var<double> l_cls =
          track::focal_loss(ad::sigmoid(nn::linear(ps, cls, fused)), target_col);
      ad::Var<double> box = track::decode_cell_box(nn::linear(ps, reg, fused), 1, 1, 2, 8, 0,
                                                   6.0, 6.0);
      ad::Var<double> l_reg = track::iou_loss(box, gt);
      return ad::add(l_cls, l_reg);
    };
    checks.push_back(std::move(c));
  }

  return checks;
}

}  // namespace lftrack::grad
