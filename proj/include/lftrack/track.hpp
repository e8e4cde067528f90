#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "lftrack/gas.hpp"
#include "lftrack/graph.hpp"
#include "lftrack/nn.hpp"
#include "lftrack/rng.hpp"
#include "lftrack/ssl.hpp"
#include "lftrack/types.hpp"

namespace lftrack::track {

using ad::Graph;
using ad::Var;
using nn::ParamStore;

// ---------------------------------------------------------------------------
// Convolution plumbing: gather tables + strided stages.

// Row-gather table for a k x k convolution over an h x w plane (row-major
// y*w+x), entries -1 where the receptive field leaves the plane (zero pad).
inline MatXi conv_table(Index h, Index w, Index k, Index stride, Index pad) {
  if (h < 1 || w < 1 || k < 1 || stride < 1 || pad < 0)
    throw ValidationError("conv table: bad geometry");
  const Index ho = (h + 2 * pad - k) / stride + 1;
  const Index wo = (w + 2 * pad - k) / stride + 1;
  if (ho < 1 || wo < 1) throw ValidationError("conv table: kernel larger than padded input");
  MatXi t(ho * wo, k * k);
  for (Index oy = 0; oy < ho; ++oy)
    for (Index ox = 0; ox < wo; ++ox)
      for (Index ky = 0; ky < k; ++ky)
        for (Index kx = 0; kx < k; ++kx) {
          const Index sy = oy * stride - pad + ky;
          const Index sx = ox * stride - pad + kx;
          const bool in = sy >= 0 && sy < h && sx >= 0 && sx < w;
          t(oy * wo + ox, ky * k + kx) = in ? int(sy * w + sx) : -1;
        }
  return t;
}

struct ConvStageP {
  nn::LinearP lin;  // (k*k*Cin) x Cout weight + bias
  Index k = 3, stride = 2, pad = 1;
};

template <typename S>
ConvStageP make_conv_stage(ParamStore<S>& ps, const std::string& prefix, Index cin, Index cout,
                           Rng& rng) {
  ConvStageP p;
  p.lin = nn::make_linear(ps, prefix, p.k * p.k * cin, cout, rng);
  return p;
}

// x holds pixels as rows (h*w, Cin); returns (ho*wo, Cout) after the affine
// map and a smooth nonlinearity.
template <typename S>
Var<S> conv_stage(ParamStore<S>& ps, const ConvStageP& p, Var<S> x, Index h, Index w) {
  if (x.rows() != h * w) throw ValidationError("conv stage: pixel row count mismatch");
  return ad::gelu(nn::linear(ps, p.lin, ad::im2col(x, conv_table(h, w, p.k, p.stride, p.pad))));
}

struct BackboneP {
  ConvStageP s1, s2, s3;  // channels 3 -> 16 -> 32 -> C_emb, stride 2 each
};

template <typename S>
BackboneP make_backbone(ParamStore<S>& ps, const std::string& prefix, Index c_emb, Rng& rng) {
  BackboneP p;
  p.s1 = make_conv_stage(ps, prefix + ".s1", 3, 16, rng);
  p.s2 = make_conv_stage(ps, prefix + ".s2", 16, 32, rng);
  p.s3 = make_conv_stage(ps, prefix + ".s3", 32, c_emb, rng);
  return p;
}

// Replicate a single plane into the (pixels, 3) row layout the backbone eats.
template <typename S>
MatX<S> plane_to_rows3(const MatX<S>& plane) {
  MatX<S> out(plane.rows() * plane.cols(), 3);
  for (Index y = 0; y < plane.rows(); ++y)
    for (Index x = 0; x < plane.cols(); ++x)
      out.row(y * plane.cols() + x).setConstant(plane(y, x));
  return out;
}

template <typename S>
Var<S> conv_backbone(ParamStore<S>& ps, const BackboneP& p, Var<S> x, Index side) {
  if (side % 8 != 0) throw ValidationError("backbone input side must be divisible by 8");
  Var<S> a = conv_stage(ps, p.s1, x, side, side);
  Var<S> b = conv_stage(ps, p.s2, a, side / 2, side / 2);
  return conv_stage(ps, p.s3, b, side / 4, side / 4);
}

// ---------------------------------------------------------------------------
// Window cropping with an affine record mapping crop pixels back to frame
// pixels: frame = origin + (crop + 0.5) * scale - 0.5.

template <typename S>
struct CropResult {
  MatX<S> plane;
  double origin_x = 0, origin_y = 0;
  double scale = 1;

  double to_frame_x(double cx) const { return origin_x + (cx + 0.5) * scale - 0.5; }
  double to_frame_y(double cy) const { return origin_y + (cy + 0.5) * scale - 0.5; }
  double to_crop_x(double fx) const { return (fx + 0.5 - origin_x) / scale - 0.5; }
  double to_crop_y(double fy) const { return (fy + 0.5 - origin_y) / scale - 0.5; }
};

// Square window of `side` frame pixels centered at (cx, cy), shifted to stay
// inside the frame, resampled bilinearly to out x out.
template <typename S>
CropResult<S> crop_window(const MatX<S>& image, double cx, double cy, double side, Index out) {
  const Index h = image.rows(), w = image.cols();
  if (out < 1) throw ValidationError("crop: output side must be positive");
  if (!(side > 0)) throw ValidationError("crop: window side must be positive");
  side = std::min(side, double(std::min(h, w)));
  CropResult<S> r;
  r.scale = side / double(out);
  r.origin_x = std::clamp(cx - side / 2, 0.0, double(w) - side);
  r.origin_y = std::clamp(cy - side / 2, 0.0, double(h) - side);
  r.plane.resize(out, out);
  for (Index oy = 0; oy < out; ++oy)
    for (Index ox = 0; ox < out; ++ox) {
      const double sx = std::clamp(r.to_frame_x(double(ox)), 0.0, double(w - 1));
      const double sy = std::clamp(r.to_frame_y(double(oy)), 0.0, double(h - 1));
      const Index x0 = Index(std::floor(sx)), y0 = Index(std::floor(sy));
      const Index x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const double fx = sx - double(x0), fy = sy - double(y0);
      r.plane(oy, ox) = S((1 - fy) * ((1 - fx) * double(image(y0, x0)) + fx * double(image(y0, x1))) +
                          fy * ((1 - fx) * double(image(y1, x0)) + fx * double(image(y1, x1))));
    }
  return r;
}

// ---------------------------------------------------------------------------
// Model configuration and parameters.

struct ModelConfig {
  Index patch = 8;
  Index c_emb = 32;
  Index depth = 2;
  Index heads = 2;
  bool norm_pre = true;
  bool gas_enabled = true;
  nn::MaskMode mask_mode = nn::MaskMode::post_softmax;
  gas::RelationMode relation_mode = gas::RelationMode::full;
  double tau = 1.0;
  Index decoder_depth = 4;
  Index decoder_heads = 2;
  double p_drop = 0.3;
  double rho = 0.5;
  Index template_size = 32;
  Index search_size = 64;
  double search_scale = 4.0;
  double template_scale = 2.0;
  // Fraction of the per-frame size estimate blended into the tracked box.
  // The regressed scale at a single cell is noisy, and the search window and
  // size prior both feed back from the previous box, so undamped updates
  // random-walk the box size; 1 disables smoothing.
  double size_damping = 0.3;

  Index grid() const { return search_size / patch; }          // encoder map side
  Index kernel() const { return template_size / 8; }          // correlation kernel side
  Index corr() const { return grid() - kernel() + 1; }        // correlation map side
  Index tokens_per_frame() const { return grid() * grid(); }

  void validate() const {
    if (patch < 1 || c_emb < 1 || depth < 0 || heads < 1 || decoder_depth < 0 || decoder_heads < 1)
      throw ValidationError("model config: dims must be positive");
    if (c_emb % heads != 0 || c_emb % decoder_heads != 0)
      throw ValidationError("model config: embedding dim must be divisible by head counts");
    if (search_size % patch != 0) throw ValidationError("model config: patch must divide search size");
    if (search_size % 8 != 0 || template_size % 8 != 0)
      throw ValidationError("model config: crop sides must be divisible by 8");
    if (template_size * 2 != search_size)
      throw ValidationError("model config: search size must be twice the template size");
    if (kernel() >= grid() || kernel() < 1)
      throw ValidationError("model config: correlation kernel must be smaller than the search map");
    if ((grid() - kernel()) % 2 != 0)
      throw ValidationError("model config: kernel must sit centered in the search map");
    if (!(tau > 0) || !(search_scale > 0) || !(template_scale > 0))
      throw ValidationError("model config: scales and temperature must be positive");
    if (!(rho > 0 && rho < 1)) throw ValidationError("model config: mask rate must lie in (0,1)");
    if (!(p_drop >= 0 && p_drop <= 1)) throw ValidationError("model config: dropout rate must lie in [0,1]");
    if (!(size_damping > 0 && size_damping <= 1))
      throw ValidationError("model config: size damping must lie in (0,1]");
  }
};

struct TrackModelP {
  nn::LinearP patch_proj;
  Index pos = -1;  // (N, C) learned positions, shared by both frames
  std::vector<nn::EncoderLayerP> layers;
  std::vector<gas::GasP> gas_layers;
  ssl::DecoderP decoder;
  BackboneP backbone;
  nn::LinearP fuse;      // 2C -> C
  nn::LinearP cls_head;  // C -> 1
  nn::LinearP reg_head;  // C -> 4 (dx, dy, dw, dh)
};

template <typename S>
TrackModelP make_track_model(ParamStore<S>& ps, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  TrackModelP m;
  m.patch_proj = nn::make_linear(ps, "enc.proj", cfg.patch * cfg.patch * 3, cfg.c_emb, rng);
  m.pos = ps.add("enc.pos", nn::trunc_normal_init<S>(rng, cfg.tokens_per_frame(), cfg.c_emb));
  for (Index l = 0; l < cfg.depth; ++l) {
    m.layers.push_back(
        nn::make_encoder_layer(ps, "enc.l" + std::to_string(l), cfg.c_emb, cfg.heads, rng));
    if (cfg.gas_enabled)
      m.gas_layers.push_back(gas::make_gas(ps, "gas.l" + std::to_string(l), cfg.c_emb, rng));
  }
  m.decoder = ssl::make_decoder(ps, "dec", cfg.c_emb, cfg.decoder_heads, cfg.decoder_depth, rng);
  m.backbone = make_backbone(ps, "cnn", cfg.c_emb, rng);
  m.fuse = nn::make_linear(ps, "head.fuse", 2 * cfg.c_emb, cfg.c_emb, rng);
  m.cls_head = nn::make_linear(ps, "head.cls", cfg.c_emb, 1, rng);
  m.reg_head = nn::make_linear(ps, "head.reg", cfg.c_emb, 4, rng);
  // A fresh regression head must decode to the neutral box (offset at the
  // cell centre, size equal to the prior); random output would make an
  // untrained tracker scale its box by a random factor every frame.
  ps.entry(m.reg_head.w).value.setZero();
  return m;
}

// Runtime switches that differ between training and inference.
struct ForwardRuntime {
  bool training = false;  // Gumbel noise in the partition, decoder dropout
  Rng* rng = nullptr;     // consumed only when training
};

template <typename S>
struct EncodeOut {
  Var<S> tokens;  // (2N, C) final joint embedding
  Var<S> map1;    // (N, C) frame-1 rows
  Var<S> map2;    // (N, C) frame-2 rows
};

// Two-frame joint encoding: shared patch projection + positions, stacked
// residual layers, per-layer masked side branch when enabled.
template <typename S>
EncodeOut<S> encode_pair(Graph<S>& g, ParamStore<S>& ps, const TrackModelP& m,
                         const ModelConfig& cfg, const MatX<S>& plane1, const MatX<S>& plane2,
                         const ForwardRuntime& rt = {},
                         std::vector<gas::GasTrace<S>>* traces = nullptr) {
  const Index n = cfg.tokens_per_frame();
  Var<S> raw1 = ad::constant(g, nn::patch_tokens<S>({plane1}, cfg.patch));
  Var<S> raw2 = ad::constant(g, nn::patch_tokens<S>({plane2}, cfg.patch));
  if (raw1.rows() != n) throw ValidationError("encoder: frame does not match configured grid");
  Var<S> pos = nn::param(g, ps, m.pos);
  Var<S> t1 = ad::add(nn::linear(ps, m.patch_proj, raw1), pos);
  Var<S> t2 = ad::add(nn::linear(ps, m.patch_proj, raw2), pos);
  Var<S> e = ad::concat_rows(t1, t2);

  gas::GasConfig<S> gcfg;
  gcfg.tau = S(cfg.tau);
  gcfg.stochastic = rt.training;
  gcfg.mask_mode = cfg.mask_mode;
  gcfg.relation_mode = cfg.relation_mode;

  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    std::function<Var<S>(Var<S>)> extra;
    if (cfg.gas_enabled) {
      const gas::GasP& gp = m.gas_layers[l];
      gas::GasTrace<S>* tr = nullptr;
      if (traces) {
        traces->emplace_back();
        tr = &traces->back();
      }
      extra = [&ps, &gp, gcfg, rt, tr](Var<S> x) {
        return gas::gas_branch(ps, gp, x, gcfg, rt.rng, tr);
      };
    }
    e = nn::encoder_layer(ps, m.layers[l], e, cfg.norm_pre, {}, {}, extra);
  }
  EncodeOut<S> out{e, ad::slice_rows(e, 0, n), ad::slice_rows(e, n, n)};
  return out;
}

// Channel concatenation + 1x1 linear mix (no nonlinearity; callers add one).
template <typename S>
Var<S> fuse_streams(ParamStore<S>& ps, const nn::LinearP& fuse, Var<S> a, Var<S> b) {
  if (a.rows() != b.rows()) throw ValidationError("stream fusion: spatial size mismatch");
  std::vector<Var<S>> parts{a, b};
  return nn::linear(ps, fuse, ad::concat_cols(parts));
}

template <typename S>
struct ForwardOut {
  Var<S> cls;     // (corr², 1) logits
  Var<S> reg;     // (corr², 4)
  Var<S> tokens;  // (2N, C) encoder output (reconstruction target source)
};

// Full dual-stream pass: joint encoder on the two windows (its frame-1
// central block correlates against the frame-2 map) plus a convolutional
// template/search stream, fused into classification and regression heads.
template <typename S>
ForwardOut<S> tracker_forward(Graph<S>& g, ParamStore<S>& ps, const TrackModelP& m,
                              const ModelConfig& cfg, const MatX<S>& tmpl_plane,
                              const MatX<S>& win1_plane, const MatX<S>& win2_plane,
                              const ForwardRuntime& rt = {},
                              std::vector<gas::GasTrace<S>>* traces = nullptr) {
  if (tmpl_plane.rows() != cfg.template_size || tmpl_plane.cols() != cfg.template_size)
    throw ValidationError("tracker: template crop size mismatch");
  if (win1_plane.rows() != cfg.search_size || win2_plane.rows() != cfg.search_size)
    throw ValidationError("tracker: window crop size mismatch");

  EncodeOut<S> enc = encode_pair(g, ps, m, cfg, win1_plane, win2_plane, rt, traces);

  const Index gsz = cfg.grid(), k = cfg.kernel(), off = (gsz - k) / 2;
  std::vector<int> central;
  central.reserve(std::size_t(k * k));
  for (Index r = 0; r < k; ++r)
    for (Index c = 0; c < k; ++c) central.push_back(int((off + r) * gsz + (off + c)));
  Var<S> kernel = ad::gather_rows(enc.map1, central);
  Var<S> corr_enc = ad::depthwise_xcorr(kernel, enc.map2, int(k), int(k), int(gsz), int(gsz));

  Var<S> t = conv_backbone(ps, m.backbone, ad::constant(g, plane_to_rows3(tmpl_plane)),
                           cfg.template_size);
  Var<S> s = conv_backbone(ps, m.backbone, ad::constant(g, plane_to_rows3(win2_plane)),
                           cfg.search_size);
  Var<S> corr_cnn = ad::depthwise_xcorr(t, s, int(k), int(k), int(gsz), int(gsz));

  Var<S> fused = ad::gelu(fuse_streams(ps, m.fuse, corr_enc, corr_cnn));
  ForwardOut<S> out{nn::linear(ps, m.cls_head, fused), nn::linear(ps, m.reg_head, fused),
                    enc.tokens};
  return out;
}

// ---------------------------------------------------------------------------
// Targets, losses, decoding.

// Gaussian heatmap over the correlation grid, peak 1 at the quantized center
// cell. Coordinates are crop pixels; cell i covers crop x in
// [(i + k/2 - 0.5) * stride, ...) via center (i + k/2) * stride.
template <typename S>
MatX<S> gaussian_target(double cx, double cy, double w, double h, Index grid, Index stride,
                        Index k_half) {
  if (!(w > 0) || !(h > 0)) throw ValidationError("gaussian target: degenerate box");
  if (!std::isfinite(cx) || !std::isfinite(cy)) throw ValidationError("gaussian target: bad center");
  const auto cell = [&](double c) {
    return std::clamp(Index(std::llround(c / double(stride) - double(k_half))), Index(0), grid - 1);
  };
  const Index cj = cell(cx), ci = cell(cy);
  const double sigma = std::max(1.0, std::min(w, h) / (8.0 * double(stride)));
  MatX<S> t(grid, grid);
  for (Index i = 0; i < grid; ++i)
    for (Index j = 0; j < grid; ++j) {
      const double d2 = double((i - ci) * (i - ci) + (j - cj) * (j - cj));
      t(i, j) = S(std::exp(-d2 / (2.0 * sigma * sigma)));
    }
  return t;
}

// Penalty-reduced focal loss on a sigmoided heatmap against a Gaussian
// target: exponent 2 on the prediction error, 4 on the target penalty,
// normalized by the positive-cell count.
template <typename S>
Var<S> focal_loss(Var<S> pred, const MatX<S>& target) {
  Graph<S>& g = *pred.g;
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ValidationError("focal loss: shape mismatch");
  if ((pred.v().array() < S(0)).any() || (pred.v().array() > S(1)).any())
    throw ValidationError("focal loss: predictions must lie in [0,1] (sigmoid output)");
  if ((target.array() < S(0)).any() || (target.array() > S(1)).any())
    throw ValidationError("focal loss: target must lie in [0,1]");

  const S eps = S(1e-6);
  Var<S> p = ad::clamp(pred, eps, S(1) - eps);
  MatX<S> pos = (target.array() == S(1)).template cast<S>();
  MatX<S> negw = ((S(1) - target.array()).pow(S(4)) * (S(1) - pos.array())).matrix();
  const S npos = std::max(S(1), S(pos.sum()));

  Var<S> one = ad::constant(g, MatX<S>(MatX<S>::Ones(p.rows(), p.cols())));
  Var<S> one_m_p = ad::sub(one, p);
  Var<S> pos_term = ad::cmul_const(ad::cmul(ad::cmul(one_m_p, one_m_p), ad::log_cwise(p)), pos);
  Var<S> neg_term = ad::cmul_const(ad::cmul(ad::cmul(p, p), ad::log_cwise(one_m_p)), negw);
  return ad::scale(ad::sum_all(ad::add(pos_term, neg_term)), S(-1) / npos);
}

inline double iou_loss_value(const Box& a, const Box& b) { return 1.0 - box_iou(a, b); }

// Differentiable 1 - IoU between a predicted (1,4) box row [cx, cy, w, h]
// and a fixed target box.
template <typename S>
Var<S> iou_loss(Var<S> pred, const Box& gt) {
  Graph<S>& g = *pred.g;
  if (pred.rows() != 1 || pred.cols() != 4) throw ValidationError("iou loss: pred must be 1x4");
  if (!(gt.w > 0) || !(gt.h > 0)) throw ValidationError("iou loss: degenerate target box");
  if ((pred.v().row(0).segment(2, 2).array() <= S(0)).any())
    throw ValidationError("iou loss: degenerate predicted box");
  auto c = [&](double v) { return ad::constant(g, MatX<S>(MatX<S>::Constant(1, 1, S(v)))); };
  Var<S> cx = ad::slice_cols(pred, 0, 1), cy = ad::slice_cols(pred, 1, 1);
  Var<S> w = ad::slice_cols(pred, 2, 1), h = ad::slice_cols(pred, 3, 1);
  Var<S> x1 = ad::sub(cx, ad::scale(w, S(0.5))), x2 = ad::add(cx, ad::scale(w, S(0.5)));
  Var<S> y1 = ad::sub(cy, ad::scale(h, S(0.5))), y2 = ad::add(cy, ad::scale(h, S(0.5)));
  Var<S> iw = ad::cmax_scalar(
      ad::sub(ad::cmin(x2, c(gt.cx + gt.w / 2)), ad::cmax(x1, c(gt.cx - gt.w / 2))), S(0));
  Var<S> ih = ad::cmax_scalar(
      ad::sub(ad::cmin(y2, c(gt.cy + gt.h / 2)), ad::cmax(y1, c(gt.cy - gt.h / 2))), S(0));
  Var<S> inter = ad::cmul(iw, ih);
  Var<S> uni = ad::sub(ad::add(ad::cmul(w, h), c(gt.w * gt.h)), inter);
  return ad::sub(c(1.0), ad::cdiv(inter, ad::cmax_scalar(uni, S(1e-12))));
}

struct LossWeights {
  double l1 = 1, l2 = 1, l3 = 1;

  void validate() const {
    if (l1 < 0 || l2 < 0 || l3 < 0) throw ValidationError("loss weights must be nonnegative");
    if (l1 == 0 && l2 == 0 && l3 == 0) throw ValidationError("loss weights must not all be zero");
  }
};

template <typename S>
Var<S> total_loss(const LossWeights& lw, Var<S> l_m, Var<S> l_cls, Var<S> l_reg) {
  lw.validate();
  for (const Var<S>* l : {&l_m, &l_cls, &l_reg}) {
    if (l->rows() != 1 || l->cols() != 1) throw ValidationError("loss components must be scalars");
    const S v = l->v()(0, 0);
    if (!std::isfinite(double(v))) throw NumericError("non-finite loss component");
    if (v < S(0)) throw NumericError("negative loss component");
  }
  return ad::add(ad::add(ad::scale(l_m, S(lw.l1)), ad::scale(l_cls, S(lw.l2))),
                 ad::scale(l_reg, S(lw.l3)));
}

// The regressed log-scale is clamped so a single frame can change the box
// side by at most e ≈ 2.7×; an unconstrained exponent lets one bad output
// blow the box up past recovery, because the next search window (and size
// prior) is derived from it.
inline constexpr double kLogScaleLimit = 1.0;

// Differentiable box decode at a fixed cell: center = (cell + k/2 + 2σ(d)-1)
// cells, size = prior * exp(clamped log-scale). Crop-pixel output.
template <typename S>
Var<S> decode_cell_box(Var<S> reg, Index ci, Index cj, Index grid, Index stride, Index k_half,
                       double prior_w, double prior_h) {
  Graph<S>& g = *reg.g;
  if (ci < 0 || ci >= grid || cj < 0 || cj >= grid) throw ValidationError("decode: cell out of range");
  if (reg.rows() != grid * grid || reg.cols() != 4) throw ValidationError("decode: reg shape mismatch");
  auto c = [&](double v) { return ad::constant(g, MatX<S>(MatX<S>::Constant(1, 1, S(v)))); };
  Var<S> row = ad::slice_rows(reg, ci * grid + cj, 1);
  Var<S> dx = ad::slice_cols(row, 0, 1), dy = ad::slice_cols(row, 1, 1);
  Var<S> dw = ad::slice_cols(row, 2, 1), dh = ad::slice_cols(row, 3, 1);
  const double sd = double(stride);
  Var<S> cx = ad::add(ad::scale(ad::sigmoid(dx), S(2 * sd)), c((double(cj + k_half) - 1.0) * sd));
  Var<S> cy = ad::add(ad::scale(ad::sigmoid(dy), S(2 * sd)), c((double(ci + k_half) - 1.0) * sd));
  Var<S> w = ad::scale(ad::exp_cwise(ad::clamp(dw, S(-kLogScaleLimit), S(kLogScaleLimit))), S(prior_w));
  Var<S> h = ad::scale(ad::exp_cwise(ad::clamp(dh, S(-kLogScaleLimit), S(kLogScaleLimit))), S(prior_h));
  std::vector<Var<S>> parts{cx, cy, w, h};
  return ad::concat_cols(parts);
}

template <typename S>
struct Decoded {
  Box box;  // crop pixels
  double score = 0;
  Index ci = 0, cj = 0;
};

// Value-level decode at the classification argmax.
template <typename S>
Decoded<S> decode_box(const MatX<S>& cls, const MatX<S>& reg, Index grid, Index stride,
                      Index k_half, double prior_w, double prior_h) {
  if (cls.rows() != grid * grid || cls.cols() != 1) throw ValidationError("decode: cls shape mismatch");
  if (reg.rows() != grid * grid || reg.cols() != 4) throw ValidationError("decode: reg shape mismatch");
  Index best = 0;
  for (Index i = 1; i < cls.rows(); ++i)
    if (cls(i, 0) > cls(best, 0)) best = i;
  Decoded<S> d;
  d.ci = best / grid;
  d.cj = best % grid;
  d.score = 1.0 / (1.0 + std::exp(-double(cls(best, 0))));
  const auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double sd = double(stride);
  d.box.cx = (2 * sig(double(reg(best, 0))) + double(d.cj + k_half) - 1.0) * sd;
  d.box.cy = (2 * sig(double(reg(best, 1))) + double(d.ci + k_half) - 1.0) * sd;
  d.box.w = prior_w * std::exp(std::clamp(double(reg(best, 2)), -kLogScaleLimit, kLogScaleLimit));
  d.box.h = prior_h * std::exp(std::clamp(double(reg(best, 3)), -kLogScaleLimit, kLogScaleLimit));
  return d;
}

// ---------------------------------------------------------------------------
// Inference loop.

template <typename S>
struct TrackerState {
  MatX<S> tmpl_plane;  // template crop from the initial frame
  MatX<S> win1_plane;  // joint-encoder window from the initial frame
  Box prev;            // last predicted box, frame coordinates
  bool initialized = false;
};

template <typename S>
TrackerState<S> init_tracker(const ModelConfig& cfg, const MatX<S>& frame, const Box& box) {
  if (!(box.w > 0) || !(box.h > 0)) throw ValidationError("tracker init: degenerate box");
  TrackerState<S> st;
  const double tside = cfg.template_scale * std::max(box.w, box.h);
  const double sside = cfg.search_scale * std::max(box.w, box.h);
  st.tmpl_plane = crop_window(frame, box.cx, box.cy, tside, cfg.template_size).plane;
  st.win1_plane = crop_window(frame, box.cx, box.cy, sside, cfg.search_size).plane;
  st.prev = box;
  st.initialized = true;
  return st;
}

template <typename S>
std::pair<Box, double> track_step(ParamStore<S>& ps, const TrackModelP& m, const ModelConfig& cfg,
                                  TrackerState<S>& st, const MatX<S>& frame) {
  if (!st.initialized) throw ValidationError("track step on an uninitialized tracker");
  const double side = cfg.search_scale * std::max(st.prev.w, st.prev.h);
  CropResult<S> crop = crop_window(frame, st.prev.cx, st.prev.cy, side, cfg.search_size);

  Graph<S> g;
  ForwardOut<S> out =
      tracker_forward(g, ps, m, cfg, st.tmpl_plane, st.win1_plane, crop.plane, ForwardRuntime{});
  Decoded<S> d = decode_box<S>(out.cls.v(), out.reg.v(), cfg.corr(), cfg.patch, cfg.kernel() / 2,
                               st.prev.w / crop.scale, st.prev.h / crop.scale);
  Box b;
  b.cx = float(std::clamp(crop.to_frame_x(d.box.cx), 0.0, double(frame.cols() - 1)));
  b.cy = float(std::clamp(crop.to_frame_y(d.box.cy), 0.0, double(frame.rows() - 1)));
  const double g_sz = cfg.size_damping;
  b.w = float(std::clamp(st.prev.w + g_sz * (d.box.w * crop.scale - st.prev.w), 2.0,
                         double(frame.cols())));
  b.h = float(std::clamp(st.prev.h + g_sz * (d.box.h * crop.scale - st.prev.h), 2.0,
                         double(frame.rows())));
  st.prev = b;
  return {b, d.score};
}

// ---------------------------------------------------------------------------
// Evaluation.

struct SotMetrics {
  double success_auc = 0;
  double precision = 0;
  double norm_precision = 0;
};

// Success sweeps IoU thresholds 0, 0.05, ..., 1 (strict overlap at 0,
// inclusive elsewhere, so a perfect track scores 1). Precision is the
// fraction of frames with center error within 20 px. Normalized precision
// divides the center error componentwise by the target's size and averages
// inclusive thresholds 0, 0.005, ..., 0.5.
inline SotMetrics eval_sot(const std::vector<Box>& pred, const std::vector<Box>& gt) {
  if (pred.size() != gt.size()) throw ValidationError("metric input sequences differ in length");
  if (pred.empty()) throw ValidationError("metric input is empty");
  const std::size_t n = pred.size();
  std::vector<double> iou(n), dist(n), nerr(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(gt[i].w > 0) || !(gt[i].h > 0)) throw ValidationError("degenerate ground-truth box");
    iou[i] = box_iou(pred[i], gt[i]);
    dist[i] = center_distance(pred[i], gt[i]);
    const double dx = (pred[i].cx - gt[i].cx) / gt[i].w;
    const double dy = (pred[i].cy - gt[i].cy) / gt[i].h;
    nerr[i] = std::hypot(dx, dy);
  }
  SotMetrics out;
  for (int k = 0; k <= 20; ++k) {
    const double th = 0.05 * k;
    std::size_t hits = 0;
    for (double v : iou) hits += (k == 0) ? (v > 0.0) : (v >= th);
    out.success_auc += double(hits) / double(n);
  }
  out.success_auc /= 21.0;
  std::size_t close = 0;
  for (double v : dist) close += (v <= 20.0);
  out.precision = double(close) / double(n);
  for (int k = 0; k <= 100; ++k) {
    const double th = 0.005 * k;
    std::size_t hits = 0;
    for (double v : nerr) hits += (v <= th);
    out.norm_precision += double(hits) / double(n);
  }
  out.norm_precision /= 101.0;
  return out;
}

// ---------------------------------------------------------------------------
// Results file: one line per frame, "t cx cy w h score", 6 significant digits.

struct ResultLine {
  int t = 0;
  Box box;
  double score = 0;
};

inline void save_results(const std::string& path, const std::vector<ResultLine>& lines) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write results file: " + path);
  char buf[160];
  for (const auto& l : lines) {
    std::snprintf(buf, sizeof buf, "%d %.6g %.6g %.6g %.6g %.6g\n", l.t, l.box.cx, l.box.cy,
                  l.box.w, l.box.h, l.score);
    f << buf;
  }
  if (!f) throw ValidationError("failed writing results file: " + path);
}

inline std::vector<ResultLine> load_results(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot read results file: " + path);
  std::vector<ResultLine> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    ResultLine r;
    if (std::sscanf(line.c_str(), "%d %f %f %f %f %lf", &r.t, &r.box.cx, &r.box.cy, &r.box.w,
                    &r.box.h, &r.score) != 6)
      throw ValidationError("malformed results line " + std::to_string(lineno) + " in " + path);
    out.push_back(r);
  }
  return out;
}

}  // namespace lftrack::track
