#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lftrack/rng.hpp"
#include "lftrack/ssl.hpp"
#include "lftrack/track.hpp"
#include "lftrack/types.hpp"

namespace lftrack::train {

using nn::ParamStore;

// Adam with decoupled weight decay and bias correction. Moment state is held
// per parameter entry, matched by index, so the store layout must not change
// between steps.
template <typename S>
class AdamW {
 public:
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

  explicit AdamW(const ParamStore<S>& ps) {
    m_.reserve(std::size_t(ps.size()));
    v_.reserve(std::size_t(ps.size()));
    for (Index i = 0; i < ps.size(); ++i) {
      const auto& e = ps.entry(i);
      m_.push_back(MatX<S>::Zero(e.value.rows(), e.value.cols()));
      v_.push_back(MatX<S>::Zero(e.value.rows(), e.value.cols()));
    }
  }

  void step(ParamStore<S>& ps) {
    if (Index(m_.size()) != ps.size())
      throw ValidationError("optimizer state does not match the parameter store");
    for (Index i = 0; i < ps.size(); ++i) {
      const auto& e = ps.entry(i);
      const auto& m = m_[std::size_t(i)];
      if (e.value.rows() != m.rows() || e.value.cols() != m.cols())
        throw ValidationError("optimizer state does not match the parameter store");
      if (e.grad.rows() != m.rows() || e.grad.cols() != m.cols())
        throw ValidationError("parameter gradient missing or mis-shaped");
    }
    ++t_;
    const S bc1 = S(1.0 - std::pow(beta1, double(t_)));
    const S bc2 = S(1.0 - std::pow(beta2, double(t_)));
    for (Index i = 0; i < ps.size(); ++i) {
      auto& e = ps.entry(i);
      auto& m = m_[std::size_t(i)];
      auto& v = v_[std::size_t(i)];
      m = S(beta1) * m + S(1 - beta1) * e.grad;
      v = (S(beta2) * v.array() + S(1 - beta2) * e.grad.array().square()).matrix();
      const auto mhat = m.array() / bc1;
      const auto vhat = v.array() / bc2;
      e.value.array() -=
          S(lr) * (mhat / (vhat.sqrt() + S(eps)) + S(weight_decay) * e.value.array());
    }
  }

  int steps_taken() const { return t_; }

 private:
  int t_ = 0;
  std::vector<MatX<S>> m_, v_;
};

// One training video: per-frame single-channel structure images plus the
// tracked object's box per frame (frame-pixel coordinates).
struct VideoSample {
  std::vector<MatXf> frames;
  std::vector<Box> boxes;
};

struct TrainConfig {
  track::ModelConfig model;
  track::LossWeights weights;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  Index steps = 200;
  uint64_t seed = 1;
  Index max_pair_gap = 4;  // |t1 - t2| bound when sampling frame pairs
  double jitter_px = 8;    // search-window center jitter during training
  // Log-scale bound for jittering the size prior during training. At
  // inference the prior is the previous *predicted* box, so the regression
  // head must see mis-sized priors in training or it never learns to
  // correct them and size errors compound frame over frame.
  double scale_jitter = 0.35;
  bool ssl_literal = false;
};

struct TrainResult {
  std::vector<double> total;  // per-step loss trace
  std::vector<double> l_m, l_cls, l_reg;
};

namespace detail {

inline void validate_dataset(const std::vector<VideoSample>& data) {
  if (data.empty()) throw ValidationError("training needs at least one video");
  for (const auto& v : data) {
    if (v.frames.size() < 2) throw ValidationError("training video needs at least two frames");
    if (v.frames.size() != v.boxes.size())
      throw ValidationError("training video has mismatched frame and box counts");
  }
}

}  // namespace detail

// A single optimization step's sampled problem: crops, mask, and targets.
// Shared between the trainer and the gradient checker so both differentiate
// the same composite objective.
struct StepSample {
  MatXf tmpl, win1, win2;
  ssl::TokenMask mask;
  MatXf cls_target;  // (corr², 1)
  Box reg_target;    // crop pixels
  Index cell_i = 0, cell_j = 0;                  // heat peak
  std::vector<std::pair<Index, Index>> reg_cells;  // heat >= 1/2, includes peak
  double prior_w = 1, prior_h = 1;  // crop pixels
  uint64_t gumbel_seed = 0;
};

inline StepSample sample_step(const TrainConfig& cfg, const std::vector<VideoSample>& data,
                              Index step) {
  const track::ModelConfig& mc = cfg.model;
  Rng rng(Rng::derive(cfg.seed, 0x5A0 + uint64_t(step)));
  const auto& vid = data[std::size_t(rng.uniform_int(int(data.size())))];
  const Index t_count = Index(vid.frames.size());
  const Index t1 = Index(rng.uniform_int(int(t_count)));
  std::vector<Index> cand;
  for (Index t = std::max(Index(0), t1 - cfg.max_pair_gap);
       t < std::min(t_count, t1 + cfg.max_pair_gap + 1); ++t)
    if (t != t1) cand.push_back(t);
  const Index t2 = cand[std::size_t(rng.uniform_int(int(cand.size())))];

  const Box& b1 = vid.boxes[std::size_t(t1)];
  const Box& b2 = vid.boxes[std::size_t(t2)];
  const double prior_side = std::max(b1.w, b1.h);

  StepSample s;
  s.tmpl = track::crop_window(vid.frames[std::size_t(t1)], b1.cx, b1.cy,
                              mc.template_scale * prior_side, mc.template_size)
               .plane;
  s.win1 = track::crop_window(vid.frames[std::size_t(t1)], b1.cx, b1.cy,
                              mc.search_scale * prior_side, mc.search_size)
               .plane;
  const double jx = rng.uniform(-cfg.jitter_px, cfg.jitter_px);
  const double jy = rng.uniform(-cfg.jitter_px, cfg.jitter_px);
  // The two size-prior axes are jittered independently; a shared factor
  // would make the width and height corrections identical in every sample,
  // and the head would learn to drive both from whichever axis shows up
  // more strongly in the features.
  const double pw = b1.w * std::exp(rng.uniform(-cfg.scale_jitter, cfg.scale_jitter));
  const double ph = b1.h * std::exp(rng.uniform(-cfg.scale_jitter, cfg.scale_jitter));
  auto crop2 = track::crop_window(vid.frames[std::size_t(t2)], b2.cx + jx, b2.cy + jy,
                                  mc.search_scale * std::max(pw, ph), mc.search_size);
  s.win2 = crop2.plane;

  s.reg_target.cx = crop2.to_crop_x(b2.cx);
  s.reg_target.cy = crop2.to_crop_y(b2.cy);
  s.reg_target.w = b2.w / crop2.scale;
  s.reg_target.h = b2.h / crop2.scale;
  MatXf heat = track::gaussian_target<float>(s.reg_target.cx, s.reg_target.cy, s.reg_target.w,
                                             s.reg_target.h, mc.corr(), mc.patch, mc.kernel() / 2);
  s.cls_target.resize(mc.corr() * mc.corr(), 1);
  for (Index i = 0; i < mc.corr(); ++i)
    for (Index j = 0; j < mc.corr(); ++j) s.cls_target(i * mc.corr() + j, 0) = heat(i, j);
  // recover the peak cell for the regression sample
  Index best = 0;
  for (Index i = 1; i < s.cls_target.rows(); ++i)
    if (s.cls_target(i, 0) > s.cls_target(best, 0)) best = i;
  s.cell_i = best / mc.corr();
  s.cell_j = best % mc.corr();
  // Regression is supervised at the peak cell only. Off-peak cells cannot
  // place the box centre on the target (the decode bounds the offset to one
  // cell), so adding them to the objective rewards inflating the box.
  s.reg_cells.emplace_back(s.cell_i, s.cell_j);
  s.prior_w = pw / crop2.scale;
  s.prior_h = ph / crop2.scale;
  s.mask = ssl::sample_mask(2 * mc.tokens_per_frame(), mc.rho,
                            Rng::derive(cfg.seed, 0xA50 + uint64_t(step)));
  s.gumbel_seed = Rng::derive(cfg.seed, 0xF00 + uint64_t(step));
  return s;
}

// Builds the full step objective on the tape and returns the loss node plus
// the component values. Used by train_toy and by the gradient checker.
template <typename S>
ad::Var<S> step_loss(ad::Graph<S>& g, ParamStore<S>& ps, const track::TrackModelP& m,
                     const TrainConfig& cfg, const StepSample& s, bool training,
                     double components[3]) {
  const track::ModelConfig& mc = cfg.model;
  Rng gumbel_rng(s.gumbel_seed);
  track::ForwardRuntime rt;
  rt.training = training;
  rt.rng = &gumbel_rng;

  track::ForwardOut<S> out =
      track::tracker_forward(g, ps, m, mc, MatX<S>(s.tmpl.cast<S>()), MatX<S>(s.win1.cast<S>()),
                             MatX<S>(s.win2.cast<S>()), rt);

  // reconstruction branch
  const MatX<S> pos1 = ps.entry(m.pos).value;
  MatX<S> pos2(2 * pos1.rows(), pos1.cols());
  pos2.topRows(pos1.rows()) = pos1;
  pos2.bottomRows(pos1.rows()) = pos1;
  ssl::DecodeConfig<S> dcfg;
  dcfg.p_drop = S(mc.p_drop);
  dcfg.training = training;
  dcfg.norm_pre = mc.norm_pre;
  ad::Var<S> decoded = ssl::decode(ps, m.decoder, out.tokens, s.mask, pos2, dcfg);
  ad::Var<S> l_m = ssl::ssl_loss(decoded, out.tokens, s.mask, cfg.ssl_literal);

  ad::Var<S> l_cls = track::focal_loss(ad::sigmoid(out.cls), s.cls_target.cast<S>().eval());
  std::vector<std::pair<Index, Index>> cells = s.reg_cells;
  if (cells.empty()) cells.emplace_back(s.cell_i, s.cell_j);
  ad::Var<S> l_reg;
  for (const auto& [ci, cj] : cells) {
    ad::Var<S> box = track::decode_cell_box(out.reg, ci, cj, mc.corr(), mc.patch,
                                            mc.kernel() / 2, s.prior_w, s.prior_h);
    ad::Var<S> one = track::iou_loss(box, s.reg_target);
    l_reg = (l_reg.g == nullptr) ? one : ad::add(l_reg, one);
  }
  l_reg = ad::scale(l_reg, S(1.0 / double(cells.size())));

  if (components) {
    components[0] = double(l_m.v()(0, 0));
    components[1] = double(l_cls.v()(0, 0));
    components[2] = double(l_reg.v()(0, 0));
  }
  return track::total_loss(cfg.weights, l_m, l_cls, l_reg);
}

// Seeded end-to-end toy trainer over synthetic videos. Deterministic per
// config; aborts with the step index if the loss leaves the finite range.
template <typename S>
TrainResult train_toy(ParamStore<S>& ps, const track::TrackModelP& m, const TrainConfig& cfg,
                      const std::vector<VideoSample>& data) {
  cfg.model.validate();
  cfg.weights.validate();
  detail::validate_dataset(data);
  if (cfg.steps < 1) throw ValidationError("training needs at least one step");

  AdamW<S> opt(ps);
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;

  TrainResult res;
  res.total.reserve(std::size_t(cfg.steps));
  for (Index step = 0; step < cfg.steps; ++step) {
    // Cosine decay to a tenth of the base rate: a constant rate keeps the
    // parameters bouncing around a minimum, and where they land at the last
    // step would be a lottery.
    const double prog = cfg.steps > 1 ? double(step) / double(cfg.steps - 1) : 0.0;
    opt.lr = cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(3.14159265358979323846 * prog)));
    StepSample s = sample_step(cfg, data, step);
    ad::Graph<S> g;
    double comps[3];
    ad::Var<S> loss;
    try {
      loss = step_loss(g, ps, m, cfg, s, /*training=*/true, comps);
      if (!std::isfinite(double(loss.v()(0, 0)))) throw NumericError("non-finite loss");
      ps.zero_grad();
      g.backward(loss.id);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at training step " + std::to_string(step));
    }
    opt.step(ps);
    res.total.push_back(double(loss.v()(0, 0)));
    res.l_m.push_back(comps[0]);
    res.l_cls.push_back(comps[1]);
    res.l_reg.push_back(comps[2]);
  }
  return res;
}

}  // namespace lftrack::train
