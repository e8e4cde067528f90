#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lftrack/checkpoint.hpp"
#include "lftrack/graph.hpp"
#include "lftrack/rng.hpp"
#include "lftrack/types.hpp"

namespace lftrack::nn {

using ad::Graph;
using ad::Var;

// Named parameter registry. Parameters are copied into graph leaves per
// forward pass; gradients accumulate back into the store. The store must
// outlive every graph built from it.
template <typename S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    MatX<S> value;
    MatX<S> grad;
  };

  Index add(const std::string& name, MatX<S> value) {
    if (find(name) >= 0) throw ValidationError("parameter registered twice: " + name);
    Entry e;
    e.name = name;
    e.grad = MatX<S>::Zero(value.rows(), value.cols());
    e.value = std::move(value);
    entries_.push_back(std::move(e));
    return Index(entries_.size()) - 1;
  }

  Index find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i)
      if (entries_[i].name == name) return Index(i);
    return -1;
  }

  Entry& entry(Index i) { return entries_[std::size_t(i)]; }
  const Entry& entry(Index i) const { return entries_[std::size_t(i)]; }
  Index size() const { return Index(entries_.size()); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += std::size_t(e.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.setZero();
  }

  template <typename T>
  ParamStore<T> cast() const {
    ParamStore<T> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<T>());
    return out;
  }

  std::vector<TensorEntry> to_tensors() const {
    std::vector<TensorEntry> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_)
      out.push_back(TensorEntry{e.name, e.value.template cast<float>()});
    return out;
  }

  void load_tensors(const std::vector<TensorEntry>& tensors) {
    if (Index(tensors.size()) != size())
      throw ValidationError("checkpoint holds " + std::to_string(tensors.size()) +
                            " tensors but the model has " + std::to_string(size()));
    for (const auto& t : tensors) {
      const Index i = find(t.name);
      if (i < 0) throw ValidationError("checkpoint tensor has no matching parameter: " + t.name);
      Entry& e = entries_[std::size_t(i)];
      if (t.value.rows() != e.value.rows() || t.value.cols() != e.value.cols())
        throw ValidationError("checkpoint tensor shape mismatch for " + t.name);
      e.value = t.value.template cast<S>();
    }
  }

 private:
  std::vector<Entry> entries_;
};

// Graph leaf for a stored parameter; backward accumulates into the store.
template <typename S>
Var<S> param(Graph<S>& g, ParamStore<S>& ps, Index idx) {
  if (idx < 0 || idx >= ps.size()) throw ValidationError("param: index out of range");
  auto back = [store = &ps, idx](Graph<S>& gg, int self) {
    store->entry(idx).grad += gg.at(self).grad;
  };
  return {&g, g.add(ps.entry(idx).value, true, std::move(back))};
}

template <typename S>
MatX<S> trunc_normal_init(Rng& rng, Index rows, Index cols, S sigma = S(0.02)) {
  MatX<S> m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = S(rng.truncated_normal(double(sigma)));
  return m;
}

// ---------------------------------------------------------------------------
// Module parameter bundles (indices into a ParamStore).

struct LinearP {
  Index w = -1;  // in x out
  Index b = -1;  // 1 x out
};

struct LayerNormP {
  Index gamma = -1;
  Index beta = -1;
};

struct AttnP {
  LinearP q, k, v, o;
  Index heads = 1;
};

struct FfnP {
  LinearP fc1, fc2;
};

struct EncoderLayerP {
  LayerNormP ln1, ln2;
  AttnP attn;
  FfnP ffn;
};

template <typename S>
LinearP make_linear(ParamStore<S>& ps, const std::string& prefix, Index in, Index out, Rng& rng) {
  LinearP p;
  p.w = ps.add(prefix + ".w", trunc_normal_init<S>(rng, in, out));
  p.b = ps.add(prefix + ".b", MatX<S>::Zero(1, out));
  return p;
}

template <typename S>
LayerNormP make_layer_norm(ParamStore<S>& ps, const std::string& prefix, Index dim) {
  LayerNormP p;
  p.gamma = ps.add(prefix + ".gamma", MatX<S>::Ones(1, dim));
  p.beta = ps.add(prefix + ".beta", MatX<S>::Zero(1, dim));
  return p;
}

template <typename S>
AttnP make_attention(ParamStore<S>& ps, const std::string& prefix, Index dim, Index heads,
                     Rng& rng) {
  if (heads < 1 || dim % heads != 0)
    throw ValidationError("attention: embedding dim must be divisible by head count");
  AttnP p;
  p.heads = heads;
  p.q = make_linear(ps, prefix + ".q", dim, dim, rng);
  p.k = make_linear(ps, prefix + ".k", dim, dim, rng);
  p.v = make_linear(ps, prefix + ".v", dim, dim, rng);
  p.o = make_linear(ps, prefix + ".o", dim, dim, rng);
  return p;
}

template <typename S>
FfnP make_ffn(ParamStore<S>& ps, const std::string& prefix, Index dim, Rng& rng,
              Index hidden_mult = 4) {
  FfnP p;
  p.fc1 = make_linear(ps, prefix + ".fc1", dim, dim * hidden_mult, rng);
  p.fc2 = make_linear(ps, prefix + ".fc2", dim * hidden_mult, dim, rng);
  return p;
}

template <typename S>
EncoderLayerP make_encoder_layer(ParamStore<S>& ps, const std::string& prefix, Index dim,
                                 Index heads, Rng& rng) {
  EncoderLayerP p;
  p.ln1 = make_layer_norm(ps, prefix + ".ln1", dim);
  p.ln2 = make_layer_norm(ps, prefix + ".ln2", dim);
  p.attn = make_attention(ps, prefix + ".attn", dim, heads, rng);
  p.ffn = make_ffn(ps, prefix + ".ffn", dim, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Forward pieces.

template <typename S>
Var<S> linear(ParamStore<S>& ps, const LinearP& p, Var<S> x) {
  Graph<S>& g = *x.g;
  return ad::add_rowvec(ad::matmul(x, param(g, ps, p.w)), param(g, ps, p.b));
}

template <typename S>
Var<S> layer_norm(ParamStore<S>& ps, const LayerNormP& p, Var<S> x) {
  Graph<S>& g = *x.g;
  return ad::layer_norm_rows(x, param(g, ps, p.gamma), param(g, ps, p.beta));
}

enum class MaskMode { none, post_softmax, pre_softmax };

// Attention-weight masking driven by a (possibly straight-through) relation
// matrix over token pairs. In pre_softmax mode disallowed logits are removed
// before normalization (rows with nothing allowed become all-zero); in both
// modes the relation is multiplied into the weights so its producer receives
// gradients.
template <typename S>
struct AttnMaskSpec {
  MaskMode mode = MaskMode::none;
  std::optional<Var<S>> relation;
};

// Deterministic attention dropout that suppresses, per query row, the
// `round(p * n_frame)` largest same-frame weights. Tokens are two
// equal-length frames stacked along rows; cross-frame weights are never
// touched. Applied only where explicitly enabled (training-time decoding).
template <typename S>
struct SpatialDrop {
  bool enabled = false;
  S p = S(0);
  Index n_frame = 0;
};

template <typename S>
struct MhaTrace {
  std::vector<MatX<S>> scores;   // per head, pre-softmax logits
  std::vector<MatX<S>> weights;  // per head, attention weights actually used
};

namespace detail {

template <typename S>
MatX<S> spatial_drop_mask(const MatX<S>& w, const SpatialDrop<S>& drop) {
  const Index n = drop.n_frame;
  if (w.rows() != 2 * n || w.cols() != 2 * n)
    throw ValidationError("spatial dropout expects two stacked frames of equal length");
  const Index k = Index(std::lround(double(drop.p) * double(n)));
  MatX<S> keep = MatX<S>::Ones(w.rows(), w.cols());
  if (k <= 0) return keep;
  if (k > n) throw ValidationError("spatial dropout would remove more weights than a frame holds");
  std::vector<Index> cols(static_cast<std::size_t>(n));
  for (Index i = 0; i < w.rows(); ++i) {
    const Index base = (i < n) ? 0 : n;
    for (Index j = 0; j < n; ++j) cols[std::size_t(j)] = base + j;
    // k largest weights; ties resolved toward the smaller column so the
    // selection is independent of sort implementation details.
    std::partial_sort(cols.begin(), cols.begin() + k, cols.end(), [&](Index a, Index b) {
      if (w(i, a) != w(i, b)) return w(i, a) > w(i, b);
      return a < b;
    });
    for (Index j = 0; j < k; ++j) keep(i, cols[std::size_t(j)]) = S(0);
  }
  return keep;
}

}  // namespace detail

template <typename S>
Var<S> multi_head_attention(ParamStore<S>& ps, const AttnP& p, Var<S> xq, Var<S> xkv,
                            const AttnMaskSpec<S>& mask = {}, const SpatialDrop<S>& drop = {},
                            MhaTrace<S>* trace = nullptr) {
  const Index dim = xq.cols();
  if (p.heads < 1 || dim % p.heads != 0)
    throw ValidationError("attention: embedding dim must be divisible by head count");
  const Index dk = dim / p.heads;
  const S inv_sqrt_dk = S(1) / std::sqrt(S(dk));

  Var<S> q = linear(ps, p.q, xq);
  Var<S> k = linear(ps, p.k, xkv);
  Var<S> v = linear(ps, p.v, xkv);

  if (mask.mode != MaskMode::none) {
    if (!mask.relation) throw ValidationError("attention mask requested without a relation matrix");
    if (mask.relation->rows() != xq.rows() || mask.relation->cols() != xkv.rows())
      throw ValidationError("attention relation matrix shape mismatch");
  }

  std::vector<Var<S>> head_outs;
  head_outs.reserve(std::size_t(p.heads));
  for (Index h = 0; h < p.heads; ++h) {
    Var<S> qh = ad::slice_cols(q, h * dk, dk);
    Var<S> kh = ad::slice_cols(k, h * dk, dk);
    Var<S> vh = ad::slice_cols(v, h * dk, dk);
    Var<S> scores = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt_dk);
    if (trace) trace->scores.push_back(scores.v());

    Var<S> w{nullptr, -1};
    switch (mask.mode) {
      case MaskMode::none:
        w = ad::softmax_rows(scores);
        break;
      case MaskMode::post_softmax:
        w = ad::cmul(ad::softmax_rows(scores), *mask.relation);
        break;
      case MaskMode::pre_softmax: {
        // Normalize over allowed entries only, then multiply by the relation
        // itself: a hard {0,1} relation leaves values unchanged while keeping
        // the gradient path into whatever produced it.
        MatX<S> allow = (mask.relation->v().array() != S(0)).template cast<S>();
        w = ad::cmul(ad::masked_softmax_rows(scores, allow), *mask.relation);
        break;
      }
    }
    if (drop.enabled && drop.p > S(0))
      w = ad::cmul_const(w, detail::spatial_drop_mask(w.v(), drop));
    if (trace) trace->weights.push_back(w.v());
    head_outs.push_back(ad::matmul(w, vh));
  }
  Var<S> y = (head_outs.size() == 1) ? head_outs[0] : ad::concat_cols(head_outs);
  return linear(ps, p.o, y);
}

// Residual transformer block. `norm_pre` selects pre-normalization; when off
// the sublayers see their inputs unnormalized. `extra` (when set) is
// evaluated on the block input and its output is added to the block output —
// the hook used by the masked-attention side branch.
template <typename S>
Var<S> encoder_layer(ParamStore<S>& ps, const EncoderLayerP& p, Var<S> x, bool norm_pre = true,
                     const AttnMaskSpec<S>& mask = {}, const SpatialDrop<S>& drop = {},
                     const std::function<Var<S>(Var<S>)>& extra = nullptr,
                     MhaTrace<S>* trace = nullptr) {
  Var<S> a_in = norm_pre ? layer_norm(ps, p.ln1, x) : x;
  Var<S> h = ad::add(x, multi_head_attention(ps, p.attn, a_in, a_in, mask, drop, trace));
  Var<S> f_in = norm_pre ? layer_norm(ps, p.ln2, h) : h;
  Var<S> f1 = ad::gelu(linear(ps, p.ffn.fc1, f_in));
  Var<S> f = ad::add(h, linear(ps, p.ffn.fc2, f1));
  if (extra) f = ad::add(f, extra(x));
  return f;
}

// ---------------------------------------------------------------------------
// Patch embedding.

// Flattens non-overlapping patch x patch blocks of a (1- or 3-channel) image
// into rows. Patch grid is row-major; within a patch the layout is
// (py * patch + px) * 3 + c. Single-channel input is replicated to three.
template <typename S>
MatX<S> patch_tokens(const std::vector<MatX<S>>& channels, Index patch) {
  if (channels.empty()) throw ValidationError("patch_tokens: no channels");
  if (channels.size() != 1 && channels.size() != 3)
    throw ValidationError("patch_tokens: expected 1 or 3 channels");
  const Index h = channels[0].rows(), w = channels[0].cols();
  for (const auto& c : channels)
    if (c.rows() != h || c.cols() != w) throw ValidationError("patch_tokens: channel size mismatch");
  if (patch < 1 || h % patch != 0 || w % patch != 0)
    throw ValidationError("patch_tokens: image dims must be divisible by the patch size");
  const Index gh = h / patch, gw = w / patch;
  MatX<S> out(gh * gw, patch * patch * 3);
  for (Index gy = 0; gy < gh; ++gy)
    for (Index gx = 0; gx < gw; ++gx) {
      auto row = out.row(gy * gw + gx);
      for (Index py = 0; py < patch; ++py)
        for (Index px = 0; px < patch; ++px)
          for (Index c = 0; c < 3; ++c) {
            const auto& chan = channels[channels.size() == 1 ? 0 : std::size_t(c)];
            row((py * patch + px) * 3 + c) = chan(gy * patch + py, gx * patch + px);
          }
    }
  return out;
}

}  // namespace lftrack::nn
