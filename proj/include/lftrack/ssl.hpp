#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "lftrack/graph.hpp"
#include "lftrack/nn.hpp"
#include "lftrack/rng.hpp"
#include "lftrack/types.hpp"

namespace lftrack::ssl {

using ad::Graph;
using ad::Var;
using nn::ParamStore;

// Fixed-count token mask over a two-frame sequence; 1 = masked.
struct TokenMask {
  std::vector<uint8_t> values;
  Index count = 0;

  Index size() const { return Index(values.size()); }
};

// Uniformly random subset of exactly round(rate * 2N) tokens. Degenerate
// masks (nothing or everything hidden) are rejected: the reconstruction
// objective is undefined for them.
inline TokenMask sample_mask(Index two_n, double rate, uint64_t seed) {
  if (two_n < 2) throw ValidationError("token mask needs at least 2 tokens");
  if (!(rate > 0.0 && rate < 1.0)) throw ValidationError("mask rate must lie strictly in (0,1)");
  const Index count = Index(std::lround(rate * double(two_n)));
  if (count == 0 || count == two_n)
    throw ValidationError("mask rate " + std::to_string(rate) + " over " + std::to_string(two_n) +
                          " tokens hides " + std::to_string(count) +
                          " of them: degenerate reconstruction objective");
  std::vector<Index> idx(static_cast<std::size_t>(two_n));
  std::iota(idx.begin(), idx.end(), Index(0));
  Rng rng(seed);
  for (Index i = 0; i < count; ++i) {
    const Index j = i + Index(rng.uniform_int(int(two_n - i)));
    std::swap(idx[std::size_t(i)], idx[std::size_t(j)]);
  }
  TokenMask m;
  m.values.assign(std::size_t(two_n), 0);
  for (Index i = 0; i < count; ++i) m.values[std::size_t(idx[std::size_t(i)])] = 1;
  m.count = count;
  return m;
}

struct DecoderP {
  std::vector<nn::EncoderLayerP> layers;
  Index mask_token = -1;  // learned 1 x C row
};

template <typename S>
DecoderP make_decoder(ParamStore<S>& ps, const std::string& prefix, Index dim, Index heads,
                      Index depth, Rng& rng) {
  if (depth < 0) throw ValidationError("decoder depth must be nonnegative");
  DecoderP p;
  p.mask_token = ps.add(prefix + ".mask_token", nn::trunc_normal_init<S>(rng, 1, dim));
  for (Index l = 0; l < depth; ++l)
    p.layers.push_back(nn::make_encoder_layer(ps, prefix + ".l" + std::to_string(l), dim, heads, rng));
  return p;
}

template <typename S>
struct DecodeConfig {
  S p_drop = S(0.3);   // same-frame attention dropout rate
  bool training = false;  // dropout active only while training
  bool norm_pre = true;
};

// Decoder input: kept rows pass the encoder output through unchanged; masked
// rows are replaced by mask_token + that row's position embedding. The mix is
// built with exact 0/1 row scaling, so the encoder value at a masked row
// cannot influence the decoder input.
template <typename S>
Var<S> decoder_input(ParamStore<S>& ps, const DecoderP& p, Var<S> e, const TokenMask& mask,
                     const MatX<S>& positions) {
  Graph<S>& g = *e.g;
  if (mask.size() != e.rows()) throw ValidationError("token mask length mismatch");
  if (positions.rows() != e.rows() || positions.cols() != e.cols())
    throw ValidationError("decoder positions shape mismatch");
  VecX<S> keep(e.rows()), hide(e.rows());
  for (Index i = 0; i < e.rows(); ++i) {
    hide(i) = mask.values[std::size_t(i)] ? S(1) : S(0);
    keep(i) = S(1) - hide(i);
  }
  Var<S> fill = ad::add(ad::broadcast_row(nn::param(g, ps, p.mask_token), e.rows()),
                        ad::constant(g, positions));
  return ad::add(ad::scale_rows(e, keep), ad::scale_rows(fill, hide));
}

template <typename S>
Var<S> decode(ParamStore<S>& ps, const DecoderP& p, Var<S> e, const TokenMask& mask,
              const MatX<S>& positions, const DecodeConfig<S>& cfg = {}) {
  if (e.rows() % 2 != 0) throw ValidationError("decoder expects two stacked frames of equal length");
  Var<S> x = decoder_input(ps, p, e, mask, positions);
  nn::SpatialDrop<S> drop;
  drop.enabled = cfg.training && cfg.p_drop > S(0);
  drop.p = cfg.p_drop;
  drop.n_frame = e.rows() / 2;
  for (const auto& layer : p.layers)
    x = nn::encoder_layer(ps, layer, x, cfg.norm_pre, {}, drop);
  return x;
}

// Reconstruction distance. Default scoring: Euclidean norm of (decoded -
// encoder output) over masked rows only, with the target held constant under
// differentiation. The literal variant scores all rows against the
// masked-rows-only target (kept rows against zero).
template <typename S>
Var<S> ssl_loss(Var<S> decoded, Var<S> e, const TokenMask& mask, bool literal = false) {
  if (decoded.rows() != e.rows() || decoded.cols() != e.cols())
    throw ValidationError("reconstruction loss shape mismatch");
  if (mask.size() != e.rows()) throw ValidationError("token mask length mismatch");
  if (!decoded.v().allFinite() || !e.v().allFinite())
    throw NumericError("reconstruction loss saw non-finite inputs");
  VecX<S> hide(e.rows());
  for (Index i = 0; i < e.rows(); ++i) hide(i) = mask.values[std::size_t(i)] ? S(1) : S(0);
  Var<S> target = ad::stop_grad(e);
  Var<S> diff = literal ? ad::sub(decoded, ad::scale_rows(target, hide))
                        : ad::scale_rows(ad::sub(decoded, target), hide);
  return ad::sqrt_cwise(ad::sum_all(ad::cmul(diff, diff)));
}

}  // namespace lftrack::ssl
