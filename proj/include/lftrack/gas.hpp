#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lftrack/graph.hpp"
#include "lftrack/nn.hpp"
#include "lftrack/rng.hpp"
#include "lftrack/types.hpp"

namespace lftrack::gas {

using ad::Graph;
using ad::Var;
using nn::ParamStore;

// Which label pairs may attend to each other. `full` couples geometric
// tokens within and across frames; `intra` drops the cross-frame geometric
// terms; `inter` drops the same-frame geometric terms. Non-geometric tokens
// attend within their own frame in every mode.
enum class RelationMode { full, intra, inter };

// 4x4 coupling over padded label columns (0 = plain/frame1, 1 = geo/frame1,
// 2 = plain/frame2, 3 = geo/frame2). The relation matrix is
// padded * coupling * padded^T.
template <typename S>
MatX<S> relation_coupling(RelationMode mode) {
  MatX<S> m = MatX<S>::Zero(4, 4);
  m(0, 0) = S(1);
  m(2, 2) = S(1);
  if (mode != RelationMode::inter) {
    m(1, 1) = S(1);
    m(3, 3) = S(1);
  }
  if (mode != RelationMode::intra) {
    m(1, 3) = S(1);
    m(3, 1) = S(1);
  }
  return m;
}

// Value-level padding of (2N x 2) labels to the (2N x 4) per-frame layout.
template <typename S>
MatX<S> pad_labels_values(const MatX<S>& p, Index n_first) {
  if (p.cols() != 2) throw ValidationError("pad_labels: labels must have 2 columns");
  if (n_first < 0 || n_first > p.rows()) throw ValidationError("pad_labels: bad frame split");
  MatX<S> out = MatX<S>::Zero(p.rows(), 4);
  out.block(0, 0, n_first, 2) = p.topRows(n_first);
  out.block(n_first, 2, p.rows() - n_first, 2) = p.bottomRows(p.rows() - n_first);
  return out;
}

template <typename S>
MatX<S> relation_from_padded(const MatX<S>& padded, RelationMode mode) {
  if (padded.cols() != 4) throw ValidationError("relation: padded labels must have 4 columns");
  for (Index i = 0; i < padded.rows(); ++i) {
    Index ones = 0;
    for (Index j = 0; j < 4; ++j) {
      if (padded(i, j) != S(0) && padded(i, j) != S(1))
        throw ValidationError("relation: padded labels must be one-hot");
      if (padded(i, j) == S(1)) ++ones;
    }
    if (ones != 1) throw ValidationError("relation: padded labels must be one-hot");
  }
  const MatX<S> m = relation_coupling<S>(mode);
  return padded * m * padded.transpose();
}

// ---------------------------------------------------------------------------
// Branch parameters and forward pass.

struct GasP {
  nn::LinearP fc1, fc2;  // per-token partition MLP: C -> C -> 2
  nn::AttnP attn;        // single-head side attention, no FFN
};

template <typename S>
GasP make_gas(ParamStore<S>& ps, const std::string& prefix, Index dim, Rng& rng) {
  GasP p;
  p.fc1 = nn::make_linear(ps, prefix + ".fc1", dim, dim, rng);
  p.fc2 = nn::make_linear(ps, prefix + ".fc2", dim, 2, rng);
  p.attn = nn::make_attention(ps, prefix + ".attn", dim, 1, rng);
  return p;
}

template <typename S>
struct GasConfig {
  S tau = S(1);
  bool stochastic = false;  // add seeded Gumbel noise to partition logits
  nn::MaskMode mask_mode = nn::MaskMode::post_softmax;
  RelationMode relation_mode = RelationMode::full;
  // Use the soft relation matrix directly instead of the straight-through
  // hard one — the differentiable-everywhere mode used by gradient checks.
  bool relax_soft = false;
};

template <typename S>
struct GasTrace {
  std::vector<int> labels;  // per token: 0 = plain, 1 = geometric
  MatX<S> soft;             // (2N, 2) relaxed partition
  MatX<S> relation_hard;    // (2N, 2N) binary relation actually applied
};

template <typename S>
struct PartitionOut {
  Var<S> soft;     // rows on the simplex
  MatX<S> hard;    // one-hot argmax of soft (ties -> column 0)
  std::vector<int> labels;
};

// Per-token two-way partition: MLP logits, temperature-scaled (optionally
// Gumbel-perturbed) softmax, hard labels by argmax of the relaxation.
template <typename S>
PartitionOut<S> predict_partition(ParamStore<S>& ps, const GasP& p, Var<S> x,
                                  const GasConfig<S>& cfg, Rng* rng) {
  if (cfg.tau <= S(0)) throw ValidationError("partition temperature must be positive");
  Graph<S>& g = *x.g;
  Var<S> h = ad::gelu(nn::linear(ps, p.fc1, x));
  Var<S> logits = nn::linear(ps, p.fc2, h);
  if (!logits.v().allFinite()) throw NumericError("partition logits are not finite");
  if (cfg.stochastic) {
    if (!rng) throw ValidationError("stochastic partition requested without an RNG");
    MatX<S> noise(logits.rows(), 2);
    for (Index i = 0; i < noise.rows(); ++i)
      for (Index j = 0; j < 2; ++j) noise(i, j) = S(rng->gumbel());
    logits = ad::add(logits, ad::constant(g, std::move(noise)));
  }
  PartitionOut<S> out;
  out.soft = ad::softmax_rows(ad::scale(logits, S(1) / cfg.tau));
  out.hard = MatX<S>::Zero(out.soft.rows(), 2);
  out.labels.resize(std::size_t(out.soft.rows()));
  for (Index i = 0; i < out.soft.rows(); ++i) {
    const int lab = out.soft.v()(i, 1) > out.soft.v()(i, 0) ? 1 : 0;
    out.hard(i, lab) = S(1);
    out.labels[std::size_t(i)] = lab;
  }
  return out;
}

// Masked side attention added per encoder layer. Consumes the layer input,
// partitions it, builds the relation matrix, and attends under that mask.
// Forward uses the hard relation; gradients flow through the soft relaxation
// (straight-through), unless relax_soft uses the soft relation outright.
template <typename S>
Var<S> gas_branch(ParamStore<S>& ps, const GasP& p, Var<S> x, const GasConfig<S>& cfg,
                  Rng* rng = nullptr, GasTrace<S>* trace = nullptr) {
  if (x.rows() % 2 != 0) throw ValidationError("gas branch expects two stacked frames of equal length");
  const Index n = x.rows() / 2;

  PartitionOut<S> part = predict_partition(ps, p, x, cfg, rng);
  const MatX<S> coupling = relation_coupling<S>(cfg.relation_mode);

  Var<S> padded_soft = ad::pad_label_cols(part.soft, n);
  Var<S> w_soft = ad::matmul_nt(ad::matmul_const_r(padded_soft, coupling), padded_soft);

  const MatX<S> padded_hard = pad_labels_values(part.hard, n);
  const MatX<S> w_hard = padded_hard * coupling * padded_hard.transpose();

  Var<S> relation = cfg.relax_soft ? w_soft : ad::straight_through(w_hard, w_soft);
  if (trace) {
    trace->labels = part.labels;
    trace->soft = part.soft.v();
    trace->relation_hard = relation.v();
  }

  nn::AttnMaskSpec<S> mask;
  mask.mode = cfg.mask_mode;
  mask.relation = relation;
  return nn::multi_head_attention(ps, p.attn, x, x, mask);
}

}  // namespace lftrack::gas
