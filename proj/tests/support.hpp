#pragma once

// Helpers shared by the unit suites and the acceptance runner.

#include <cmath>
#include <vector>

#include "lftrack/rng.hpp"
#include "lftrack/track.hpp"
#include "lftrack/train.hpp"
#include "lftrack/types.hpp"

namespace test_support {

using lftrack::Index;

template <typename S>
lftrack::MatX<S> rand_mat(lftrack::Rng& rng, Index r, Index c, double lo = -1.0, double hi = 1.0) {
  lftrack::MatX<S> m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = S(rng.uniform(lo, hi));
  return m;
}

// Reference attention oracle for a two-frame token stack: computes the
// softmax over the concatenated key axis blockwise — per-frame exponentials
// share one row denominator — and assembles the output as W1*V1 + W2*V2.
struct BlockAttention {
  lftrack::MatXd weights;  // (rows, 2n) assembled from the two blocks
  lftrack::MatXd output;   // weights * v, accumulated blockwise
};

inline BlockAttention block_assembled_attention(const lftrack::MatXd& scores,
                                                const lftrack::MatXd& v, Index n) {
  const Index rows = scores.rows();
  BlockAttention out;
  out.weights.resize(rows, 2 * n);
  out.output = lftrack::MatXd::Zero(rows, v.cols());
  for (Index i = 0; i < rows; ++i) {
    double mx = scores(i, 0);
    for (Index j = 1; j < 2 * n; ++j) mx = std::max(mx, scores(i, j));
    lftrack::MatXd e1(1, n), e2(1, n);
    double z1 = 0, z2 = 0;
    for (Index j = 0; j < n; ++j) {
      e1(0, j) = std::exp(scores(i, j) - mx);
      z1 += e1(0, j);
    }
    for (Index j = 0; j < n; ++j) {
      e2(0, j) = std::exp(scores(i, n + j) - mx);
      z2 += e2(0, j);
    }
    const double z = z1 + z2;
    for (Index j = 0; j < n; ++j) {
      out.weights(i, j) = e1(0, j) / z;
      out.weights(i, n + j) = e2(0, j) / z;
    }
    for (Index c = 0; c < v.cols(); ++c) {
      double acc1 = 0, acc2 = 0;
      for (Index j = 0; j < n; ++j) {
        acc1 += out.weights(i, j) * v(j, c);
        acc2 += out.weights(i, n + j) * v(n + j, c);
      }
      out.output(i, c) = acc1 + acc2;
    }
  }
  return out;
}

// Smallest legal tracker geometry: 16x16 template, 32x32 windows, 4x4
// encoder grid, 2x2 correlation kernel, 3x3 correlation map.
inline lftrack::track::ModelConfig toy_model_config() {
  lftrack::track::ModelConfig mc;
  mc.patch = 8;
  mc.c_emb = 8;
  mc.depth = 1;
  mc.heads = 2;
  mc.decoder_depth = 1;
  mc.decoder_heads = 2;
  mc.template_size = 16;
  mc.search_size = 32;
  return mc;
}

// Noise-backed videos with a moving box; good enough for trainer plumbing
// tests (determinism, shapes, error paths), not for learning quality.
inline std::vector<lftrack::train::VideoSample> toy_videos(int count, int frames, Index side,
                                                           uint64_t seed) {
  std::vector<lftrack::train::VideoSample> vids;
  lftrack::Rng rng(seed);
  for (int v = 0; v < count; ++v) {
    lftrack::train::VideoSample vs;
    float cx = float(side) / 2 + float(rng.uniform(-4.0, 4.0));
    float cy = float(side) / 2 + float(rng.uniform(-4.0, 4.0));
    for (int t = 0; t < frames; ++t) {
      vs.frames.push_back(rand_mat<float>(rng, side, side, 0.0, 1.0));
      lftrack::Box b;
      b.cx = cx + 1.5f * float(t);
      b.cy = cy + 0.5f * float(t);
      b.w = 8;
      b.h = 8;
      vs.boxes.push_back(b);
    }
    vids.push_back(std::move(vs));
  }
  return vids;
}

}  // namespace test_support
