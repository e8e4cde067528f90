#pragma once

#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "lftrack/types.hpp"

namespace lftrack {

// A light-field video: T time steps of a U x V camera grid, each view an
// H x W image with C channels. Samples live in one contiguous buffer in
// canonical (t, u, v, y, x, c) order with c fastest.
template <typename S = float>
class LightFieldVideo {
 public:
  LightFieldVideo() = default;

  LightFieldVideo(int t, int u, int v, int h, int w, int c, double frame_rate_hz = 25.0)
      : t_(t), u_(u), v_(v), h_(h), w_(w), c_(c), fps_(frame_rate_hz) {
    check_dims();
    samples_.assign(size(), S(0));
  }

  static LightFieldVideo from_samples(int t, int u, int v, int h, int w, int c,
                                      std::vector<S> samples, double frame_rate_hz = 25.0) {
    LightFieldVideo lf;
    lf.t_ = t;
    lf.u_ = u;
    lf.v_ = v;
    lf.h_ = h;
    lf.w_ = w;
    lf.c_ = c;
    lf.fps_ = frame_rate_hz;
    lf.check_dims();
    if (samples.size() != lf.size())
      throw ValidationError("light field sample count " + std::to_string(samples.size()) +
                            " does not match dimensions (expected " + std::to_string(lf.size()) + ")");
    lf.samples_ = std::move(samples);
    lf.validate_values();
    return lf;
  }

  int frames() const { return t_; }
  int views_u() const { return u_; }
  int views_v() const { return v_; }
  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }
  double frame_rate_hz() const { return fps_; }
  void set_frame_rate_hz(double f) { fps_ = f; }

  std::size_t size() const {
    return std::size_t(t_) * std::size_t(u_) * std::size_t(v_) * std::size_t(h_) *
           std::size_t(w_) * std::size_t(c_);
  }

  std::size_t index(int t, int u, int v, int y, int x, int c) const {
    return ((((std::size_t(t) * u_ + u) * v_ + v) * h_ + y) * w_ + x) * c_ + c;
  }

  S operator()(int t, int u, int v, int y, int x, int c) const {
    return samples_[index(t, u, v, y, x, c)];
  }
  S& operator()(int t, int u, int v, int y, int x, int c) {
    return samples_[index(t, u, v, y, x, c)];
  }

  const std::vector<S>& samples() const { return samples_; }
  std::vector<S>& samples() { return samples_; }

  // One view as an H x W matrix for a fixed (t, u, v, c).
  MatX<S> view(int t, int u, int v, int c) const {
    MatX<S> m(h_, w_);
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) m(y, x) = (*this)(t, u, v, y, x, c);
    return m;
  }

  // Rejects non-finite samples and samples outside [0, 1], naming the
  // offending coordinate.
  void validate_values() const {
    for (int t = 0; t < t_; ++t)
      for (int u = 0; u < u_; ++u)
        for (int v = 0; v < v_; ++v)
          for (int y = 0; y < h_; ++y)
            for (int x = 0; x < w_; ++x)
              for (int c = 0; c < c_; ++c) {
                const S s = (*this)(t, u, v, y, x, c);
                if (!std::isfinite(double(s)) || s < S(0) || s > S(1))
                  throw ValidationError(
                      "light field sample out of range at (t=" + std::to_string(t) +
                      ",u=" + std::to_string(u) + ",v=" + std::to_string(v) +
                      ",y=" + std::to_string(y) + ",x=" + std::to_string(x) +
                      ",c=" + std::to_string(c) + "): " + std::to_string(double(s)));
              }
  }

  template <typename T>
  LightFieldVideo<T> cast() const {
    std::vector<T> s(samples_.size());
    for (std::size_t i = 0; i < samples_.size(); ++i) s[i] = T(samples_[i]);
    LightFieldVideo<T> out;
    out = LightFieldVideo<T>::from_samples(t_, u_, v_, h_, w_, c_, std::move(s), fps_);
    return out;
  }

 private:
  void check_dims() const {
    if (t_ < 1 || u_ < 1 || v_ < 1 || h_ < 1 || w_ < 1 || c_ < 1)
      throw ValidationError("light field dimensions must all be >= 1, got T=" + std::to_string(t_) +
                            " U=" + std::to_string(u_) + " V=" + std::to_string(v_) +
                            " H=" + std::to_string(h_) + " W=" + std::to_string(w_) +
                            " C=" + std::to_string(c_));
    if (fps_ <= 0.0) throw ValidationError("frame rate must be positive");
  }

  int t_ = 0, u_ = 0, v_ = 0, h_ = 0, w_ = 0, c_ = 0;
  double fps_ = 25.0;
  std::vector<S> samples_;
};

enum class EpiKind { horizontal, vertical };

// An epipolar-plane image: one angular axis against one spatial axis.
// horizontal: rows index u, cols index x (fixed t, v, y, c).
// vertical:   rows index v, cols index y (fixed t, u, x, c).
template <typename S = float>
struct EpiImage {
  EpiKind kind = EpiKind::horizontal;
  MatX<S> values;
  int t = 0;
  int c = 0;
  int fixed_angular = 0;  // v for horizontal, u for vertical
  int fixed_spatial = 0;  // y for horizontal, x for vertical
};

template <typename S>
EpiImage<S> extract_epi_h(const LightFieldVideo<S>& lf, int t, int v, int y, int c) {
  if (t < 0 || t >= lf.frames() || v < 0 || v >= lf.views_v() || y < 0 || y >= lf.height() ||
      c < 0 || c >= lf.channels())
    throw ValidationError("horizontal EPI coordinates out of range");
  EpiImage<S> epi;
  epi.kind = EpiKind::horizontal;
  epi.t = t;
  epi.c = c;
  epi.fixed_angular = v;
  epi.fixed_spatial = y;
  epi.values.resize(lf.views_u(), lf.width());
  for (int u = 0; u < lf.views_u(); ++u)
    for (int x = 0; x < lf.width(); ++x) epi.values(u, x) = lf(t, u, v, y, x, c);
  return epi;
}

template <typename S>
EpiImage<S> extract_epi_v(const LightFieldVideo<S>& lf, int t, int u, int x, int c) {
  if (t < 0 || t >= lf.frames() || u < 0 || u >= lf.views_u() || x < 0 || x >= lf.width() ||
      c < 0 || c >= lf.channels())
    throw ValidationError("vertical EPI coordinates out of range");
  EpiImage<S> epi;
  epi.kind = EpiKind::vertical;
  epi.t = t;
  epi.c = c;
  epi.fixed_angular = u;
  epi.fixed_spatial = x;
  epi.values.resize(lf.views_v(), lf.height());
  for (int v = 0; v < lf.views_v(); ++v)
    for (int y = 0; y < lf.height(); ++y) epi.values(v, y) = lf(t, u, v, y, x, c);
  return epi;
}

}  // namespace lftrack
