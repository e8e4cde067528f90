#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "lftrack/image_io.hpp"
#include "lftrack/light_field.hpp"
#include "lftrack/threading.hpp"

namespace lftrack {

// Central-difference angular gradient of the horizontal EPIs at a fixed v:
// planes[u](y, x) = (L[t, u+d, v, y, x, c] - L[t, u-d, v, y, x, c]) / (2d)
// for d <= u <= U-1-d, zero at the angular boundary.
template <typename S = float>
struct GradientImageH {
  std::vector<ArrX<S>> planes;  // indexed by u, each H x W
  int d = 1;
  int v_fixed = 0;
  int t = 0, c = 0;
};

// Mirror over the vertical EPIs at a fixed u: planes indexed by v.
template <typename S = float>
struct GradientImageV {
  std::vector<ArrX<S>> planes;  // indexed by v, each H x W
  int d = 1;
  int u_fixed = 0;
  int t = 0, c = 0;
};

enum class EsiVariant { amplitude, max, mean, sum, h_only, v_only };
enum class ChannelPolicy { luma, per_channel };

template <typename S = float>
struct EsiFrame {
  std::vector<ArrX<S>> channels;  // 1 (luma / single source channel) or 3
  EsiVariant variant = EsiVariant::amplitude;
  int t = 0;
  int d = 1;
  int u_sel = 0, v_sel = 0;

  int height() const { return channels.empty() ? 0 : int(channels[0].rows()); }
  int width() const { return channels.empty() ? 0 : int(channels[0].cols()); }
};

template <typename S = float>
using EsiVideo = std::vector<EsiFrame<S>>;

struct EsiConfig {
  int d = 1;
  EsiVariant variant = EsiVariant::amplitude;
  ChannelPolicy policy = ChannelPolicy::luma;
  int u_sel = -1;  // -1 selects floor(U/2)
  int v_sel = -1;
};

template <typename S>
GradientImageH<S> gradient_h(const LightFieldVideo<S>& lf, int t, int c, int d = 1,
                             int v_fixed = -1) {
  if (d <= 0) throw ValidationError("gradient_h: angular step d must be > 0");
  if (lf.views_u() < 2 * d + 1)
    throw ValidationError("gradient_h: need U >= 2d+1, got U=" + std::to_string(lf.views_u()) +
                          " d=" + std::to_string(d));
  if (v_fixed < 0) v_fixed = lf.views_v() / 2;
  if (t < 0 || t >= lf.frames() || c < 0 || c >= lf.channels() || v_fixed >= lf.views_v())
    throw ValidationError("gradient_h: index out of range");

  GradientImageH<S> g;
  g.d = d;
  g.v_fixed = v_fixed;
  g.t = t;
  g.c = c;
  const int U = lf.views_u(), H = lf.height(), W = lf.width();
  g.planes.assign(std::size_t(U), ArrX<S>::Zero(H, W));
  const S inv = S(1) / S(2 * d);
  for (int u = d; u <= U - 1 - d; ++u) {
    ArrX<S>& p = g.planes[std::size_t(u)];
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        p(y, x) = (lf(t, u + d, v_fixed, y, x, c) - lf(t, u - d, v_fixed, y, x, c)) * inv;
  }
  return g;
}

template <typename S>
GradientImageV<S> gradient_v(const LightFieldVideo<S>& lf, int t, int c, int d = 1,
                             int u_fixed = -1) {
  if (d <= 0) throw ValidationError("gradient_v: angular step d must be > 0");
  if (lf.views_v() < 2 * d + 1)
    throw ValidationError("gradient_v: need V >= 2d+1, got V=" + std::to_string(lf.views_v()) +
                          " d=" + std::to_string(d));
  if (u_fixed < 0) u_fixed = lf.views_u() / 2;
  if (t < 0 || t >= lf.frames() || c < 0 || c >= lf.channels() || u_fixed >= lf.views_u())
    throw ValidationError("gradient_v: index out of range");

  GradientImageV<S> g;
  g.d = d;
  g.u_fixed = u_fixed;
  g.t = t;
  g.c = c;
  const int V = lf.views_v(), H = lf.height(), W = lf.width();
  g.planes.assign(std::size_t(V), ArrX<S>::Zero(H, W));
  const S inv = S(1) / S(2 * d);
  for (int v = d; v <= V - 1 - d; ++v) {
    ArrX<S>& p = g.planes[std::size_t(v)];
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        p(y, x) = (lf(t, u_fixed, v + d, y, x, c) - lf(t, u_fixed, v - d, y, x, c)) * inv;
  }
  return g;
}

namespace detail {

template <typename S>
void check_same_shape(const GradientImageH<S>& gh, const GradientImageV<S>& gv) {
  if (gh.planes.empty() || gv.planes.empty() ||
      gh.planes[0].rows() != gv.planes[0].rows() || gh.planes[0].cols() != gv.planes[0].cols())
    throw ValidationError("esi: gradient images have mismatched spatial dimensions");
  if (gh.d != gv.d) throw ValidationError("esi: gradient images use different angular steps");
}

}  // namespace detail

template <typename S>
EsiFrame<S> esi_amplitude(const GradientImageH<S>& gh, const GradientImageV<S>& gv,
                          int u_sel = -1, int v_sel = -1) {
  detail::check_same_shape(gh, gv);
  if (u_sel < 0) u_sel = int(gh.planes.size()) / 2;
  if (v_sel < 0) v_sel = int(gv.planes.size()) / 2;
  if (u_sel >= int(gh.planes.size()) || v_sel >= int(gv.planes.size()))
    throw ValidationError("esi_amplitude: selection index out of range");

  EsiFrame<S> out;
  out.variant = EsiVariant::amplitude;
  out.t = gh.t;
  out.d = gh.d;
  out.u_sel = u_sel;
  out.v_sel = v_sel;
  const ArrX<S>& a = gh.planes[std::size_t(u_sel)];
  const ArrX<S>& b = gv.planes[std::size_t(v_sel)];
  out.channels.push_back((a * a + b * b).sqrt());
  return out;
}

template <typename S>
EsiFrame<S> esi_variant(const GradientImageH<S>& gh, const GradientImageV<S>& gv,
                        EsiVariant variant, int u_sel = -1, int v_sel = -1) {
  if (variant == EsiVariant::amplitude) return esi_amplitude(gh, gv, u_sel, v_sel);
  detail::check_same_shape(gh, gv);
  if (u_sel < 0) u_sel = int(gh.planes.size()) / 2;
  if (v_sel < 0) v_sel = int(gv.planes.size()) / 2;

  EsiFrame<S> out;
  out.variant = variant;
  out.t = gh.t;
  out.d = gh.d;
  out.u_sel = u_sel;
  out.v_sel = v_sel;

  const int U = int(gh.planes.size());
  const int V = int(gv.planes.size());
  const int d = gh.d;
  const int nu = U - 2 * d;
  const int nv = V - 2 * d;
  if (nu < 1 || nv < 1) throw ValidationError("esi_variant: no interior angular samples");

  switch (variant) {
    case EsiVariant::h_only:
      out.channels.push_back(gh.planes[std::size_t(u_sel)].abs());
      return out;
    case EsiVariant::v_only:
      out.channels.push_back(gv.planes[std::size_t(v_sel)].abs());
      return out;
    default:
      break;
  }

  const Index H = gh.planes[0].rows(), W = gh.planes[0].cols();
  ArrX<S> rh(H, W), rv(H, W);
  if (variant == EsiVariant::max) {
    rh = gh.planes[std::size_t(d)].abs();
    rv = gv.planes[std::size_t(d)].abs();
    for (int u = d + 1; u <= U - 1 - d; ++u) rh = rh.max(gh.planes[std::size_t(u)].abs());
    for (int v = d + 1; v <= V - 1 - d; ++v) rv = rv.max(gv.planes[std::size_t(v)].abs());
    out.channels.push_back((rh * rh + rv * rv).sqrt());
    return out;
  }

  // mean / sum share the interior absolute sums.
  rh = gh.planes[std::size_t(d)].abs();
  rv = gv.planes[std::size_t(d)].abs();
  for (int u = d + 1; u <= U - 1 - d; ++u) rh += gh.planes[std::size_t(u)].abs();
  for (int v = d + 1; v <= V - 1 - d; ++v) rv += gv.planes[std::size_t(v)].abs();
  if (nu == nv) {
    // With a common interior count n the mean amplitude is (1/n) * the sum
    // amplitude; computing sum as n * mean keeps that count identity exact in
    // floating point (the direct form differs only by rounding).
    ArrX<S> mean_amp = (rh * rh + rv * rv).sqrt() / S(nu);
    if (variant == EsiVariant::mean)
      out.channels.push_back(std::move(mean_amp));
    else
      out.channels.push_back(mean_amp * S(nu));
  } else {
    if (variant == EsiVariant::mean) {
      ArrX<S> mh = rh / S(nu), mv = rv / S(nv);
      out.channels.push_back((mh * mh + mv * mv).sqrt());
    } else {
      out.channels.push_back((rh * rh + rv * rv).sqrt());
    }
  }
  return out;
}

template <typename S>
EsiFrame<S> esi_frame(const LightFieldVideo<S>& lf, int t, const EsiConfig& cfg) {
  const bool luma = lf.channels() == 3 && cfg.policy == ChannelPolicy::luma;
  EsiFrame<S> out;
  const int source_channels = luma ? 1 : lf.channels();

  const LightFieldVideo<S>* src = &lf;
  LightFieldVideo<S> luma_lf;
  if (luma) {
    luma_lf = LightFieldVideo<S>(lf.frames(), lf.views_u(), lf.views_v(), lf.height(), lf.width(),
                                 1, lf.frame_rate_hz());
    for (int u = 0; u < lf.views_u(); ++u)
      for (int v = 0; v < lf.views_v(); ++v)
        for (int y = 0; y < lf.height(); ++y)
          for (int x = 0; x < lf.width(); ++x)
            luma_lf(t, u, v, y, x, 0) = S(0.299) * lf(t, u, v, y, x, 0) +
                                        S(0.587) * lf(t, u, v, y, x, 1) +
                                        S(0.114) * lf(t, u, v, y, x, 2);
    src = &luma_lf;
  }

  for (int c = 0; c < source_channels; ++c) {
    const auto gh = gradient_h(*src, t, c, cfg.d);
    const auto gv = gradient_v(*src, t, c, cfg.d);
    EsiFrame<S> one = esi_variant(gh, gv, cfg.variant, cfg.u_sel, cfg.v_sel);
    if (c == 0) {
      out = std::move(one);
    } else {
      out.channels.push_back(std::move(one.channels[0]));
    }
  }
  return out;
}

template <typename S>
EsiVideo<S> esi_video(const LightFieldVideo<S>& lf, const EsiConfig& cfg) {
  EsiVideo<S> frames(std::size_t(lf.frames()));
  parallel_for(lf.frames(), [&](Index t) { frames[std::size_t(t)] = esi_frame(lf, int(t), cfg); });
  return frames;
}

// --- export -----------------------------------------------------------------

inline void esi_write_pfm(const EsiFrame<float>& frame, const std::filesystem::path& path) {
  if (frame.channels.size() != 1 && frame.channels.size() != 3)
    throw ValidationError("esi_write_pfm: frame must have 1 or 3 channels");
  pfm_write(path, frame.channels);
}

inline EsiFrame<float> esi_read_pfm(const std::filesystem::path& path) {
  EsiFrame<float> frame;
  frame.channels = pfm_read(path);
  return frame;
}

// Lossy 16-bit preview normalized by the recorded max; the normalization
// factor goes to `<path>.norm.txt`.
inline void esi_write_png_normalized(const EsiFrame<float>& frame,
                                     const std::filesystem::path& path) {
  float maxv = 0.f;
  for (const auto& ch : frame.channels) maxv = std::max(maxv, ch.maxCoeff());
  const float scale = maxv > 0.f ? 1.f / maxv : 0.f;

  RawImage img;
  img.h = frame.height();
  img.w = frame.width();
  img.c = int(frame.channels.size());
  img.bit_depth = 16;
  img.pix.resize(std::size_t(img.h) * img.w * img.c);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < img.c; ++c)
        img.at(y, x, c) = quantize(frame.channels[std::size_t(c)](y, x) * scale, 16);
  png_write(path, img);

  std::ofstream side(path.string() + ".norm.txt");
  if (!side) throw ValidationError("esi_write_png_normalized: cannot write sidecar");
  char buf[64];
  std::snprintf(buf, sizeof(buf), "max=%.9g\n", double(maxv));
  side << buf;
}

}  // namespace lftrack
