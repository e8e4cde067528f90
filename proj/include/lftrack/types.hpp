#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace lftrack {

using Index = Eigen::Index;

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using ArrX = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RowX = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using MatXf = MatX<float>;
using MatXd = MatX<double>;
using ArrXf = ArrX<float>;
using MatXi = Eigen::MatrixXi;

// Error taxonomy. ValidationError covers anything caused by bad inputs:
// malformed files, inconsistent dimensions, out-of-range configuration.
// NumericError covers failures that arise during otherwise valid
// computation (non-finite loss, singular normalization, ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Axis-aligned box, center/size parameterization, pixel units.
struct Box {
  float cx = 0.f;
  float cy = 0.f;
  float w = 0.f;
  float h = 0.f;
};

inline float box_iou(const Box& a, const Box& b) {
  const float ax1 = a.cx - 0.5f * a.w, ax2 = a.cx + 0.5f * a.w;
  const float ay1 = a.cy - 0.5f * a.h, ay2 = a.cy + 0.5f * a.h;
  const float bx1 = b.cx - 0.5f * b.w, bx2 = b.cx + 0.5f * b.w;
  const float by1 = b.cy - 0.5f * b.h, by2 = b.cy + 0.5f * b.h;
  const float iw = std::max(0.f, std::min(ax2, bx2) - std::max(ax1, bx1));
  const float ih = std::max(0.f, std::min(ay2, by2) - std::max(ay1, by1));
  const float inter = iw * ih;
  const float uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.f ? inter / uni : 0.f;
}

inline float center_distance(const Box& a, const Box& b) {
  const float dx = a.cx - b.cx;
  const float dy = a.cy - b.cy;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace lftrack
