#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "lftrack/light_field.hpp"
#include "lftrack/types.hpp"

namespace lftrack {

enum class TextureKind { constant, checker, noise };

// A fronto-parallel textured rectangle. Disparity is the per-angular-step
// pixel shift: in view (u, v) the layer appears translated by
// (disparity*(u - U/2), disparity*(v - V/2)) relative to the center view,
// on top of the per-frame motion (vx, vy).
struct LayerSpec {
  TextureKind texture = TextureKind::noise;
  float disparity = 0.f;
  float vx = 0.f, vy = 0.f;   // pixels per frame
  float cx = 0.f, cy = 0.f;   // rectangle center at t = 0, center-view pixels
  float w = 0.f, h = 0.f;     // rectangle extent in pixels
  float lo = 0.f, hi = 1.f;   // intensity range (checker/constant use lo/hi levels)
  int cell = 8;               // texture cell size in pixels
};

struct SceneSpec {
  std::vector<LayerSpec> layers;  // layers[0] is front-most; occlusion front-to-back
  TextureKind background_texture = TextureKind::constant;
  float background_lo = 0.05f;
  float background_hi = 0.05f;
  int background_cell = 16;
  float global_gain = 1.f;  // low-light multiplier; results clamped to [0,1]
};

struct GroundTruth {
  // boxes[t][k]: layer k's box at frame t, center-view pixel coordinates.
  std::vector<std::vector<Box>> boxes;
  // disparity[t]: per-pixel disparity of the front-most covering layer in the
  // center view (background contributes 0).
  std::vector<ArrXf> disparity;
};

// Throws ValidationError when the spec breaks the shift bound
// |disparity| * max angular extent < min(H, W) / 4, when a layer is
// degenerate, or when a box center leaves the frame at any t.
void validate_scene(const SceneSpec& spec, int T, int U, int V, int H, int W);

std::pair<LightFieldVideo<float>, GroundTruth> generate_synthetic(const SceneSpec& spec, int T,
                                                                  int U, int V, int H, int W,
                                                                  int C, std::uint64_t seed,
                                                                  double frame_rate_hz = 25.0);

// Flat key=value scene description: dimensions (T,U,V,H,W,C), frame_rate_hz,
// global_gain, background_*, and layerK.* fields. Unknown keys are rejected.
struct SceneFile {
  SceneSpec spec;
  int T = 8, U = 5, V = 5, H = 64, W = 64, C = 1;
  double frame_rate_hz = 25.0;
};
SceneFile parse_scene_file(const std::filesystem::path& path);

// Ground-truth boxes as text: one line per (frame, layer): "t k cx cy w h".
void save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path);
GroundTruth load_ground_truth(const std::filesystem::path& path);

}  // namespace lftrack
