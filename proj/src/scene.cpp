#include "lftrack/scene.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "lftrack/rng.hpp"
#include "lftrack/threading.hpp"

namespace lftrack {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Materialized texture grid; bilinear-sampled over [0, cols-1] x [0, rows-1].
ArrXf make_texture(const LayerSpec& layer, std::uint64_t seed) {
  const int th = int(std::ceil(layer.h)) + 1;
  const int tw = int(std::ceil(layer.w)) + 1;
  ArrXf tex(th, tw);
  switch (layer.texture) {
    case TextureKind::constant:
      tex.setConstant(layer.hi);
      break;
    case TextureKind::checker:
      for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x)
          tex(y, x) = ((y / layer.cell + x / layer.cell) % 2 == 0) ? layer.lo : layer.hi;
      break;
    case TextureKind::noise: {
      // Value noise: uniform lattice samples every `cell` px, cosine blend.
      const int gh = th / layer.cell + 2;
      const int gw = tw / layer.cell + 2;
      ArrXf lattice(gh, gw);
      Rng rng(seed);
      for (int j = 0; j < gh; ++j)
        for (int i = 0; i < gw; ++i)
          lattice(j, i) = float(rng.uniform(layer.lo, layer.hi));
      auto smooth = [](float a) { return 0.5f * (1.f - float(std::cos(kPi * a))); };
      for (int y = 0; y < th; ++y) {
        const int j = y / layer.cell;
        const float sy = smooth(float(y % layer.cell) / float(layer.cell));
        for (int x = 0; x < tw; ++x) {
          const int i = x / layer.cell;
          const float sx = smooth(float(x % layer.cell) / float(layer.cell));
          const float a = lattice(j, i) * (1.f - sx) + lattice(j, i + 1) * sx;
          const float b = lattice(j + 1, i) * (1.f - sx) + lattice(j + 1, i + 1) * sx;
          tex(y, x) = a * (1.f - sy) + b * sy;
        }
      }
      break;
    }
  }
  return tex;
}

float bilinear(const ArrXf& tex, float y, float x) {
  const int x0 = int(std::floor(x));
  const int y0 = int(std::floor(y));
  const float fx = x - float(x0);
  const float fy = y - float(y0);
  const float a = tex(y0, x0) * (1.f - fx) + tex(y0, x0 + 1) * fx;
  const float b = tex(y0 + 1, x0) * (1.f - fx) + tex(y0 + 1, x0 + 1) * fx;
  return a * (1.f - fy) + b * fy;
}

struct PreparedLayer {
  const LayerSpec* spec;
  ArrXf tex;
};

}  // namespace

void validate_scene(const SceneSpec& spec, int T, int U, int V, int H, int W) {
  if (spec.global_gain <= 0.f) throw ValidationError("scene: global_gain must be > 0");
  if (spec.background_lo < 0.f || spec.background_hi > 1.f || spec.background_lo > spec.background_hi)
    throw ValidationError("scene: background intensity range must satisfy 0 <= lo <= hi <= 1");
  if (spec.background_cell < 1) throw ValidationError("scene: background_cell must be >= 1");
  const int uc = U / 2, vc = V / 2;
  const float angular_extent =
      float(std::max(std::max(uc, U - 1 - uc), std::max(vc, V - 1 - vc)));
  const float shift_limit = float(std::min(H, W)) / 4.f;
  for (std::size_t k = 0; k < spec.layers.size(); ++k) {
    const LayerSpec& L = spec.layers[k];
    if (L.w <= 0.f || L.h <= 0.f)
      throw ValidationError("scene: layer " + std::to_string(k) + " extent must be positive");
    if (L.lo < 0.f || L.hi > 1.f || L.lo > L.hi)
      throw ValidationError("scene: layer " + std::to_string(k) +
                            " intensity range must satisfy 0 <= lo <= hi <= 1");
    if (L.cell < 1) throw ValidationError("scene: layer " + std::to_string(k) + " cell must be >= 1");
    const float shift = std::abs(L.disparity) * angular_extent;
    if (!(shift < shift_limit))
      throw ValidationError("scene: layer " + std::to_string(k) + " violates the shift bound: |" +
                            std::to_string(L.disparity) + "| * " + std::to_string(angular_extent) +
                            " = " + std::to_string(shift) + " must stay below min(H,W)/4 = " +
                            std::to_string(shift_limit));
    for (int t = 0; t < T; ++t) {
      const float cx = L.cx + float(t) * L.vx;
      const float cy = L.cy + float(t) * L.vy;
      if (cx < 0.f || cx >= float(W) || cy < 0.f || cy >= float(H))
        throw ValidationError("scene: layer " + std::to_string(k) + " center leaves the frame at t=" +
                              std::to_string(t));
    }
  }
}

std::pair<LightFieldVideo<float>, GroundTruth> generate_synthetic(const SceneSpec& spec, int T,
                                                                  int U, int V, int H, int W,
                                                                  int C, std::uint64_t seed,
                                                                  double frame_rate_hz) {
  if (C != 1 && C != 3) throw ValidationError("scene: C must be 1 or 3");
  validate_scene(spec, T, U, V, H, W);

  std::vector<PreparedLayer> layers;
  layers.reserve(spec.layers.size());
  for (std::size_t k = 0; k < spec.layers.size(); ++k)
    layers.push_back({&spec.layers[k], make_texture(spec.layers[k], Rng::derive(seed, k))});

  LayerSpec bg;
  bg.texture = spec.background_texture;
  bg.lo = spec.background_lo;
  bg.hi = spec.background_hi;
  bg.cell = spec.background_cell;
  bg.w = float(W);
  bg.h = float(H);
  const ArrXf bg_tex = make_texture(bg, Rng::derive(seed, 0x0badc0de));

  LightFieldVideo<float> lf(T, U, V, H, W, C, frame_rate_hz);
  GroundTruth gt;
  gt.boxes.assign(std::size_t(T), {});
  gt.disparity.assign(std::size_t(T), ArrXf::Zero(H, W));

  const int uc = U / 2, vc = V / 2;
  const float gain = spec.global_gain;

  for (int t = 0; t < T; ++t) {
    gt.boxes[std::size_t(t)].reserve(layers.size());
    for (const auto& pl : layers) {
      const LayerSpec& L = *pl.spec;
      gt.boxes[std::size_t(t)].push_back(
          {L.cx + float(t) * L.vx, L.cy + float(t) * L.vy, L.w, L.h});
    }

    // Render all U*V views of frame t; each (u, v) slot written independently.
    parallel_for(Index(U) * V, [&](Index uv) {
      const int u = int(uv) / V;
      const int v = int(uv) % V;
      const float du = float(u - uc);
      const float dv = float(v - vc);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          float value = 0.f;
          bool covered = false;
          for (const auto& pl : layers) {
            const LayerSpec& L = *pl.spec;
            const float cx = L.cx + float(t) * L.vx + L.disparity * du;
            const float cy = L.cy + float(t) * L.vy + L.disparity * dv;
            const float lx = float(x) - (cx - 0.5f * L.w);
            const float ly = float(y) - (cy - 0.5f * L.h);
            if (lx >= 0.f && lx < L.w && ly >= 0.f && ly < L.h) {
              value = bilinear(pl.tex, ly, lx);
              covered = true;
              break;  // front-most layer wins
            }
          }
          if (!covered) value = bilinear(bg_tex, float(y), float(x));
          value *= gain;
          if (value > 1.f) value = 1.f;
          if (value < 0.f) value = 0.f;
          for (int c = 0; c < C; ++c) lf(t, u, v, y, x, c) = value;
        }
    });

    // Center-view disparity of the front-most covering layer.
    ArrXf& disp = gt.disparity[std::size_t(t)];
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (const auto& pl : layers) {
          const LayerSpec& L = *pl.spec;
          const float lx = float(x) - (L.cx + float(t) * L.vx - 0.5f * L.w);
          const float ly = float(y) - (L.cy + float(t) * L.vy - 0.5f * L.h);
          if (lx >= 0.f && lx < L.w && ly >= 0.f && ly < L.h) {
            disp(y, x) = L.disparity;
            break;
          }
        }
  }
  return {std::move(lf), std::move(gt)};
}

namespace {

TextureKind parse_texture(const std::string& s, const std::string& key) {
  if (s == "constant") return TextureKind::constant;
  if (s == "checker") return TextureKind::checker;
  if (s == "noise") return TextureKind::noise;
  throw ValidationError("scene file: bad texture '" + s + "' for " + key);
}

}  // namespace

SceneFile parse_scene_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("scene file: cannot open '" + path.string() + "'");

  SceneFile sf;
  std::map<int, LayerSpec> layers;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string item;
    while (ls >> item) {
      const auto eq = item.find('=');
      if (eq == std::string::npos)
        throw ValidationError("scene file: expected key=value at line " + std::to_string(lineno));
      const std::string key = item.substr(0, eq);
      const std::string val = item.substr(eq + 1);
      auto as_f = [&] { return std::stof(val); };
      auto as_i = [&] { return std::stoi(val); };
      try {
        if (key == "T") sf.T = as_i();
        else if (key == "U") sf.U = as_i();
        else if (key == "V") sf.V = as_i();
        else if (key == "H") sf.H = as_i();
        else if (key == "W") sf.W = as_i();
        else if (key == "C") sf.C = as_i();
        else if (key == "frame_rate_hz") sf.frame_rate_hz = double(as_f());
        else if (key == "global_gain") sf.spec.global_gain = as_f();
        else if (key == "background_texture") sf.spec.background_texture = parse_texture(val, key);
        else if (key == "background_lo") sf.spec.background_lo = as_f();
        else if (key == "background_hi") sf.spec.background_hi = as_f();
        else if (key == "background_cell") sf.spec.background_cell = as_i();
        else if (key.rfind("layer", 0) == 0) {
          const auto dot = key.find('.');
          if (dot == std::string::npos)
            throw ValidationError("scene file: bad layer key '" + key + "'");
          const int idx = std::stoi(key.substr(5, dot - 5));
          LayerSpec& L = layers[idx];
          const std::string f = key.substr(dot + 1);
          if (f == "texture") L.texture = parse_texture(val, key);
          else if (f == "disparity") L.disparity = as_f();
          else if (f == "vx") L.vx = as_f();
          else if (f == "vy") L.vy = as_f();
          else if (f == "cx") L.cx = as_f();
          else if (f == "cy") L.cy = as_f();
          else if (f == "w") L.w = as_f();
          else if (f == "h") L.h = as_f();
          else if (f == "lo") L.lo = as_f();
          else if (f == "hi") L.hi = as_f();
          else if (f == "cell") L.cell = as_i();
          else throw ValidationError("scene file: unknown layer field '" + f + "' in '" + key + "'");
        } else {
          throw ValidationError("scene file: unknown key '" + key + "'");
        }
      } catch (const std::invalid_argument&) {
        throw ValidationError("scene file: bad value '" + val + "' for key '" + key + "'");
      } catch (const std::out_of_range&) {
        throw ValidationError("scene file: value out of range for key '" + key + "'");
      }
    }
  }

  int expected = 0;
  for (const auto& [idx, layer] : layers) {
    if (idx != expected)
      throw ValidationError("scene file: layer indices must be contiguous from 0; missing layer" +
                            std::to_string(expected));
    sf.spec.layers.push_back(layer);
    ++expected;
  }
  return sf;
}

void save_ground_truth(const GroundTruth& gt, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("ground truth: cannot open '" + path.string() + "' for writing");
  out << "# t layer cx cy w h\n";
  char buf[160];
  for (std::size_t t = 0; t < gt.boxes.size(); ++t)
    for (std::size_t k = 0; k < gt.boxes[t].size(); ++k) {
      const Box& b = gt.boxes[t][k];
      std::snprintf(buf, sizeof(buf), "%zu %zu %.6g %.6g %.6g %.6g\n", t, k, double(b.cx),
                    double(b.cy), double(b.w), double(b.h));
      out << buf;
    }
}

GroundTruth load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("ground truth: cannot open '" + path.string() + "'");
  GroundTruth gt;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::size_t t, k;
    Box b;
    if (!(ls >> t >> k >> b.cx >> b.cy >> b.w >> b.h))
      throw ValidationError("ground truth: malformed line '" + line + "'");
    if (gt.boxes.size() <= t) gt.boxes.resize(t + 1);
    if (gt.boxes[t].size() != k)
      throw ValidationError("ground truth: out-of-order layer index in '" + line + "'");
    gt.boxes[t].push_back(b);
  }
  return gt;
}

}  // namespace lftrack
