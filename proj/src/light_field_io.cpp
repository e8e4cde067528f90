#include "lftrack/light_field_io.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "lftrack/image_io.hpp"

namespace lftrack {

namespace {

using nlohmann::json;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
  out.push_back(char((v >> 16) & 0xff));
  out.push_back(char((v >> 24) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

void save_packed(const LightFieldVideo<float>& lf, const std::filesystem::path& path) {
  std::string header = "LFT1";
  put_u32(header, std::uint32_t(lf.frames()));
  put_u32(header, std::uint32_t(lf.views_u()));
  put_u32(header, std::uint32_t(lf.views_v()));
  put_u32(header, std::uint32_t(lf.height()));
  put_u32(header, std::uint32_t(lf.width()));
  put_u32(header, std::uint32_t(lf.channels()));
  put_u32(header, 0);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("save_lightfield: cannot open '" + path.string() + "' for writing");
  out.write(header.data(), std::streamsize(header.size()));
  static_assert(sizeof(float) == 4);
  out.write(reinterpret_cast<const char*>(lf.samples().data()),
            std::streamsize(lf.samples().size() * sizeof(float)));
  if (!out) throw ValidationError("save_lightfield: write failed for '" + path.string() + "'");
}

LightFieldVideo<float> load_packed(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("load_lightfield: cannot open '" + path.string() + "'");
  unsigned char header[32];
  in.read(reinterpret_cast<char*>(header), 32);
  if (in.gcount() != 32) throw ValidationError("load_lightfield: truncated header in '" + path.string() + "'");
  if (std::memcmp(header, "LFT1", 4) != 0)
    throw ValidationError("load_lightfield: bad magic in '" + path.string() + "' (expected LFT1)");
  const std::uint32_t T = get_u32(header + 4), U = get_u32(header + 8), V = get_u32(header + 12),
                      H = get_u32(header + 16), W = get_u32(header + 20), C = get_u32(header + 24),
                      reserved = get_u32(header + 28);
  if (reserved != 0) throw ValidationError("load_lightfield: reserved header field must be 0");
  if (!T || !U || !V || !H || !W || !C)
    throw ValidationError("load_lightfield: zero dimension in packed header");

  const std::size_t count = std::size_t(T) * U * V * H * W * C;
  std::vector<float> samples(count);
  in.read(reinterpret_cast<char*>(samples.data()), std::streamsize(count * sizeof(float)));
  if (std::size_t(in.gcount()) != count * sizeof(float))
    throw ValidationError("load_lightfield: truncated sample data in '" + path.string() + "'");
  char extra;
  if (in.read(&extra, 1))
    throw ValidationError("load_lightfield: trailing bytes after sample data in '" + path.string() + "'");
  return LightFieldVideo<float>::from_samples(int(T), int(U), int(V), int(H), int(W), int(C),
                                              std::move(samples));
}

void save_manifest(const LightFieldVideo<float>& lf, const std::filesystem::path& dir,
                   int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16)
    throw ValidationError("save_lightfield: bit_depth must be 8 or 16");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ValidationError("save_lightfield: cannot create directory '" + dir.string() + "'");

  const std::string pattern = "t{t:03}_u{u:02}_v{v:02}.png";
  json m;
  m["format_version"] = "1";
  m["T"] = lf.frames();
  m["U"] = lf.views_u();
  m["V"] = lf.views_v();
  m["H"] = lf.height();
  m["W"] = lf.width();
  m["C"] = lf.channels();
  m["bit_depth"] = bit_depth;
  m["frame_rate_hz"] = lf.frame_rate_hz();
  m["view_pattern"] = pattern;
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw ValidationError("save_lightfield: cannot write manifest.json");
    out << m.dump(2) << "\n";
  }

  RawImage img;
  img.h = lf.height();
  img.w = lf.width();
  img.c = lf.channels();
  img.bit_depth = bit_depth;
  img.pix.resize(std::size_t(img.h) * img.w * img.c);
  for (int t = 0; t < lf.frames(); ++t)
    for (int u = 0; u < lf.views_u(); ++u)
      for (int v = 0; v < lf.views_v(); ++v) {
        for (int y = 0; y < img.h; ++y)
          for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < img.c; ++c) img.at(y, x, c) = quantize(lf(t, u, v, y, x, c), bit_depth);
        png_write(dir / expand_view_pattern(pattern, t, u, v), img);
      }
}

int require_int(const json& m, const char* key) {
  if (!m.contains(key)) throw ValidationError(std::string("manifest missing field '") + key + "'");
  if (!m[key].is_number_integer())
    throw ValidationError(std::string("manifest field '") + key + "' must be an integer");
  return m[key].get<int>();
}

LightFieldVideo<float> load_manifest(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw ValidationError("load_lightfield: missing '" + manifest_path.string() + "'");
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw ValidationError("load_lightfield: malformed manifest.json: " + std::string(e.what()));
  }

  if (!m.contains("format_version") || m["format_version"] != "1")
    throw ValidationError("load_lightfield: manifest format_version must be \"1\"");
  const int T = require_int(m, "T"), U = require_int(m, "U"), V = require_int(m, "V"),
            H = require_int(m, "H"), W = require_int(m, "W"), C = require_int(m, "C");
  const int bit_depth = require_int(m, "bit_depth");
  if (bit_depth != 8 && bit_depth != 16)
    throw ValidationError("load_lightfield: manifest bit_depth must be 8 or 16");
  if (!m.contains("frame_rate_hz") || !m["frame_rate_hz"].is_number())
    throw ValidationError("manifest missing field 'frame_rate_hz'");
  if (!m.contains("view_pattern") || !m["view_pattern"].is_string())
    throw ValidationError("manifest missing field 'view_pattern'");
  const double fps = m["frame_rate_hz"].get<double>();
  const std::string pattern = m["view_pattern"].get<std::string>();

  LightFieldVideo<float> lf(T, U, V, H, W, C, fps);
  for (int t = 0; t < T; ++t)
    for (int u = 0; u < U; ++u)
      for (int v = 0; v < V; ++v) {
        const auto view_path = dir / expand_view_pattern(pattern, t, u, v);
        if (!std::filesystem::exists(view_path))
          throw ValidationError("load_lightfield: missing view file '" + view_path.string() + "'");
        const RawImage img = png_read(view_path);
        if (img.h != H || img.w != W || img.c != C || img.bit_depth != bit_depth)
          throw ValidationError("load_lightfield: view '" + view_path.string() +
                                "' does not match manifest dimensions");
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c) lf(t, u, v, y, x, c) = dequantize(img.at(y, x, c), bit_depth);
      }
  return lf;
}

}  // namespace

std::string expand_view_pattern(const std::string& pattern, int t, int u, int v) {
  std::string out;
  for (std::size_t i = 0; i < pattern.size();) {
    if (pattern[i] != '{') {
      out.push_back(pattern[i++]);
      continue;
    }
    const auto close = pattern.find('}', i);
    if (close == std::string::npos)
      throw ValidationError("view_pattern: unterminated '{' in '" + pattern + "'");
    const std::string field = pattern.substr(i + 1, close - i - 1);  // e.g. "t:03"
    const auto colon = field.find(':');
    const std::string name = colon == std::string::npos ? field : field.substr(0, colon);
    int width = 0;
    if (colon != std::string::npos) {
      const std::string spec = field.substr(colon + 1);
      if (spec.empty() || spec[0] != '0')
        throw ValidationError("view_pattern: unsupported format spec '" + field + "'");
      width = std::stoi(spec.substr(1));
    }
    int value;
    if (name == "t")
      value = t;
    else if (name == "u")
      value = u;
    else if (name == "v")
      value = v;
    else
      throw ValidationError("view_pattern: unknown field '" + name + "'");
    std::string digits = std::to_string(value);
    while (int(digits.size()) < width) digits.insert(digits.begin(), '0');
    out += digits;
    i = close + 1;
  }
  return out;
}

void save_lightfield(const LightFieldVideo<float>& lf, const std::filesystem::path& path,
                     LfFormat format, int bit_depth) {
  lf.validate_values();
  if (format == LfFormat::packed)
    save_packed(lf, path);
  else
    save_manifest(lf, path, bit_depth);
}

LightFieldVideo<float> load_lightfield(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return load_manifest(path);
  if (path.filename() == "manifest.json") return load_manifest(path.parent_path());
  return load_packed(path);
}

}  // namespace lftrack
