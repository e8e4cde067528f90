#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lftrack/types.hpp"

namespace lftrack {

// Integer raster, row-major (y, x, c). bit_depth 8 stores values in [0,255],
// bit_depth 16 in [0,65535]; both kept in uint16 slots.
struct RawImage {
  int h = 0;
  int w = 0;
  int c = 1;        // 1 (gray) or 3 (rgb)
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> pix;

  std::uint16_t& at(int y, int x, int ch) { return pix[(std::size_t(y) * w + x) * c + ch]; }
  std::uint16_t at(int y, int x, int ch) const { return pix[(std::size_t(y) * w + x) * c + ch]; }
};

void png_write(const std::filesystem::path& path, const RawImage& img);
RawImage png_read(const std::filesystem::path& path);

// PFM float map, 1 or 3 channels. Written with negative scale (little-endian
// samples), scanlines bottom-up per the format. Byte-deterministic.
void pfm_write(const std::filesystem::path& path, const std::vector<ArrXf>& channels);
std::vector<ArrXf> pfm_read(const std::filesystem::path& path);

// Round-half-up quantization to b bits and its inverse.
inline std::uint16_t quantize(float v, int bits) {
  const float maxv = float((1u << bits) - 1);
  float q = std::floor(v * maxv + 0.5f);
  if (q < 0.f) q = 0.f;
  if (q > maxv) q = maxv;
  return std::uint16_t(q);
}
inline float dequantize(std::uint16_t q, int bits) {
  return float(q) / float((1u << bits) - 1);
}

}  // namespace lftrack
