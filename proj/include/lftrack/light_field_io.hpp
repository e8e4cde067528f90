#pragma once

#include <filesystem>

#include "lftrack/light_field.hpp"

namespace lftrack {

enum class LfFormat { packed, manifest };

// packed: single `.lft` file — magic "LFT1", seven little-endian u32
// (T,U,V,H,W,C, reserved=0), then float32 samples in canonical order.
// Bit-exact round trip.
//
// manifest: a directory with manifest.json plus one PNG per (t,u,v) view,
// quantized to bit_depth (8 or 16) with round-half-up.
void save_lightfield(const LightFieldVideo<float>& lf, const std::filesystem::path& path,
                     LfFormat format, int bit_depth = 8);

// Accepts either layout: a directory (or a manifest.json path) loads the
// manifest form; anything else is parsed as packed.
LightFieldVideo<float> load_lightfield(const std::filesystem::path& path);

// Expands "t{t:03}_u{u:02}_v{v:02}.png"-style patterns.
std::string expand_view_pattern(const std::string& pattern, int t, int u, int v);

}  // namespace lftrack
