#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lftrack/types.hpp"

namespace lftrack {

// Named-tensor checkpoint. Binary layout, all integers little-endian u32:
// magic "ATIN", version, entry count, then per entry: name length, name
// bytes, rank, dims..., float32 data in row-major order. Bit-deterministic.
struct TensorEntry {
  std::string name;
  MatXf value;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const std::vector<TensorEntry>& entries);
std::vector<TensorEntry> load_checkpoint(const std::filesystem::path& path);

}  // namespace lftrack
