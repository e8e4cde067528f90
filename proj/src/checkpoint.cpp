#include "lftrack/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace lftrack {

namespace {

void write_u32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                         char((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::uint32_t read_u32(std::ifstream& in, const char* what) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw ValidationError(std::string("checkpoint: truncated ") + what);
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<TensorEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("checkpoint: cannot open '" + path.string() + "' for writing");
  out.write("ATIN", 4);
  write_u32(out, kCheckpointVersion);
  write_u32(out, std::uint32_t(entries.size()));
  std::vector<float> row;
  for (const auto& e : entries) {
    write_u32(out, std::uint32_t(e.name.size()));
    out.write(e.name.data(), std::streamsize(e.name.size()));
    write_u32(out, 2);
    write_u32(out, std::uint32_t(e.value.rows()));
    write_u32(out, std::uint32_t(e.value.cols()));
    row.resize(std::size_t(e.value.cols()));
    for (Index r = 0; r < e.value.rows(); ++r) {
      for (Index c = 0; c < e.value.cols(); ++c) row[std::size_t(c)] = e.value(r, c);
      out.write(reinterpret_cast<const char*>(row.data()),
                std::streamsize(row.size() * sizeof(float)));
    }
  }
  if (!out) throw ValidationError("checkpoint: write failed for '" + path.string() + "'");
}

std::vector<TensorEntry> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("checkpoint: cannot open '" + path.string() + "'");
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, "ATIN", 4) != 0)
    throw ValidationError("checkpoint: bad magic in '" + path.string() + "'");
  const std::uint32_t version = read_u32(in, "version");
  if (version != kCheckpointVersion)
    throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = read_u32(in, "entry count");

  std::vector<TensorEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(in, "name length");
    std::string name(name_len, '\0');
    in.read(name.data(), std::streamsize(name_len));
    if (std::size_t(in.gcount()) != name_len) throw ValidationError("checkpoint: truncated name");
    const std::uint32_t rank = read_u32(in, "rank");
    if (rank < 1 || rank > 2)
      throw ValidationError("checkpoint: unsupported rank " + std::to_string(rank) + " for '" +
                            name + "'");
    std::uint32_t rows = 1, cols = 1;
    if (rank == 1) {
      cols = read_u32(in, "dims");
    } else {
      rows = read_u32(in, "dims");
      cols = read_u32(in, "dims");
    }
    MatXf value(rows, cols);
    std::vector<float> row(cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      in.read(reinterpret_cast<char*>(row.data()), std::streamsize(cols * sizeof(float)));
      if (std::size_t(in.gcount()) != cols * sizeof(float))
        throw ValidationError("checkpoint: truncated data for '" + name + "'");
      for (std::uint32_t c = 0; c < cols; ++c) value(r, c) = row[c];
    }
    entries.push_back({std::move(name), std::move(value)});
  }
  char extra;
  if (in.read(&extra, 1)) throw ValidationError("checkpoint: trailing bytes in '" + path.string() + "'");
  return entries;
}

}  // namespace lftrack
