#include "lftrack/image_io.hpp"

#include <png.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <memory>

namespace lftrack {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void png_write(const std::filesystem::path& path, const RawImage& img) {
  if (img.h < 1 || img.w < 1 || (img.c != 1 && img.c != 3) ||
      (img.bit_depth != 8 && img.bit_depth != 16))
    throw ValidationError("png_write: bad image geometry");
  if (img.pix.size() != std::size_t(img.h) * img.w * img.c)
    throw ValidationError("png_write: pixel buffer size mismatch");

  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw ValidationError("png_write: cannot open '" + path.string() + "' for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw NumericError("png_write: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw NumericError("png_write: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ValidationError("png_write: libpng error writing '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  const int color = img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, png_uint_32(img.w), png_uint_32(img.h), img.bit_depth, color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (img.bit_depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);

  const std::size_t row_values = std::size_t(img.w) * img.c;
  if (img.bit_depth == 8) {
    std::vector<std::uint8_t> row(row_values);
    for (int y = 0; y < img.h; ++y) {
      for (std::size_t i = 0; i < row_values; ++i)
        row[i] = std::uint8_t(img.pix[std::size_t(y) * row_values + i]);
      png_write_row(png, row.data());
    }
  } else {
    std::vector<std::uint16_t> row(row_values);
    for (int y = 0; y < img.h; ++y) {
      std::memcpy(row.data(), img.pix.data() + std::size_t(y) * row_values,
                  row_values * sizeof(std::uint16_t));
      png_write_row(png, reinterpret_cast<png_bytep>(row.data()));
    }
  }
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

RawImage png_read(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw ValidationError("png_read: cannot open '" + path.string() + "'");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw NumericError("png_read: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw NumericError("png_read: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("png_read: libpng error reading '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);

  // Normalize exotic layouts to 8/16-bit gray or RGB.
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  png_read_update_info(png, info);

  const int out_depth = png_get_bit_depth(png, info);
  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3)
    throw ValidationError("png_read: unsupported channel count in '" + path.string() + "'");

  RawImage img;
  img.h = int(h);
  img.w = int(w);
  img.c = channels;
  img.bit_depth = out_depth;
  img.pix.resize(std::size_t(h) * w * channels);

  const std::size_t row_values = std::size_t(w) * channels;
  if (out_depth == 8) {
    std::vector<std::uint8_t> row(row_values);
    for (png_uint_32 y = 0; y < h; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (std::size_t i = 0; i < row_values; ++i)
        img.pix[std::size_t(y) * row_values + i] = row[i];
    }
  } else {
    for (png_uint_32 y = 0; y < h; ++y)
      png_read_row(png, reinterpret_cast<png_bytep>(img.pix.data() + std::size_t(y) * row_values),
                   nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void pfm_write(const std::filesystem::path& path, const std::vector<ArrXf>& channels) {
  if (channels.size() != 1 && channels.size() != 3)
    throw ValidationError("pfm_write: need 1 or 3 channels");
  const Index h = channels[0].rows();
  const Index w = channels[0].cols();
  for (const auto& ch : channels)
    if (ch.rows() != h || ch.cols() != w) throw ValidationError("pfm_write: channel shape mismatch");
  static_assert(std::endian::native == std::endian::little, "negative-scale PFM assumes LE host");

  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw ValidationError("pfm_write: cannot open '" + path.string() + "' for writing");
  const std::string header = std::string(channels.size() == 1 ? "Pf" : "PF") + "\n" +
                             std::to_string(w) + " " + std::to_string(h) + "\n-1\n";
  std::fwrite(header.data(), 1, header.size(), fp.get());

  // Bottom-up scanlines, channels interleaved for PF.
  const int c = int(channels.size());
  std::vector<float> row(std::size_t(w) * c);
  for (Index y = h - 1; y >= 0; --y) {
    for (Index x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) row[std::size_t(x) * c + k] = channels[std::size_t(k)](y, x);
    std::fwrite(row.data(), sizeof(float), row.size(), fp.get());
  }
}

std::vector<ArrXf> pfm_read(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw ValidationError("pfm_read: cannot open '" + path.string() + "'");

  auto read_token = [&]() -> std::string {
    std::string tok;
    int ch;
    while ((ch = std::fgetc(fp.get())) != EOF && std::isspace(ch)) {
    }
    if (ch == EOF) throw ValidationError("pfm_read: truncated header in '" + path.string() + "'");
    do {
      tok.push_back(char(ch));
    } while ((ch = std::fgetc(fp.get())) != EOF && !std::isspace(ch));
    return tok;
  };

  const std::string magic = read_token();
  int c = 0;
  if (magic == "Pf")
    c = 1;
  else if (magic == "PF")
    c = 3;
  else
    throw ValidationError("pfm_read: bad magic '" + magic + "' in '" + path.string() + "'");
  const long w = std::stol(read_token());
  const long h = std::stol(read_token());
  const double scale = std::stod(read_token());
  if (w < 1 || h < 1) throw ValidationError("pfm_read: bad dimensions");
  if (scale >= 0) throw ValidationError("pfm_read: big-endian PFM not supported");

  std::vector<ArrXf> channels(std::size_t(c), ArrXf(h, w));
  std::vector<float> row(std::size_t(w) * c);
  for (long y = h - 1; y >= 0; --y) {
    if (std::fread(row.data(), sizeof(float), row.size(), fp.get()) != row.size())
      throw ValidationError("pfm_read: truncated data in '" + path.string() + "'");
    for (long x = 0; x < w; ++x)
      for (int k = 0; k < c; ++k) channels[std::size_t(k)](y, x) = row[std::size_t(x) * c + k];
  }
  return channels;
}

}  // namespace lftrack
