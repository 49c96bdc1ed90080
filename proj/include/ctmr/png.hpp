#pragma once

// 8-bit PNG output with fixed encoder settings (no interlace, no filtering,
// zlib level 9, no time or text chunks) so equal pixels give equal bytes.

#include <png.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "error.hpp"

namespace ctmr {

struct RasterImage {
  std::size_t width = 0, height = 0, channels = 1; // 1 = gray, 3 = RGB
  std::vector<std::uint8_t> data;                  // row-major, interleaved

  RasterImage() = default;
  RasterImage(std::size_t w, std::size_t h, std::size_t ch, std::uint8_t fill = 0)
      : width(w), height(h), channels(ch), data(w * h * ch, fill) {}

  std::uint8_t *px(std::size_t x, std::size_t y) { return data.data() + (y * width + x) * channels; }
  const std::uint8_t *px(std::size_t x, std::size_t y) const { return data.data() + (y * width + x) * channels; }
};

namespace detail {
struct PngFile {
  std::FILE *f = nullptr;
  ~PngFile() {
    if (f) std::fclose(f);
  }
};
} // namespace detail

inline void write_png(const RasterImage &img, const std::filesystem::path &path) {
  require(img.channels == 1 || img.channels == 3, "png: 1 or 3 channels supported");
  require(img.width > 0 && img.height > 0 && img.data.size() == img.width * img.height * img.channels,
          "png: inconsistent raster");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  detail::PngFile file;
  file.f = std::fopen(path.string().c_str(), "wb");
  if (!file.f) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png: cannot create writer");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png: cannot create info");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: encoding failed for " + path.string());
  }
  png_init_io(png, file.f);
  png_set_compression_level(png, 9);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.data.data() + y * img.width * img.channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.f) != 0) throw IoError("write failed: " + path.string());
}

/// Width, height and channel count of a PNG file.
inline std::array<std::size_t, 3> read_png_header(const std::filesystem::path &path) {
  detail::PngFile file;
  file.f = std::fopen(path.string().c_str(), "rb");
  if (!file.f) throw IoError("cannot read " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw IoError("png: cannot create reader");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png: cannot decode " + path.string());
  }
  png_init_io(png, file.f);
  png_read_info(png, info);
  const std::array<std::size_t, 3> out{png_get_image_width(png, info), png_get_image_height(png, info),
                                       png_get_channels(png, info)};
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

} // namespace ctmr
