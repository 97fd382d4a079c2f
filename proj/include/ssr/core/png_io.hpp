#pragma once

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <vector>

#include "ssr/core/error.hpp"
#include "ssr/core/image.hpp"

namespace ssr {

// 8-bit code for a [0,1] value; round half up.
inline int quantize8(float v) {
  float x = 255.0f * std::clamp(v, 0.0f, 1.0f);
  int q = static_cast<int>(std::floor(x + 0.5f));
  return std::clamp(q, 0, 255);
}

// Quantize to 8 bits and map back; what a write/read round trip yields.
inline Image quantize_roundtrip(const Image& img) {
  Image out(img.channels(), img.height(), img.width());
  for (std::size_t i = 0; i < img.t.v.size(); ++i)
    out.t.v[i] = static_cast<float>(quantize8(img.t.v[i])) / 255.0f;
  return out;
}

namespace detail {
struct PngFileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using PngFile = std::unique_ptr<std::FILE, PngFileCloser>;
}  // namespace detail

// Reads an 8- or 16-bit PNG; gray maps to 1 channel, color to 3 (palette is
// expanded, alpha stripped). Values are scaled to [0,1].
inline Image read_image(const std::string& path) {
  require(std::filesystem::exists(path), Errc::io_missing_file, "read_image: no such file " + path);
  detail::PngFile fp(std::fopen(path.c_str(), "rb"));
  require(fp != nullptr, Errc::io_missing_file, "read_image: cannot open " + path);

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    fail(Errc::io_unsupported_format, "read_image: not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, Errc::io_unsupported_format, "read_image: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(Errc::io_unsupported_format, "read_image: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(Errc::io_unsupported_format, "read_image: corrupt PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  int color_type = png_get_color_type(png, info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // little-endian 16-bit samples
  png_read_update_info(png, info);

  color_type = png_get_color_type(png, info);
  bit_depth = png_get_bit_depth(png, info);
  int channels = (color_type == PNG_COLOR_TYPE_GRAY) ? 1 : 3;
  if (color_type != PNG_COLOR_TYPE_GRAY && color_type != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(Errc::io_unsupported_format, "read_image: unsupported PNG layout in " + path);
  }

  std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> raster(rowbytes * h);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = raster.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(channels, static_cast<int>(h), static_cast<int>(w));
  const float denom = (bit_depth == 16) ? 65535.0f : 255.0f;
  for (png_uint_32 y = 0; y < h; ++y) {
    const unsigned char* row = raster.data() + y * rowbytes;
    for (png_uint_32 x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        std::size_t i = (x * static_cast<std::size_t>(channels) + c);
        float v;
        if (bit_depth == 16) {
          v = static_cast<float>(row[2 * i] | (row[2 * i + 1] << 8)) / denom;
        } else {
          v = static_cast<float>(row[i]) / denom;
        }
        img.at(c, static_cast<int>(y), static_cast<int>(x)) = v;
      }
    }
  }
  return img;
}

// Writes an 8-bit PNG (gray or RGB) with round-half-up quantization.
inline void write_image(const Image& img, const std::string& path) {
  detail::PngFile fp(std::fopen(path.c_str(), "wb"));
  require(fp != nullptr, Errc::io_unwritable, "write_image: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, Errc::io_unwritable, "write_image: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(Errc::io_unwritable, "write_image: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(Errc::io_unwritable, "write_image: write failed for " + path);
  }
  png_init_io(png, fp.get());

  int h = img.height(), w = img.width(), c = img.channels();
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<unsigned char> row(static_cast<std::size_t>(w) * c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        row[static_cast<std::size_t>(x) * c + ch] =
            static_cast<unsigned char>(quantize8(img.at(ch, y, x)));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace ssr
