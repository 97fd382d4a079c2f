#pragma once

#include <jpeglib.h>

#include <csetjmp>
#include <cstdio>
#include <vector>

#include "ssr/core/error.hpp"
#include "ssr/core/image.hpp"
#include "ssr/core/png_io.hpp"

namespace ssr {

namespace detail {
struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}
}  // namespace detail

// Baseline JPEG compress/decompress round trip in memory, applied to the
// 8-bit quantized image at the given quality. Models compression artifacts
// in the degradation pipeline.
inline Image jpeg_roundtrip(const Image& img, int quality) {
  require(quality >= 1 && quality <= 100, Errc::invalid_argument,
          "jpeg_roundtrip: quality must be in [1,100]");
  const int h = img.height(), w = img.width(), c = img.channels();

  std::vector<unsigned char> raw(static_cast<std::size_t>(h) * w * c);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        raw[(static_cast<std::size_t>(y) * w + x) * c + ch] =
            static_cast<unsigned char>(quantize8(img.at(ch, y, x)));

  // Compress to memory.
  unsigned char* buf = nullptr;
  unsigned long buf_size = 0;
  {
    jpeg_compress_struct cinfo;
    detail::JpegErrorMgr err;
    cinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = detail::jpeg_error_exit;
    if (setjmp(err.jump)) {
      jpeg_destroy_compress(&cinfo);
      if (buf) std::free(buf);
      fail(Errc::numeric_error, "jpeg_roundtrip: compression failed");
    }
    jpeg_create_compress(&cinfo);
    jpeg_mem_dest(&cinfo, &buf, &buf_size);
    cinfo.image_width = static_cast<JDIMENSION>(w);
    cinfo.image_height = static_cast<JDIMENSION>(h);
    cinfo.input_components = c;
    cinfo.in_color_space = (c == 1) ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, quality, TRUE);
    jpeg_start_compress(&cinfo, TRUE);
    while (cinfo.next_scanline < cinfo.image_height) {
      JSAMPROW row = raw.data() + static_cast<std::size_t>(cinfo.next_scanline) * w * c;
      jpeg_write_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_compress(&cinfo);
    jpeg_destroy_compress(&cinfo);
  }

  // Decompress back.
  Image out(c, h, w);
  {
    jpeg_decompress_struct dinfo;
    detail::JpegErrorMgr err;
    dinfo.err = jpeg_std_error(&err.pub);
    err.pub.error_exit = detail::jpeg_error_exit;
    if (setjmp(err.jump)) {
      jpeg_destroy_decompress(&dinfo);
      std::free(buf);
      fail(Errc::numeric_error, "jpeg_roundtrip: decompression failed");
    }
    jpeg_create_decompress(&dinfo);
    jpeg_mem_src(&dinfo, buf, buf_size);
    jpeg_read_header(&dinfo, TRUE);
    dinfo.out_color_space = (c == 1) ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&dinfo);
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * c);
    while (dinfo.output_scanline < dinfo.output_height) {
      JSAMPROW rp = row.data();
      int y = static_cast<int>(dinfo.output_scanline);
      jpeg_read_scanlines(&dinfo, &rp, 1);
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch)
          out.at(ch, y, x) = static_cast<float>(row[static_cast<std::size_t>(x) * c + ch]) / 255.0f;
    }
    jpeg_finish_decompress(&dinfo);
    jpeg_destroy_decompress(&dinfo);
  }
  std::free(buf);
  return out;
}

}  // namespace ssr
