#pragma once

// Test-only convolution oracles, independent of the library implementation.

#include <vector>

#include "ssr/core/image.hpp"
#include "ssr/core/rng.hpp"
#include "ssr/kernelfield/degrade.hpp"

namespace ssr::test {

// Dense direct 2-D convolution with one kernel everywhere, reflect-101
// borders, f64 accumulation: the oracle for uniform-field sv_convolve.
inline Image dense_convolve(const Image& img, const std::vector<float>& kernel, int side) {
  const int c = img.channels(), h = img.height(), w = img.width(), r = side / 2;
  Image out(c, h, w);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int v = 0; v < side; ++v)
          for (int u = 0; u < side; ++u) {
            int sy = mirror_index(y + v - r, h);
            int sx = mirror_index(x + u - r, w);
            acc += static_cast<double>(kernel[static_cast<std::size_t>(v) * side + u]) *
                   img.at(ch, sy, sx);
          }
        out.at(ch, y, x) = static_cast<float>(acc);
      }
  return out;
}

// Per-pixel convolution in f32 with the library's documented tap order
// (row-major over the kernel window), used for bit-exact pipeline checks.
inline Image pixelwise_convolve_f32(const Image& img, const KernelField& field) {
  const int c = img.channels(), h = img.height(), w = img.width();
  const int side = field.side, r = side / 2;
  Image out(c, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        float acc = 0.0f;
        for (int v = 0; v < side; ++v)
          for (int u = 0; u < side; ++u) {
            int sy = mirror_index(y + v - r, h);
            int sx = mirror_index(x + u - r, w);
            acc += field.at(v * side + u, y, x) * img.at(ch, sy, sx);
          }
        out.at(ch, y, x) = acc;
      }
  return out;
}

// Compose-by-hand degradation: pixelwise convolve, stride decimation,
// seeded noise in the library's draw order, clamp, optional JPEG.
inline Image compose_degrade(const Image& hr, const KernelField& field, const DegradationSpec& spec,
                             RngStream rng) {
  Image blurred = pixelwise_convolve_f32(hr, field);
  Image lr(blurred.channels(), blurred.height() / spec.scale, blurred.width() / spec.scale);
  for (int c = 0; c < lr.channels(); ++c)
    for (int y = 0; y < lr.height(); ++y)
      for (int x = 0; x < lr.width(); ++x) lr.at(c, y, x) = blurred.at(c, y * spec.scale, x * spec.scale);
  if (spec.noise_sigma > 0.0f)
    for (float& v : lr.t.v)
      v = std::clamp(v + spec.noise_sigma * static_cast<float>(rng.normal()), 0.0f, 1.0f);
  lr.clamp01();
  if (spec.jpeg_quality) lr = jpeg_roundtrip(lr, *spec.jpeg_quality);
  return lr;
}

}  // namespace ssr::test
