#pragma once

#include <cmath>
#include <optional>

#include "ssr/core/image.hpp"
#include "ssr/core/jpeg_io.hpp"
#include "ssr/core/parallel.hpp"
#include "ssr/core/rng.hpp"
#include "ssr/kernelfield/field.hpp"

namespace ssr {

// Degradation settings: blur -> downsample by s -> additive Gaussian noise
// -> optional JPEG round trip.
struct DegradationSpec {
  int scale = 4;                      // in {1,2,3,4}
  float noise_sigma = 0.0f;           // std in [0,1] units
  std::optional<int> jpeg_quality;    // [1,100] when present
  enum class KernelSource { field, uniform } kernel_source = KernelSource::field;

  void validate() const {
    require(scale >= 1 && scale <= 4, Errc::invalid_argument, "degradation scale must be in {1,2,3,4}");
    require(noise_sigma >= 0.0f, Errc::invalid_argument, "noise_sigma must be >= 0");
    if (jpeg_quality)
      require(*jpeg_quality >= 1 && *jpeg_quality <= 100, Errc::invalid_argument,
              "jpeg_quality must be in [1,100]");
  }
};

// Spatially variant convolution: out(c,y,x) = sum_{u,v} field[(u,v),y,x] *
// img(c, y+v-r, x+u-r), reflect-101 borders. Accumulation order over taps is
// fixed (row-major), so results are independent of row parallelism.
inline Image sv_convolve(const Image& img, const KernelField& field) {
  require(field.height() == img.height() && field.width() == img.width(), Errc::shape_mismatch,
          "sv_convolve: field dims must equal image dims");
  const int c = img.channels(), h = img.height(), w = img.width();
  const int side = field.side, r = side / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  Image out(c, h, w);
  parallel_for(h, [&](int y) {
    std::vector<int> ys(static_cast<std::size_t>(side));
    for (int v = 0; v < side; ++v) ys[static_cast<std::size_t>(v)] = mirror_index(y + v - r, h);
    for (int x = 0; x < w; ++x) {
      const float* kbase = field.t.data() + static_cast<std::size_t>(y) * w + x;
      for (int ch = 0; ch < c; ++ch) {
        const float* src = img.t.data() + static_cast<std::size_t>(ch) * plane;
        float acc = 0.0f;
        for (int v = 0; v < side; ++v) {
          const float* srow = src + static_cast<std::size_t>(ys[static_cast<std::size_t>(v)]) * w;
          const float* krow = kbase + static_cast<std::size_t>(v) * side * plane;
          for (int u = 0; u < side; ++u) {
            int sx = mirror_index(x + u - r, w);
            acc += krow[static_cast<std::size_t>(u) * plane] * srow[sx];
          }
        }
        out.at(ch, y, x) = acc;
      }
    }
  }, 4);
  return out;
}

// Keeps samples at indices congruent to 0 mod s.
inline Image decimate(const Image& img, int s) {
  require(img.height() % s == 0 && img.width() % s == 0, Errc::invalid_argument,
          "decimate: dims must be divisible by the scale");
  Image out(img.channels(), img.height() / s, img.width() / s);
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) out.at(c, y, x) = img.at(c, y * s, x * s);
  return out;
}

// Adds N(0, sigma^2) per sample in (c,y,x) row-major draw order, then clamps.
inline void add_gaussian_noise(Image& img, float sigma, RngStream& rng) {
  if (sigma <= 0.0f) return;
  for (float& v : img.t.v) v = std::clamp(v + sigma * static_cast<float>(rng.normal()), 0.0f, 1.0f);
}

// Full degradation pipeline: blur, decimate, noise, clamp, optional JPEG.
inline Image degrade(const Image& hr, const KernelField& field, const DegradationSpec& spec,
                     RngStream& rng) {
  spec.validate();
  require(hr.height() % spec.scale == 0 && hr.width() % spec.scale == 0, Errc::invalid_argument,
          "degrade: HR dims must be divisible by the scale");
  Image blurred = sv_convolve(hr, field);
  Image lr = decimate(blurred, spec.scale);
  add_gaussian_noise(lr, spec.noise_sigma, rng);
  lr.clamp01();
  if (spec.jpeg_quality) lr = jpeg_roundtrip(lr, *spec.jpeg_quality);
  return lr;
}

}  // namespace ssr
