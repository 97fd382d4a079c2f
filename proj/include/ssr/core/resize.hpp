#pragma once

#include <algorithm>
#include <cmath>

#include "ssr/core/image.hpp"
#include "ssr/core/tensor.hpp"

namespace ssr {

// Source coordinate for bilinear resampling, half-pixel convention.
inline void bilinear_taps(int out_i, int out_n, int in_n, int& i0, int& i1, float& w1) {
  float scale = static_cast<float>(in_n) / static_cast<float>(out_n);
  float src = (static_cast<float>(out_i) + 0.5f) * scale - 0.5f;
  float fl = std::floor(src);
  i0 = static_cast<int>(fl);
  w1 = src - fl;
  i1 = std::min(i0 + 1, in_n - 1);
  if (i0 < 0) i0 = 0;
  if (i0 > in_n - 1) i0 = in_n - 1;
}

// Bilinear resize of a [C,H,W] tensor to [C,h2,w2].
template <typename T>
inline BasicTensor<T> bilinear_resize(const BasicTensor<T>& x, int h2, int w2) {
  require(x.rank() == 3, Errc::invalid_argument, "bilinear_resize: rank-3 input expected");
  require(h2 >= 1 && w2 >= 1, Errc::invalid_argument, "bilinear_resize: target dims must be >= 1");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  BasicTensor<T> out({c, h2, w2});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h2; ++y) {
      int y0, y1;
      float wy;
      bilinear_taps(y, h2, h, y0, y1, wy);
      for (int xx = 0; xx < w2; ++xx) {
        int x0, x1;
        float wx;
        bilinear_taps(xx, w2, w, x0, x1, wx);
        T v00 = x(ch, y0, x0), v01 = x(ch, y0, x1);
        T v10 = x(ch, y1, x0), v11 = x(ch, y1, x1);
        T top = v00 + static_cast<T>(wx) * (v01 - v00);
        T bot = v10 + static_cast<T>(wx) * (v11 - v10);
        out(ch, y, xx) = top + static_cast<T>(wy) * (bot - top);
      }
    }
  return out;
}

inline Image bilinear_resize_image(const Image& img, int h2, int w2) {
  Image out(bilinear_resize(img.t, h2, w2));
  out.clamp01();
  return out;
}

}  // namespace ssr
