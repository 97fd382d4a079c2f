#pragma once

#include <algorithm>
#include <cmath>

#include "ssr/core/tensor.hpp"

namespace ssr {

// C x H x W image, f32 in [0, 1], row-major. Channel count is 1 or 3.
struct Image {
  Tensor t;  // shape [C, H, W]

  Image() = default;
  Image(int channels, int height, int width) : t({channels, height, width}) {
    require(channels == 1 || channels == 3, Errc::invalid_argument, "image channels must be 1 or 3");
    require(height >= 1 && width >= 1, Errc::invalid_argument, "image dims must be >= 1");
  }
  explicit Image(Tensor tensor) : t(std::move(tensor)) {
    require(t.rank() == 3, Errc::invalid_argument, "image tensor must be rank 3");
    require(t.dim(0) == 1 || t.dim(0) == 3, Errc::invalid_argument, "image channels must be 1 or 3");
  }

  int channels() const { return t.dim(0); }
  int height() const { return t.dim(1); }
  int width() const { return t.dim(2); }

  float& at(int c, int y, int x) { return t(c, y, x); }
  float at(int c, int y, int x) const { return t(c, y, x); }

  void clamp01() {
    for (float& x : t.v) x = std::clamp(x, 0.0f, 1.0f);
  }

  bool finite() const {
    for (float x : t.v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

inline Image clamp01(Image img) {
  img.clamp01();
  return img;
}

// 1 x H x W inverse-depth map in [0, 1]; larger means nearer.
struct DepthMap {
  Tensor t;  // shape [1, H, W]

  DepthMap() = default;
  DepthMap(int height, int width) : t({1, height, width}) {}
  explicit DepthMap(Tensor tensor) : t(std::move(tensor)) {
    require(t.rank() == 3 && t.dim(0) == 1, Errc::invalid_argument, "depth map must be 1xHxW");
  }

  int height() const { return t.dim(1); }
  int width() const { return t.dim(2); }

  float& at(int y, int x) { return t(0, y, x); }
  float at(int y, int x) const { return t(0, y, x); }

  void clamp01() {
    for (float& x : t.v) x = std::clamp(x, 0.0f, 1.0f);
  }
};

// Reflect-101 index mirroring: ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
inline int mirror_index(int i, int n) {
  if (n == 1) return 0;
  int period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

}  // namespace ssr
