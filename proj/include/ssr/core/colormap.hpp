#pragma once

#include <algorithm>
#include <array>

#include "ssr/core/image.hpp"
#include "ssr/core/png_io.hpp"
#include "ssr/core/tensor.hpp"

namespace ssr {

// Fixed viridis-style colormap, linearly interpolated between anchors.
inline std::array<float, 3> colormap_viridis(float v) {
  static constexpr float anchors[11][3] = {
      {0.267f, 0.005f, 0.329f}, {0.283f, 0.141f, 0.458f}, {0.254f, 0.265f, 0.530f},
      {0.207f, 0.372f, 0.553f}, {0.164f, 0.471f, 0.558f}, {0.128f, 0.567f, 0.551f},
      {0.135f, 0.659f, 0.518f}, {0.267f, 0.749f, 0.441f}, {0.478f, 0.821f, 0.318f},
      {0.741f, 0.873f, 0.150f}, {0.993f, 0.906f, 0.144f}};
  v = std::clamp(v, 0.0f, 1.0f);
  float pos = v * 10.0f;
  int lo = std::min(9, static_cast<int>(pos));
  float f = pos - static_cast<float>(lo);
  std::array<float, 3> out;
  for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(c)] = anchors[lo][c] + f * (anchors[lo + 1][c] - anchors[lo][c]);
  return out;
}

// Renders a scalar map (rank-2 HxW or rank-3 1xHxW) as a color PNG;
// values are min-max normalized unless the map is constant.
inline void save_heatmap(const Tensor& map, const std::string& path) {
  require(map.rank() == 2 || (map.rank() == 3 && map.dim(0) == 1), Errc::invalid_argument,
          "save_heatmap: map must be HxW or 1xHxW");
  int h = map.dim(map.rank() - 2), w = map.dim(map.rank() - 1);
  float lo = map.v[0], hi = map.v[0];
  for (float x : map.v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  float span = hi - lo;
  Image img(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float v = map.v[static_cast<std::size_t>(y) * w + x];
      float u = span > 0.0f ? (v - lo) / span : 0.0f;
      auto rgb = colormap_viridis(u);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[static_cast<std::size_t>(c)];
    }
  write_image(img, path);
}

}  // namespace ssr
