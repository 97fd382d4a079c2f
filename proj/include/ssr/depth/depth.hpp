#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ssr/core/error.hpp"
#include "ssr/core/image.hpp"
#include "ssr/core/png_io.hpp"
#include "ssr/core/resize.hpp"
#include "ssr/core/rng.hpp"
#include "ssr/core/tensor_io.hpp"

namespace ssr {

struct SceneSpec {
  int n_planes = 3;
  float slope = 0.5f;
  std::uint64_t seed = 0;
};

// Piecewise-planar inverse-depth map: seeded random straight cuts partition
// the image; each region carries its own planar ramp. Normalized to [0,1];
// a constant map maps to 0.5.
inline DepthMap synth_depth(const SceneSpec& scene, int h, int w) {
  require(scene.n_planes >= 1, Errc::invalid_argument, "synth_depth: n_planes must be >= 1");
  RngStream rng(scene.seed);

  struct Cut {
    float px, py, nx, ny;
  };
  std::vector<Cut> cuts;
  for (int i = 0; i < scene.n_planes - 1; ++i) {
    Cut c;
    c.px = static_cast<float>(rng.uniform(0.0, w));
    c.py = static_cast<float>(rng.uniform(0.0, h));
    double phi = rng.uniform(0.0, 3.14159265358979323846);
    c.nx = static_cast<float>(std::cos(phi));
    c.ny = static_cast<float>(std::sin(phi));
    cuts.push_back(c);
  }

  struct Plane {
    float base, gx, gy;
  };
  std::vector<Plane> planes(static_cast<std::size_t>(scene.n_planes));
  for (auto& p : planes) {
    p.base = static_cast<float>(rng.uniform());
    p.gx = static_cast<float>(scene.slope * rng.uniform(-1.0, 1.0) / std::max(1, w));
    p.gy = static_cast<float>(scene.slope * rng.uniform(-1.0, 1.0) / std::max(1, h));
  }

  DepthMap d(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int region = 0;
      for (const auto& c : cuts)
        if ((x - c.px) * c.nx + (y - c.py) * c.ny > 0.0f) ++region;
      const Plane& p = planes[static_cast<std::size_t>(region)];
      d.at(y, x) = p.base + p.gx * x + p.gy * y;
    }

  float lo = d.t.v[0], hi = d.t.v[0];
  for (float v : d.t.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi - lo > 1e-12f) {
    float inv = 1.0f / (hi - lo);
    for (float& v : d.t.v) v = (v - lo) * inv;
  } else {
    for (float& v : d.t.v) v = 0.5f;
  }
  return d;
}

inline DepthMap resize_depth(const DepthMap& d, int h, int w) {
  if (d.height() == h && d.width() == w) return d;
  DepthMap out(bilinear_resize(d.t, h, w));
  out.clamp01();
  return out;
}

namespace detail {
// Separable Gaussian smoothing of a 1xHxW map, reflect-101 borders.
inline void gaussian_smooth_plane(Tensor& t, float sigma) {
  if (sigma <= 0.0f) return;
  const int h = t.dim(1), w = t.dim(2);
  int r = std::max(1, static_cast<int>(std::ceil(3.0f * sigma)));
  std::vector<float> taps(static_cast<std::size_t>(2 * r + 1));
  float sum = 0.0f;
  for (int i = -r; i <= r; ++i) {
    float g = std::exp(-0.5f * i * i / (sigma * sigma));
    taps[static_cast<std::size_t>(i + r)] = g;
    sum += g;
  }
  for (float& g : taps) g /= sum;

  Tensor tmp({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -r; i <= r; ++i) acc += taps[static_cast<std::size_t>(i + r)] * t(0, y, mirror_index(x + i, w));
      tmp(0, y, x) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -r; i <= r; ++i) acc += taps[static_cast<std::size_t>(i + r)] * tmp(0, mirror_index(y + i, h), x);
      t(0, y, x) = acc;
    }
}
}  // namespace detail

// Depth source. The oracle stands in for a monocular estimator: it corrupts
// ground truth in proportion to how blurry its input image is, so sharper
// inputs yield more accurate depth. The external kind shells out to an
// estimator executable.
struct DepthProvider {
  enum class Kind { oracle, external } kind = Kind::oracle;
  float kappa = 4.0f;              // oracle corruption level, >= 0
  std::uint64_t oracle_seed = 1;   // fixes the oracle's noise field
  std::string command;             // template with {input_png_path} / {output_tnsr_path}
  std::string workdir = ".";      // scratch dir for the external adapter

  mutable std::mutex exec_mutex;   // external invocations are serialized per provider

  DepthProvider() = default;
  DepthProvider(const DepthProvider& o)
      : kind(o.kind), kappa(o.kappa), oracle_seed(o.oracle_seed), command(o.command), workdir(o.workdir) {}

  static DepthProvider oracle(float kappa, std::uint64_t seed) {
    DepthProvider p;
    p.kind = Kind::oracle;
    p.kappa = kappa;
    p.oracle_seed = seed;
    return p;
  }
  static DepthProvider external(std::string command, std::string workdir) {
    DepthProvider p;
    p.kind = Kind::external;
    p.command = std::move(command);
    p.workdir = std::move(workdir);
    return p;
  }
};

namespace detail {
inline std::string substitute_placeholder(std::string s, const std::string& key,
                                          const std::string& value) {
  for (std::size_t pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos))
    s.replace(pos, key.size(), value), pos += value.size();
  return s;
}
}  // namespace detail

// blur_level in [0,1] quantifies how blurry `img` is (0 = sharp). For the
// oracle it scales both the smoothing std (kappa * blur_level pixels) and
// the additive noise std (0.05 * kappa * blur_level). The noise field is a
// fixed seeded draw, so estimates vary continuously with blur_level.
inline DepthMap estimate_depth(const Image& img, const DepthProvider& provider,
                               const std::optional<DepthMap>& gt, float blur_level) {
  if (provider.kind == DepthProvider::Kind::oracle) {
    require(gt.has_value(), Errc::invalid_argument, "estimate_depth: oracle requires ground truth");
    DepthMap d = resize_depth(*gt, img.height(), img.width());
    float level = provider.kappa * std::max(0.0f, blur_level);
    if (level > 0.0f) {
      detail::gaussian_smooth_plane(d.t, level);
      RngStream rng(provider.oracle_seed);
      float nsigma = 0.05f * level;
      for (float& v : d.t.v) v += nsigma * static_cast<float>(rng.normal());
    }
    d.clamp01();
    return d;
  }

  // External estimator: PNG in, rank-2 ".tnsr" out, min-max normalized here.
  std::lock_guard<std::mutex> lock(provider.exec_mutex);
  std::filesystem::create_directories(provider.workdir);
  std::string in_png = provider.workdir + "/depth_in.png";
  std::string out_tnsr = provider.workdir + "/depth_out.tnsr";
  std::error_code ec;
  std::filesystem::remove(out_tnsr, ec);
  write_image(img, in_png);
  std::string cmd = detail::substitute_placeholder(provider.command, "{input_png_path}", in_png);
  cmd = detail::substitute_placeholder(cmd, "{output_tnsr_path}", out_tnsr);
  int rc = std::system(cmd.c_str());
  require(rc == 0, Errc::subprocess_failed,
          "estimate_depth: external estimator failed (exit " + std::to_string(rc) + ")");
  Tensor raw = read_tensor(out_tnsr);
  require(raw.rank() == 2, Errc::tnsr_bad_header, "estimate_depth: external output must be rank 2");
  float lo = raw.v[0], hi = raw.v[0];
  for (float v : raw.v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Tensor norm({1, raw.dim(0), raw.dim(1)});
  float span = hi - lo;
  for (std::size_t i = 0; i < raw.v.size(); ++i)
    norm.v[i] = span > 0.0f ? (raw.v[i] - lo) / span : 0.5f;
  return resize_depth(DepthMap(std::move(norm)), img.height(), img.width());
}

inline float depth_mae(const DepthMap& a, const DepthMap& b) {
  DepthMap br = resize_depth(b, a.height(), a.width());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.t.v.size(); ++i)
    acc += std::abs(static_cast<double>(a.t.v[i]) - br.t.v[i]);
  return static_cast<float>(acc / static_cast<double>(a.t.v.size()));
}

}  // namespace ssr
