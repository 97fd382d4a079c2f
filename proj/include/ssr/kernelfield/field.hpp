#pragma once

#include <cmath>
#include <vector>

#include "ssr/core/colormap.hpp"
#include "ssr/core/image.hpp"
#include "ssr/core/parallel.hpp"
#include "ssr/core/rng.hpp"
#include "ssr/core/tensor.hpp"
#include "ssr/kernelfield/kernel.hpp"

namespace ssr {

// Per-pixel blur kernels, stored as [kdim, H, W] with kdim = side*side.
// Every pixel's kernel is non-negative and sums to 1.
struct KernelField {
  int side = 0;
  Tensor t;  // [side*side, H, W]

  KernelField() = default;
  KernelField(int side_, int height, int width) : side(side_), t({side_ * side_, height, width}) {
    require(side_ >= 3 && side_ % 2 == 1, Errc::invalid_argument, "kernel side must be odd and >= 3");
  }
  KernelField(int side_, Tensor tensor) : side(side_), t(std::move(tensor)) {
    require(t.rank() == 3 && t.dim(0) == side_ * side_, Errc::invalid_argument,
            "kernel field tensor must be [side^2, H, W]");
  }

  int kdim() const { return side * side; }
  int height() const { return t.dim(1); }
  int width() const { return t.dim(2); }

  float& at(int k, int y, int x) { return t(k, y, x); }
  float at(int k, int y, int x) const { return t(k, y, x); }

  // Copies pixel (y, x)'s kernel into a contiguous buffer.
  void pixel_kernel(int y, int x, float* out) const {
    const int n = kdim();
    const std::size_t plane = static_cast<std::size_t>(height()) * width();
    const float* base = t.data() + static_cast<std::size_t>(y) * width() + x;
    for (int k = 0; k < n; ++k) out[k] = base[static_cast<std::size_t>(k) * plane];
  }

  void set_pixel_kernel(int y, int x, const float* in) {
    const int n = kdim();
    const std::size_t plane = static_cast<std::size_t>(height()) * width();
    float* base = t.data() + static_cast<std::size_t>(y) * width() + x;
    for (int k = 0; k < n; ++k) base[static_cast<std::size_t>(k) * plane] = in[k];
  }

  // Max deviation of any per-pixel kernel sum from 1 (f64 accumulation, so
  // the measurement adds no error of its own).
  float max_norm_deviation() const {
    const int n = kdim();
    const std::size_t plane = static_cast<std::size_t>(height()) * width();
    double worst = 0.0;
    for (std::size_t p = 0; p < plane; ++p) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += t.v[static_cast<std::size_t>(k) * plane + p];
      worst = std::max(worst, std::abs(s - 1.0));
    }
    return static_cast<float>(worst);
  }
};

inline KernelField uniform_kernel_field(const std::vector<float>& kernel, int side, int h, int w) {
  require(static_cast<int>(kernel.size()) == side * side, Errc::invalid_argument,
          "uniform_kernel_field: kernel size mismatch");
  KernelField f(side, h, w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int k = 0; k < side * side; ++k)
    for (std::size_t p = 0; p < plane; ++p)
      f.t.v[static_cast<std::size_t>(k) * plane + p] = kernel[static_cast<std::size_t>(k)];
  return f;
}

inline KernelField delta_kernel_field(int side, int h, int w) {
  std::vector<float> k(static_cast<std::size_t>(side) * side, 0.0f);
  k[static_cast<std::size_t>(side / 2) * side + side / 2] = 1.0f;
  return uniform_kernel_field(k, side, h, w);
}

// Maps normalized inverse depth to defocus blur: sharpest at the focal
// plane, blur growing linearly with |d - d_focus|.
struct FocusSpec {
  float d_focus = 0.5f;
  float sigma_min = 0.3f;
  float sigma_max = 3.0f;
  float aniso = 0.0f;   // in [0, 0.6]
  float theta = 0.0f;   // drawn once per image
};

inline FocusSpec random_focus_spec(RngStream& rng, float sigma_min, float sigma_max,
                                   float aniso_max = 0.6f) {
  FocusSpec fs;
  fs.d_focus = static_cast<float>(rng.uniform());
  fs.sigma_min = sigma_min;
  fs.sigma_max = sigma_max;
  fs.aniso = static_cast<float>(rng.uniform(0.0, aniso_max));
  fs.theta = static_cast<float>(rng.uniform(0.0, 3.14159265358979323846));
  return fs;
}

inline float sigma_base_for_depth(float d, const FocusSpec& fs) {
  require(fs.sigma_max >= fs.sigma_min, Errc::invalid_argument,
          "sigma_max must be >= sigma_min");
  float denom = std::max(fs.d_focus, 1.0f - fs.d_focus);
  return fs.sigma_min + (fs.sigma_max - fs.sigma_min) * std::abs(d - fs.d_focus) / denom;
}

inline GaussianKernelParams depth_to_kernel_params(float d, const FocusSpec& fs) {
  require(d >= 0.0f && d <= 1.0f, Errc::invalid_argument, "depth value must be in [0,1]");
  float base = sigma_base_for_depth(d, fs);
  GaussianKernelParams p;
  p.sigma_x = std::clamp(base * (1.0f + fs.aniso), kSigmaSynthMin, kSigmaSynthMax);
  p.sigma_y = std::clamp(base * (1.0f - fs.aniso), kSigmaSynthMin, kSigmaSynthMax);
  p.theta = fs.theta;
  return p;
}

inline KernelField build_kernel_field(const DepthMap& depth, const FocusSpec& fs, int side) {
  const int h = depth.height(), w = depth.width();
  KernelField field(side, h, w);
  parallel_for(h, [&](int y) {
    for (int x = 0; x < w; ++x) {
      auto k = synth_aniso_gaussian(depth_to_kernel_params(depth.at(y, x), fs), side);
      field.set_pixel_kernel(y, x, k.data());
    }
  }, 8);
  return field;
}

// Convex blend of two kernel fields; gamma weighs the fresh estimate.
// gamma 1 and 0 return the fresh / previous field unchanged.
inline KernelField ema_blend(const KernelField& fresh, const KernelField& prev, float gamma) {
  require(gamma >= 0.0f && gamma <= 1.0f, Errc::invalid_argument, "ema_blend: gamma must be in [0,1]");
  check_same_shape(fresh.t, prev.t, "ema_blend");
  require(fresh.side == prev.side, Errc::shape_mismatch, "ema_blend: kernel side mismatch");
  if (gamma == 1.0f) return fresh;
  if (gamma == 0.0f) return prev;
  KernelField out(fresh.side, fresh.height(), fresh.width());
  const float g1 = 1.0f - gamma;
  for (std::size_t i = 0; i < out.t.v.size(); ++i)
    out.t.v[i] = gamma * fresh.t.v[i] + g1 * prev.t.v[i];
  return out;
}

// Per-pixel variance of the kernel entries; a compact blur-intensity map.
inline Tensor kernel_variance_map(const KernelField& field) {
  const int n = field.kdim(), h = field.height(), w = field.width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({1, h, w});
  for (std::size_t p = 0; p < plane; ++p) {
    double mean = 0.0;
    for (int k = 0; k < n; ++k) mean += field.t.v[static_cast<std::size_t>(k) * plane + p];
    mean /= n;
    double var = 0.0;
    for (int k = 0; k < n; ++k) {
      double d = field.t.v[static_cast<std::size_t>(k) * plane + p] - mean;
      var += d * d;
    }
    out.v[p] = static_cast<float>(var / n);
  }
  return out;
}

inline void save_variance_heatmap(const KernelField& field, const std::string& path) {
  save_heatmap(kernel_variance_map(field), path);
}

// Mean over pixels of the L2 distance between per-pixel kernels.
inline float kernel_field_error(const KernelField& est, const KernelField& gt) {
  check_same_shape(est.t, gt.t, "kernel_field_error");
  const int n = est.kdim(), h = est.height(), w = est.width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  double acc = 0.0;
  for (std::size_t p = 0; p < plane; ++p) {
    double s = 0.0;
    for (int k = 0; k < n; ++k) {
      double d = static_cast<double>(est.t.v[static_cast<std::size_t>(k) * plane + p]) -
                 gt.t.v[static_cast<std::size_t>(k) * plane + p];
      s += d * d;
    }
    acc += std::sqrt(s);
  }
  return static_cast<float>(acc / static_cast<double>(plane));
}

// Mean per-pixel spatial std of the field, normalized by sigma_max and
// clamped to [0,1]; the blur-level handle the depth oracle consumes.
inline float field_blur_level(const KernelField& field, float sigma_max) {
  const int h = field.height(), w = field.width();
  std::vector<float> buf(static_cast<std::size_t>(field.kdim()));
  double acc = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      field.pixel_kernel(y, x, buf.data());
      acc += kernel_spatial_std(buf.data(), field.side);
    }
  double mean_std = acc / (static_cast<double>(h) * w);
  return static_cast<float>(std::clamp(mean_std / static_cast<double>(sigma_max), 0.0, 1.0));
}

}  // namespace ssr
