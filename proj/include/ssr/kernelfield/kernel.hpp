#pragma once

#include <cmath>
#include <vector>

#include "ssr/core/error.hpp"
#include "ssr/core/tensor.hpp"

namespace ssr {

// Anisotropic Gaussian parameterization: axis sigmas in pixels and the
// rotation of the major axis. Synthesis keeps sigmas within [0.2, 4.0].
struct GaussianKernelParams {
  float sigma_x = 1.0f;
  float sigma_y = 1.0f;
  float theta = 0.0f;  // radians in [0, pi)
};

constexpr float kSigmaSynthMin = 0.2f;
constexpr float kSigmaSynthMax = 4.0f;

// Samples exp(-0.5 u^T Sigma^-1 u) at integer offsets centered on the middle
// cell and normalizes to sum 1. Sigma = R(theta) diag(sx^2, sy^2) R(theta)^T.
inline std::vector<float> synth_aniso_gaussian(const GaussianKernelParams& p, int side) {
  require(p.sigma_x > 0.0f && p.sigma_y > 0.0f, Errc::invalid_argument,
          "synth_aniso_gaussian: sigmas must be positive");
  require(side >= 3 && side % 2 == 1, Errc::invalid_argument,
          "synth_aniso_gaussian: side must be odd and >= 3");

  const double ct = std::cos(static_cast<double>(p.theta));
  const double st = std::sin(static_cast<double>(p.theta));
  const double ix = 1.0 / (static_cast<double>(p.sigma_x) * p.sigma_x);
  const double iy = 1.0 / (static_cast<double>(p.sigma_y) * p.sigma_y);
  // Inverse covariance R diag(1/sx^2, 1/sy^2) R^T.
  const double a = ct * ct * ix + st * st * iy;
  const double b = ct * st * (ix - iy);
  const double c = st * st * ix + ct * ct * iy;

  const int r = side / 2;
  std::vector<float> k(static_cast<std::size_t>(side) * side);
  double sum = 0.0;
  for (int v = -r; v <= r; ++v)
    for (int u = -r; u <= r; ++u) {
      double q = a * u * u + 2.0 * b * u * v + c * v * v;
      double g = std::exp(-0.5 * q);
      k[static_cast<std::size_t>(v + r) * side + (u + r)] = static_cast<float>(g);
      sum += g;
    }
  float inv = static_cast<float>(1.0 / sum);
  for (float& x : k) x *= inv;
  return k;
}

// Second-moment summary of a normalized kernel: mean offset and 2x2
// covariance over the sampling grid.
struct KernelMoments {
  double mu_u = 0, mu_v = 0;
  double cuu = 0, cuv = 0, cvv = 0;
};

inline KernelMoments kernel_moments(const float* k, int side) {
  const int r = side / 2;
  KernelMoments m;
  for (int v = -r; v <= r; ++v)
    for (int u = -r; u <= r; ++u) {
      double w = k[static_cast<std::size_t>(v + r) * side + (u + r)];
      m.mu_u += w * u;
      m.mu_v += w * v;
    }
  for (int v = -r; v <= r; ++v)
    for (int u = -r; u <= r; ++u) {
      double w = k[static_cast<std::size_t>(v + r) * side + (u + r)];
      double du = u - m.mu_u, dv = v - m.mu_v;
      m.cuu += w * du * du;
      m.cuv += w * du * dv;
      m.cvv += w * dv * dv;
    }
  return m;
}

// Effective isotropic spread: sqrt of the mean axis variance.
inline double kernel_spatial_std(const float* k, int side) {
  KernelMoments m = kernel_moments(k, side);
  return std::sqrt(std::max(0.0, 0.5 * (m.cuu + m.cvv)));
}

// Moment-matched Gaussian parameters of an arbitrary normalized kernel:
// eigen-decomposition of the 2x2 covariance. Sigmas are floored at a small
// epsilon so resynthesis is always valid.
inline GaussianKernelParams estimate_gaussian_params(const float* k, int side) {
  KernelMoments m = kernel_moments(k, side);
  double tr = m.cuu + m.cvv;
  double det = m.cuu * m.cvv - m.cuv * m.cuv;
  double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
  double l1 = tr / 2.0 + disc;  // major
  double l2 = tr / 2.0 - disc;  // minor
  double theta;
  if (std::abs(m.cuv) < 1e-12 && m.cuu >= m.cvv) {
    theta = 0.0;
  } else if (std::abs(m.cuv) < 1e-12) {
    theta = 3.14159265358979323846 / 2.0;
  } else {
    theta = std::atan2(l1 - m.cuu, m.cuv);
  }
  if (theta < 0) theta += 3.14159265358979323846;
  GaussianKernelParams p;
  p.sigma_x = static_cast<float>(std::sqrt(std::max(l1, 1e-6)));
  p.sigma_y = static_cast<float>(std::sqrt(std::max(l2, 1e-6)));
  p.theta = static_cast<float>(theta);
  return p;
}

}  // namespace ssr
