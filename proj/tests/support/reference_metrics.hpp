#pragma once

// Independent double-precision reference implementations of PSNR and SSIM,
// written directly from their definitions. Deliberately separate from the
// library code paths so the two can be checked against each other.

#include <cmath>
#include <vector>

#include "ssr/core/image.hpp"

namespace ssr::test {

inline double reference_psnr(const Image& a, const Image& b) {
  double se = 0.0;
  for (std::size_t i = 0; i < a.t.v.size(); ++i) {
    double d = static_cast<double>(a.t.v[i]) - static_cast<double>(b.t.v[i]);
    se += d * d;
  }
  double mse = se / static_cast<double>(a.t.v.size());
  if (mse <= 0.0) return 100.0;
  return 10.0 * std::log10(1.0 / mse);
}

// Plain nested-loop SSIM: Gaussian-weighted window statistics computed
// per position, windows fully inside the image.
inline double reference_ssim(const Image& a, const Image& b) {
  const int side = 11, r = side / 2;
  const double sigma = 1.5, c1 = 1e-4, c2 = 9e-4;
  std::vector<double> win;
  double wsum = 0.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      double g = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      win.push_back(g);
      wsum += g;
    }
  for (double& g : win) g /= wsum;

  double total = 0.0;
  long count = 0;
  for (int ch = 0; ch < a.channels(); ++ch)
    for (int y = r; y < a.height() - r; ++y)
      for (int x = r; x < a.width() - r; ++x) {
        double ma = 0, mb = 0;
        std::size_t wi = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx, ++wi) {
            ma += win[wi] * a.at(ch, y + dy, x + dx);
            mb += win[wi] * b.at(ch, y + dy, x + dx);
          }
        double va = 0, vb = 0, cab = 0;
        wi = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx, ++wi) {
            double da = a.at(ch, y + dy, x + dx) - ma;
            double db = b.at(ch, y + dy, x + dx) - mb;
            va += win[wi] * da * da;
            vb += win[wi] * db * db;
            cab += win[wi] * da * db;
          }
        total += ((2 * ma * mb + c1) * (2 * cab + c2)) /
                 ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / static_cast<double>(count);
}

}  // namespace ssr::test
