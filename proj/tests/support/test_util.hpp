#pragma once

#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ssr/core/image.hpp"
#include "ssr/core/rng.hpp"
#include "ssr/core/tensor.hpp"
#include "ssr/nn/modules.hpp"

namespace ssr::test {

inline std::string temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("ssr_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

inline Image random_image(int c, int h, int w, RngStream& rng, float lo = 0.0f, float hi = 1.0f) {
  Image img(c, h, w);
  for (float& v : img.t.v) v = static_cast<float>(rng.uniform(lo, hi));
  return img;
}

template <typename T>
inline BasicTensor<T> random_tensor(std::vector<int> shape, RngStream& rng, double scale = 1.0) {
  BasicTensor<T> t(std::move(shape));
  for (T& v : t.v) v = static_cast<T>(scale * rng.normal());
  return t;
}

// Central finite differences against analytic gradients for every parameter
// tensor in the store (a seeded sample of entries per tensor). loss(true)
// must zero grads, run forward+backward and leave gradients in the store;
// loss(false) must return the loss value only. Buffers are restored before
// every evaluation so stateful layers stay idempotent.
inline double gradcheck_params(ParamStore<double>& ps, const std::function<double(bool)>& loss_raw,
                               int entries_per_tensor = 8, double h = 1e-5,
                               std::uint64_t pick_seed = 7) {
  auto buffers0 = ps.buffers;
  auto loss = [&](bool with_grad) {
    ps.buffers = buffers0;
    return loss_raw(with_grad);
  };

  ps.zero_grads();
  loss(true);
  std::map<std::string, BasicTensor<double>> analytic;
  for (auto& [name, e] : ps.params) analytic[name] = e.grad;

  RngStream pick(pick_seed);
  double max_rel = 0.0;
  for (auto& [name, e] : ps.params) {
    const int n = static_cast<int>(e.value.numel());
    std::vector<int> idx;
    if (n <= entries_per_tensor) {
      for (int i = 0; i < n; ++i) idx.push_back(i);
    } else {
      idx.push_back(0);
      for (int i = 1; i < entries_per_tensor; ++i) idx.push_back(pick.uniform_int(n));
    }
    for (int i : idx) {
      double orig = e.value.v[static_cast<std::size_t>(i)];
      double step = h * std::max(1.0, std::abs(orig));
      e.value.v[static_cast<std::size_t>(i)] = orig + step;
      double lp = loss(false);
      e.value.v[static_cast<std::size_t>(i)] = orig - step;
      double lm = loss(false);
      e.value.v[static_cast<std::size_t>(i)] = orig;
      double fd = (lp - lm) / (2.0 * step);
      double an = analytic[name].v[static_cast<std::size_t>(i)];
      double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      max_rel = std::max(max_rel, rel);
    }
  }
  loss(false);  // leave buffers restored
  return max_rel;
}

}  // namespace ssr::test
