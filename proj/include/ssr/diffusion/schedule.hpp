#pragma once

#include <cmath>
#include <vector>

#include "ssr/core/error.hpp"
#include "ssr/core/tensor.hpp"

namespace ssr {

// DDPM noise schedule. alpha_bar is indexed by timestep with the t=0
// convention alpha_bar[0] == 1.
struct DiffusionSchedule {
  int t_diff = 200;
  std::vector<float> beta;       // beta[t-1] for t in 1..t_diff
  std::vector<float> alpha_bar;  // size t_diff + 1

  static DiffusionSchedule linear(int t_diff, float beta_start = 1e-4f, float beta_end = 0.02f) {
    require(t_diff >= 1, Errc::invalid_argument, "schedule: t_diff must be >= 1");
    DiffusionSchedule s;
    s.t_diff = t_diff;
    s.beta.resize(static_cast<std::size_t>(t_diff));
    s.alpha_bar.resize(static_cast<std::size_t>(t_diff) + 1);
    s.alpha_bar[0] = 1.0f;
    double prod = 1.0;
    for (int t = 1; t <= t_diff; ++t) {
      float b = t_diff == 1 ? beta_start
                            : beta_start + (beta_end - beta_start) * static_cast<float>(t - 1) /
                                  static_cast<float>(t_diff - 1);
      s.beta[static_cast<std::size_t>(t - 1)] = b;
      prod *= 1.0 - static_cast<double>(b);
      s.alpha_bar[static_cast<std::size_t>(t)] = static_cast<float>(prod);
    }
    s.validate();
    return s;
  }

  void validate() const {
    require(static_cast<int>(beta.size()) == t_diff && static_cast<int>(alpha_bar.size()) == t_diff + 1,
            Errc::invalid_argument, "schedule: inconsistent sizes");
    require(alpha_bar[0] == 1.0f, Errc::invalid_argument, "schedule: alpha_bar[0] must be 1");
    for (int t = 1; t <= t_diff; ++t) {
      float b = beta[static_cast<std::size_t>(t - 1)];
      require(b > 0.0f && b < 1.0f, Errc::invalid_argument, "schedule: beta out of (0,1)");
      if (t > 1)
        require(b >= beta[static_cast<std::size_t>(t - 2)], Errc::invalid_argument,
                "schedule: beta must be non-decreasing");
      require(alpha_bar[static_cast<std::size_t>(t)] < alpha_bar[static_cast<std::size_t>(t - 1)],
              Errc::invalid_argument, "schedule: alpha_bar must be strictly decreasing");
    }
  }
};

// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps, on [-1,1] data.
template <typename T>
inline BasicTensor<T> forward_diffuse(const BasicTensor<T>& z0, int t, const BasicTensor<T>& eps,
                                      const DiffusionSchedule& sched) {
  require(t >= 0 && t <= sched.t_diff, Errc::invalid_argument, "forward_diffuse: t out of range");
  check_same_shape(z0, eps, "forward_diffuse");
  T a = static_cast<T>(std::sqrt(static_cast<double>(sched.alpha_bar[static_cast<std::size_t>(t)])));
  T b = static_cast<T>(
      std::sqrt(1.0 - static_cast<double>(sched.alpha_bar[static_cast<std::size_t>(t)])));
  BasicTensor<T> out(z0.shape);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = a * z0.v[i] + b * eps.v[i];
  return out;
}

}  // namespace ssr
