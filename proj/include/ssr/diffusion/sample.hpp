#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ssr/diffusion/model.hpp"
#include "ssr/diffusion/schedule.hpp"

namespace ssr {

enum class SamplerKind { ancestral, ddim };

inline SamplerKind sampler_from_string(const std::string& s) {
  if (s == "ancestral") return SamplerKind::ancestral;
  if (s == "ddim") return SamplerKind::ddim;
  fail(Errc::invalid_argument, "unknown sampler: " + s);
}

// Descending timestep pairs (t_cur, t_prev) covering T..0 in `steps` hops.
inline std::vector<std::pair<int, int>> sampler_timesteps(int t_diff, int steps) {
  require(steps >= 1 && steps <= t_diff, Errc::invalid_argument, "sampler: steps must be in [1, T]");
  std::vector<int> ts;
  for (int i = 0; i <= steps; ++i) {
    int t = static_cast<int>(std::llround(static_cast<double>(i) * t_diff / steps));
    if (ts.empty() || t != ts.back()) ts.push_back(t);
  }
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = ts.size(); i-- > 1;) pairs.emplace_back(ts[i], ts[i - 1]);
  return pairs;
}

// Reverse process from z_T ~ N(0, I) with fixed conditioning. The update is
// the eta-generalized DDIM step: eta = 1 over the full chain is ancestral
// DDPM; eta = 0 is deterministic DDIM. Output is mapped back to [0,1].
inline Image sample_sr(const DiffusionModel<float>& model, ParamStore<float>& ps, const Image& lr,
                       const DepthMap& depth, const KernelField& field,
                       const KernelProjection& proj, const DiffusionSchedule& sched,
                       RngStream& rng, SamplerKind sampler, int steps, bool use_kernel = true,
                       bool use_depth = true) {
  require(ps.all_finite(), Errc::numeric_error, "sample_sr: non-finite parameters");
  const int s = model.cfg.scale;
  const int h = lr.height() * s, w = lr.width() * s;
  const int c = model.cfg.image_channels;
  const float eta = sampler == SamplerKind::ancestral ? 1.0f : 0.0f;
  if (sampler == SamplerKind::ancestral) steps = sched.t_diff;

  ConditionInputs ci = make_condition_inputs(lr, depth, field, proj, s);
  FusionValues<float> cond_values;
  {
    Tape<float> tp;
    Binding<float> bd(tp, ps, /*train=*/false);
    auto cond = encode_conditions(model, bd, ci, use_kernel, use_depth);
    cond_values = snapshot_features(tp, cond);
  }

  Tensor lr_sym({c, h, w});
  for (std::size_t i = 0; i < lr_sym.v.size(); ++i) lr_sym.v[i] = 2.0f * ci.lr_up.v[i] - 1.0f;

  Tensor z({c, h, w});
  for (float& v : z.v) v = static_cast<float>(rng.normal());

  for (auto [t_cur, t_prev] : sampler_timesteps(sched.t_diff, steps)) {
    Tensor stem_in({2 * c, h, w});
    std::copy(z.v.begin(), z.v.end(), stem_in.v.begin());
    std::copy(lr_sym.v.begin(), lr_sym.v.end(), stem_in.v.begin() + static_cast<std::ptrdiff_t>(z.v.size()));

    Tensor eps_hat;
    {
      Tape<float> tp;
      Binding<float> bd(tp, ps, /*train=*/false);
      auto cond = leaf_features(tp, cond_values);
      auto out = model.den.forward(bd, tp.leaf(std::move(stem_in)), t_cur, cond);
      eps_hat = tp.val(out);
    }

    const double ab_cur = sched.alpha_bar[static_cast<std::size_t>(t_cur)];
    const double ab_prev = sched.alpha_bar[static_cast<std::size_t>(t_prev)];
    const double sq_cur = std::sqrt(ab_cur), sq_prev = std::sqrt(ab_prev);
    const double one_m_cur = 1.0 - ab_cur, one_m_prev = 1.0 - ab_prev;
    double sigma = 0.0;
    if (eta > 0.0f && t_prev > 0)
      sigma = eta * std::sqrt(one_m_prev / one_m_cur) * std::sqrt(1.0 - ab_cur / ab_prev);
    const double dir = std::sqrt(std::max(0.0, one_m_prev - sigma * sigma));

    for (std::size_t i = 0; i < z.v.size(); ++i) {
      double x0 = (z.v[i] - std::sqrt(one_m_cur) * eps_hat.v[i]) / sq_cur;
      z.v[i] = static_cast<float>(sq_prev * x0 + dir * eps_hat.v[i]);
    }
    if (sigma > 0.0)
      for (float& v : z.v) v += static_cast<float>(sigma * rng.normal());
  }

  Image out(c, h, w);
  for (std::size_t i = 0; i < z.v.size(); ++i) out.t.v[i] = 0.5f * (z.v[i] + 1.0f);
  out.clamp01();
  return out;
}

}  // namespace ssr
