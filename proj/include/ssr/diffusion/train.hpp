#pragma once

#include <vector>

#include "ssr/diffusion/model.hpp"
#include "ssr/diffusion/schedule.hpp"

namespace ssr {

// One training example, fully prepared on the host side.
struct DiffusionSample {
  Image hr;
  ConditionInputs cond;
};

template <typename T>
struct SsrLossParts {
  typename Tape<T>::Var total, l, c1, c2, c3;
};

// Constrained loss: the epsilon-prediction MSE plus L1 feature penalties,
// L = l + lambda1*C1(f1) + lambda2*C2(f2) + lambda3*C3(f3). Zero lambdas
// leave the returned total bitwise equal to the bare DDPM term.
template <typename T>
inline SsrLossParts<T> ssr_loss_element(const DiffusionModel<T>& model, Binding<T>& bd,
                                        const Image& hr, const ConditionInputs& ci, int t,
                                        const BasicTensor<T>& eps, const DiffusionSchedule& sched,
                                        const DiffusionLambdas& lambdas, bool use_kernel = true,
                                        bool use_depth = true) {
  auto& tp = bd.tape();
  require(t >= 1 && t <= sched.t_diff, Errc::invalid_argument, "ssr_loss: t out of range");

  BasicTensor<T> z0 = hr.t.template cast<T>();
  for (T& v : z0.v) v = T(2) * v - T(1);
  BasicTensor<T> zt = forward_diffuse(z0, t, eps, sched);

  BasicTensor<T> stem_in({2 * model.cfg.image_channels, hr.height(), hr.width()});
  std::copy(zt.v.begin(), zt.v.end(), stem_in.v.begin());
  {
    const Tensor& up = ci.lr_up;
    for (std::size_t i = 0; i < up.v.size(); ++i)
      stem_in.v[zt.v.size() + i] = T(2) * static_cast<T>(up.v[i]) - T(1);
  }

  auto cond = encode_conditions(model, bd, ci, use_kernel, use_depth);
  auto eps_hat = model.den.forward(bd, tp.leaf(std::move(stem_in)), t, cond);

  SsrLossParts<T> parts;
  parts.l = tp.mse(eps_hat, tp.leaf(eps));
  parts.c1 = tp.mean_abs_multi(cond.f1);
  parts.c2 = tp.mean_abs_multi(cond.f2);
  parts.c3 = tp.mean_abs_multi(cond.f3);
  parts.total = parts.l;
  if (lambdas.l1 != 0.0f) parts.total = tp.add(parts.total, tp.scale(parts.c1, static_cast<T>(lambdas.l1)));
  if (lambdas.l2 != 0.0f) parts.total = tp.add(parts.total, tp.scale(parts.c2, static_cast<T>(lambdas.l2)));
  if (lambdas.l3 != 0.0f) parts.total = tp.add(parts.total, tp.scale(parts.c3, static_cast<T>(lambdas.l3)));
  return parts;
}

// One optimizer step over a batch: per-element graphs, gradients averaged
// in element order, then Adam. Returns the mean total loss.
template <typename T>
inline T diffusion_train_step(const DiffusionModel<T>& model, ParamStore<T>& ps,
                              const std::vector<const DiffusionSample*>& batch,
                              const DiffusionSchedule& sched, const DiffusionLambdas& lambdas,
                              T learn_rate, int adam_t, RngStream& rng) {
  require(!batch.empty(), Errc::invalid_argument, "diffusion_train_step: empty batch");
  ps.zero_grads();
  const T inv_b = T(1) / static_cast<T>(batch.size());
  T loss_acc = T(0);
  for (const DiffusionSample* s : batch) {
    int t = 1 + rng.uniform_int(sched.t_diff);
    BasicTensor<T> eps(s->hr.t.shape);
    for (T& v : eps.v) v = static_cast<T>(rng.normal());

    Tape<T> tp;
    Binding<T> bd(tp, ps, /*train=*/true);
    auto parts = ssr_loss_element(model, bd, s->hr, s->cond, t, eps, sched, lambdas);
    T value = tp.val(parts.total).v[0];
    if (!std::isfinite(static_cast<double>(value)))
      fail(Errc::numeric_error, "diffusion_train_step: non-finite loss at t=" + std::to_string(t));
    loss_acc += value;
    tp.backward(tp.scale(parts.total, inv_b));
    bd.pull_grads();
  }
  ps.adam_step(learn_rate, adam_t);
  return loss_acc * inv_b;
}

}  // namespace ssr
