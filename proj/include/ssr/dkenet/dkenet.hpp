#pragma once

#include <string>

#include "ssr/core/image.hpp"
#include "ssr/kernelfield/field.hpp"
#include "ssr/nn/modules.hpp"
#include "ssr/nn/tape.hpp"

namespace ssr {

// Depth-informed kernel estimator: a two-branch network mapping an LR image
// plus a depth map at LR resolution to a per-pixel kernel field at HR
// resolution. The trunk interleaves depth-aware blocks with a bilinear
// down/up pair; a softmax head yields normalized kernels.
struct DkenetConfig {
  int in_channels = 3;
  int base_channels = 32;          // must be even
  int kernel_side = 21;
  int scale = 4;
  int depth_branch_channels = 16;
  enum class DepthFusion { per_block, final_only } depth_fusion = DepthFusion::per_block;

  void validate() const {
    require(base_channels % 2 == 0, Errc::invalid_argument, "dkenet: base_channels must be even");
    require(kernel_side % 2 == 1 && kernel_side >= 3, Errc::invalid_argument,
            "dkenet: kernel_side must be odd and >= 3");
    require(scale >= 1, Errc::invalid_argument, "dkenet: scale must be >= 1");
  }
};

// SFT modulation: out = feat * (1 + Gamma(cond)) + Beta(cond), with Gamma
// and Beta two-conv stacks producing per-pixel, per-channel maps. Zero-
// initializing the stacks' output convs makes this an exact identity.
template <typename T>
struct SftLayer {
  Conv2dLayer<T> g1, g2, b1, b2;

  SftLayer() = default;
  SftLayer(const std::string& name, int feat_ch, int cond_ch)
      : g1{name + ".g1", cond_ch, feat_ch, 3, true},
        g2{name + ".g2", feat_ch, feat_ch, 3, true},
        b1{name + ".b1", cond_ch, feat_ch, 3, true},
        b2{name + ".b2", feat_ch, feat_ch, 3, true} {}

  void init(ParamStore<T>& ps, RngStream& rng) const {
    g1.init(ps, rng);
    g2.init(ps, rng, T(1), /*zero=*/true);
    b1.init(ps, rng);
    b2.init(ps, rng, T(1), /*zero=*/true);
  }

  typename Tape<T>::Var apply(Binding<T>& bd, typename Tape<T>::Var feat,
                              typename Tape<T>::Var cond) const {
    auto& tp = bd.tape();
    auto gamma = g2.apply(bd, tp.relu(g1.apply(bd, cond)));
    auto beta = b2.apply(bd, tp.relu(b1.apply(bd, cond)));
    auto scaled = tp.add(feat, tp.mul(feat, gamma));
    return tp.add(scaled, beta);
  }
};

// Mutual-affine convolution: each channel half predicts the other half's
// per-pixel affine parameters through a two-conv stack, then both halves
// pass through their own 3x3 convolution.
template <typename T>
struct MaConvLayer {
  int channels = 0;
  Conv2dLayer<T> pred_a1, pred_a2;  // from half B -> affine for half A
  Conv2dLayer<T> pred_b1, pred_b2;  // from half A -> affine for half B
  Conv2dLayer<T> main_a, main_b;

  MaConvLayer() = default;
  MaConvLayer(const std::string& name, int ch) : channels(ch) {
    require(ch % 2 == 0, Errc::invalid_argument, "maconv: channel count must be even");
    int half = ch / 2;
    pred_a1 = {name + ".pred_a1", half, half, 3, true};
    pred_a2 = {name + ".pred_a2", half, 2 * half, 3, true};
    pred_b1 = {name + ".pred_b1", half, half, 3, true};
    pred_b2 = {name + ".pred_b2", half, 2 * half, 3, true};
    main_a = {name + ".main_a", half, half, 3, true};
    main_b = {name + ".main_b", half, half, 3, true};
  }

  void init(ParamStore<T>& ps, RngStream& rng) const {
    pred_a1.init(ps, rng);
    pred_a2.init(ps, rng, T(1), /*zero=*/true);
    pred_b1.init(ps, rng);
    pred_b2.init(ps, rng, T(1), /*zero=*/true);
    main_a.init(ps, rng);
    main_b.init(ps, rng);
  }

  typename Tape<T>::Var apply(Binding<T>& bd, typename Tape<T>::Var x) const {
    auto& tp = bd.tape();
    int half = channels / 2;
    auto a = tp.slice_ch(x, 0, half);
    auto b = tp.slice_ch(x, half, half);

    auto aff_a = pred_a2.apply(bd, tp.relu(pred_a1.apply(bd, b)));
    auto aff_b = pred_b2.apply(bd, tp.relu(pred_b1.apply(bd, a)));
    auto sa = tp.slice_ch(aff_a, 0, half);
    auto ta = tp.slice_ch(aff_a, half, half);
    auto sb = tp.slice_ch(aff_b, 0, half);
    auto tb = tp.slice_ch(aff_b, half, half);

    auto a2 = tp.add(tp.add(a, tp.mul(a, sa)), ta);  // a * (1 + sa) + ta
    auto b2 = tp.add(tp.add(b, tp.mul(b, sb)), tb);
    return tp.concat_ch(main_a.apply(bd, a2), main_b.apply(bd, b2));
  }
};

// Depth-aware block: SFT with depth features, two MAConv layers with ReLU,
// then a channel split processed by independent convolutions.
template <typename T>
struct DaBlock {
  int channels = 0;
  SftLayer<T> sft;
  MaConvLayer<T> ma1, ma2;
  Conv2dLayer<T> split_l, split_r;

  DaBlock() = default;
  DaBlock(const std::string& name, int ch, int cond_ch)
      : channels(ch),
        sft(name + ".sft", ch, cond_ch),
        ma1(name + ".ma1", ch),
        ma2(name + ".ma2", ch),
        split_l{name + ".split_l", ch / 2, ch / 2, 3, true},
        split_r{name + ".split_r", ch / 2, ch / 2, 3, true} {}

  void init(ParamStore<T>& ps, RngStream& rng) const {
    sft.init(ps, rng);
    ma1.init(ps, rng);
    ma2.init(ps, rng);
    split_l.init(ps, rng);
    split_r.init(ps, rng);
  }

  typename Tape<T>::Var apply(Binding<T>& bd, typename Tape<T>::Var feat,
                              typename Tape<T>::Var depth_feat, bool use_sft) const {
    auto& tp = bd.tape();
    auto h = use_sft ? sft.apply(bd, feat, depth_feat) : feat;
    h = tp.relu(ma1.apply(bd, h));
    h = tp.relu(ma2.apply(bd, h));
    int half = channels / 2;
    auto l = split_l.apply(bd, tp.slice_ch(h, 0, half));
    auto r = split_r.apply(bd, tp.slice_ch(h, half, half));
    return tp.concat_ch(l, r);
  }
};

template <typename T>
struct Dkenet {
  DkenetConfig cfg;
  Conv2dLayer<T> stem;
  Conv2dLayer<T> depth_stem, depth_c1, depth_c2;
  DaBlock<T> da1, da2, da3;
  Conv2dLayer<T> head;

  explicit Dkenet(const DkenetConfig& config) : cfg(config) {
    cfg.validate();
    const int c = cfg.base_channels, dc = cfg.depth_branch_channels;
    stem = {"dkenet.stem", cfg.in_channels, c, 3, true};
    depth_stem = {"dkenet.depth_stem", 1, dc, 3, true};
    depth_c1 = {"dkenet.depth_c1", dc, dc, 3, true};
    depth_c2 = {"dkenet.depth_c2", dc, dc, 3, true};
    da1 = DaBlock<T>("dkenet.da1", c, dc);
    da2 = DaBlock<T>("dkenet.da2", c, dc);
    da3 = DaBlock<T>("dkenet.da3", c, dc);
    head = {"dkenet.head", c, cfg.kernel_side * cfg.kernel_side, 3, true};
  }

  void init(ParamStore<T>& ps, RngStream& rng) const {
    stem.init(ps, rng);
    depth_stem.init(ps, rng);
    depth_c1.init(ps, rng);
    depth_c2.init(ps, rng);
    da1.init(ps, rng);
    da2.init(ps, rng);
    da3.init(ps, rng);
    head.init(ps, rng, T(0.2));  // small head gain keeps the initial softmax soft
  }

  // lr: [in_channels, H, W]; depth: [1, H, W]. Returns [side^2, sH, sW].
  typename Tape<T>::Var forward(Binding<T>& bd, typename Tape<T>::Var lr,
                                typename Tape<T>::Var depth) const {
    auto& tp = bd.tape();
    const auto& lrv = tp.val(lr);
    const auto& dv = tp.val(depth);
    require(lrv.rank() == 3 && dv.rank() == 3 && dv.dim(0) == 1, Errc::shape_mismatch,
            "dkenet: want [C,H,W] image and [1,H,W] depth");
    require(lrv.dim(1) == dv.dim(1) && lrv.dim(2) == dv.dim(2), Errc::shape_mismatch,
            "dkenet: depth dims must equal LR dims");
    const int h = lrv.dim(1), w = lrv.dim(2);
    require(h % 2 == 0 && w % 2 == 0, Errc::invalid_argument,
            "dkenet: LR dims must be even for the down/up pair");

    auto dfeat = depth_stem.apply(bd, depth);
    dfeat = tp.relu(depth_c1.apply(bd, dfeat));
    dfeat = tp.relu(depth_c2.apply(bd, dfeat));

    const bool per_block = cfg.depth_fusion == DkenetConfig::DepthFusion::per_block;
    auto f = stem.apply(bd, lr);
    f = da1.apply(bd, f, dfeat, per_block);

    auto f_lo = tp.bilinear(f, h / 2, w / 2);
    auto dfeat_lo = tp.bilinear(dfeat, h / 2, w / 2);
    f_lo = da2.apply(bd, f_lo, dfeat_lo, per_block);

    auto f_hi = tp.bilinear(f_lo, h, w);
    f_hi = da3.apply(bd, f_hi, dfeat, /*use_sft=*/true);  // final fusion always on

    auto k = head.apply(bd, f_hi);
    k = tp.softmax_ch(k);
    if (cfg.scale > 1) k = tp.nearest_up(k, cfg.scale);
    const auto& kv = tp.val(k);
    for (T x : kv.v)
      if (!std::isfinite(static_cast<double>(x)))
        fail(Errc::numeric_error, "dkenet: non-finite activation in kernel head");
    return k;
  }
};

// Mean absolute error between kernel fields.
template <typename T>
inline typename Tape<T>::Var dkenet_loss(Tape<T>& tp, typename Tape<T>::Var pred,
                                         typename Tape<T>::Var gt) {
  return tp.l1(pred, gt);
}

// Convenience inference wrapper on the f32 instantiation.
inline KernelField dkenet_estimate(const Dkenet<float>& net, ParamStore<float>& ps, const Image& lr,
                                   const DepthMap& depth) {
  Tape<float> tp;
  Binding<float> bd(tp, ps, /*train=*/false);
  auto out = net.forward(bd, tp.leaf(lr.t), tp.leaf(depth.t));
  return KernelField(net.cfg.kernel_side, tp.val(out));
}

}  // namespace ssr
