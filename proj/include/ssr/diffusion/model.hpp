#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "ssr/core/image.hpp"
#include "ssr/core/resize.hpp"
#include "ssr/core/rng.hpp"
#include "ssr/depth/depth.hpp"
#include "ssr/diffusion/schedule.hpp"
#include "ssr/kernelfield/field.hpp"
#include "ssr/nbsr/nbsr.hpp"
#include "ssr/nn/modules.hpp"

namespace ssr {

// Conditional pixel-space diffusion super-resolver. The denoiser is a small
// two-resolution UNet whose stem sees z_t next to the upsampled LR image;
// kernel-field and depth information enter only through AMF modulation at
// three injection sites (both encoder levels and the decoder level), so
// zeroing their features at the AMF boundary removes a modality exactly.
struct DiffusionConfig {
  int image_channels = 3;
  int base_channels = 32;    // level-0 width; level 1 is twice this
  int temb_dim = 128;
  int amf_hidden = 128;      // hidden width of the AMF MLPs
  int lr_feat = 32;          // f3 (LR) modality feature width
  int depth_feat = 16;       // f2
  int kernel_feat = 16;      // f1, over variance map + top-3 projection maps
  int scale = 4;
  enum class AmfMode { chain, sum } amf_mode = AmfMode::chain;

  int level_channels(int site) const { return site == 1 ? 2 * base_channels : base_channels; }
};

struct DiffusionLambdas {
  float l1 = 1e-4f;  // kernel features
  float l2 = 1e-4f;  // depth features
  float l3 = 1e-4f;  // LR features
};

// Per-modality features, one map per injection site.
template <typename T>
struct FusionFeatures {
  std::vector<typename Tape<T>::Var> f1, f2, f3;  // kernel, depth, LR
};

// Plain-tensor snapshot of FusionFeatures; sampling fixes the conditioning
// once and re-leafs it into every step's tape.
template <typename T>
struct FusionValues {
  std::vector<BasicTensor<T>> f1, f2, f3;
};

template <typename T>
inline std::vector<T> sinusoidal_time_embedding(int t, int dim) {
  std::vector<T> emb(static_cast<std::size_t>(dim));
  int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / std::max(1, half - 1));
    emb[static_cast<std::size_t>(i)] = static_cast<T>(std::sin(t * freq));
    emb[static_cast<std::size_t>(half + i)] = static_cast<T>(std::cos(t * freq));
  }
  return emb;
}

// Residual block without time conditioning (condition encoders).
template <typename T>
struct PlainResBlock {
  Conv2dLayer<T> c1, c2;

  PlainResBlock() = default;
  PlainResBlock(const std::string& name, int ch)
      : c1{name + ".c1", ch, ch, 3, true}, c2{name + ".c2", ch, ch, 3, true} {}

  void init(ParamStore<T>& ps, RngStream& rng) const {
    c1.init(ps, rng);
    c2.init(ps, rng, T(1), /*zero=*/true);
  }

  typename Tape<T>::Var apply(Binding<T>& bd, typename Tape<T>::Var x) const {
    auto& tp = bd.tape();
    auto h = c1.apply(bd, tp.relu(x));
    h = c2.apply(bd, tp.relu(h));
    return tp.add(x, h);
  }
};

// Residual block with a per-channel time-embedding bias.
template <typename T>
struct TimeResBlock {
  Conv2dLayer<T> c1, c2;
  LinearLayer<T> temb_proj;

  TimeResBlock() = default;
  TimeResBlock(const std::string& name, int ch, int temb_dim)
      : c1{name + ".c1", ch, ch, 3, true},
        c2{name + ".c2", ch, ch, 3, true},
        temb_proj{name + ".temb", temb_dim, ch, true} {}

  void init(ParamStore<T>& ps, RngStream& rng) const {
    c1.init(ps, rng);
    c2.init(ps, rng, T(1), /*zero=*/true);
    temb_proj.init(ps, rng, T(0.2));
  }

  typename Tape<T>::Var apply(Binding<T>& bd, typename Tape<T>::Var x,
                              typename Tape<T>::Var temb) const {
    auto& tp = bd.tape();
    auto h = c1.apply(bd, tp.relu(x));
    h = tp.add_channel_bias(h, temb_proj.apply(bd, temb));
    h = c2.apply(bd, tp.relu(h));
    return tp.add(x, h);
  }
};

// Half-UNet encoder for the LR modality: input block, two downsampling
// residual stages, and 1x1 translate convs producing one map per site.
template <typename T>
struct LrEncoder {
  Conv2dLayer<T> ib;
  PlainResBlock<T> rb1, rb2;
  Conv2dLayer<T> down;
  Conv2dLayer<T> ftb0, ftb1, ftb2;

  explicit LrEncoder(const DiffusionConfig& cfg) {
    int c0 = cfg.base_channels, c1c = 2 * cfg.base_channels, mf = cfg.lr_feat;
    ib = {"enc_lr.ib", cfg.image_channels, c0, 3, true};
    rb1 = PlainResBlock<T>("enc_lr.rb1", c0);
    down = {"enc_lr.down", c0, c1c, 3, true};
    rb2 = PlainResBlock<T>("enc_lr.rb2", c1c);
    ftb0 = {"enc_lr.ftb0", c0, mf, 1, true};
    ftb1 = {"enc_lr.ftb1", c1c, mf, 1, true};
    ftb2 = {"enc_lr.ftb2", c0, mf, 1, true};
  }

  void init(ParamStore<T>& ps, RngStream& rng) const {
    ib.init(ps, rng);
    rb1.init(ps, rng);
    down.init(ps, rng);
    rb2.init(ps, rng);
    ftb0.init(ps, rng);
    ftb1.init(ps, rng);
    ftb2.init(ps, rng);
  }

  std::vector<typename Tape<T>::Var> apply(Binding<T>& bd, typename Tape<T>::Var lr_hr) const {
    auto& tp = bd.tape();
    auto s1 = rb1.apply(bd, ib.apply(bd, lr_hr));
    auto s2 = rb2.apply(bd, down.apply(bd, tp.avg_pool(s1, 2)));
    return {ftb0.apply(bd, s1), ftb1.apply(bd, s2), ftb2.apply(bd, s1)};
  }
};

// Three-conv encoder for the low-information modalities (depth, kernel
// summary), with per-site 1x1 heads resized to the site resolution.
template <typename T>
struct SmallEncoder {
  Conv2dLayer<T> c1, c2, c3;
  Conv2dLayer<T> head0, head1, head2;

  SmallEncoder() = default;
  SmallEncoder(const std::string& name, int cin, int feat) {
    c1 = {name + ".c1", cin, feat, 3, true};
    c2 = {name + ".c2", feat, feat, 3, true};
    c3 = {name + ".c3", feat, feat, 3, true};
    head0 = {name + ".head0", feat, feat, 1, true};
    head1 = {name + ".head1", feat, feat, 1, true};
    head2 = {name + ".head2", feat, feat, 1, true};
  }

  void init(ParamStore<T>& ps, RngStream& rng) const {
    c1.init(ps, rng);
    c2.init(ps, rng);
    c3.init(ps, rng);
    head0.init(ps, rng);
    head1.init(ps, rng);
    head2.init(ps, rng);
  }

  std::vector<typename Tape<T>::Var> apply(Binding<T>& bd, typename Tape<T>::Var x) const {
    auto& tp = bd.tape();
    auto h = tp.relu(c1.apply(bd, x));
    h = tp.relu(c2.apply(bd, h));
    h = c3.apply(bd, h);
    const auto& hv = tp.val(h);
    auto lo = tp.bilinear(h, hv.dim(1) / 2, hv.dim(2) / 2);
    return {head0.apply(bd, h), head1.apply(bd, lo), head2.apply(bd, h)};
  }
};

// One AMF application: F_out = (1 + M_alpha(pool(f))) * BN(F_in) + M_beta(pool(f)).
template <typename T>
struct AmfUnit {
  BatchNormLayer<T> bn;
  MlpLayer<T> alpha, beta;

  AmfUnit() = default;
  AmfUnit(const std::string& name, int feat_in, int hidden, int channels)
      : bn{name + ".bn", channels},
        alpha(name + ".alpha", feat_in, hidden, channels),
        beta(name + ".beta", feat_in, hidden, channels) {}

  void init(ParamStore<T>& ps, RngStream& rng) const {
    bn.init(ps);
    alpha.init(ps, rng, /*zero_out=*/true);
    beta.init(ps, rng, /*zero_out=*/true);
  }

  typename Tape<T>::Var apply(Binding<T>& bd, typename Tape<T>::Var f_in,
                              typename Tape<T>::Var f_mod) const {
    auto& tp = bd.tape();
    auto pooled = tp.global_avg_pool(f_mod);
    auto a = alpha.apply(bd, pooled);
    auto b = beta.apply(bd, pooled);
    return tp.channel_scale_shift(bn.apply(bd, f_in), a, b);
  }

  // Sum-mode helper: returns (alpha, beta) without applying them.
  std::pair<typename Tape<T>::Var, typename Tape<T>::Var> modulators(
      Binding<T>& bd, typename Tape<T>::Var f_mod) const {
    auto& tp = bd.tape();
    auto pooled = tp.global_avg_pool(f_mod);
    return {alpha.apply(bd, pooled), beta.apply(bd, pooled)};
  }
};

// AMF injection site: chained modulation in order f3 -> f2 -> f1, or the
// summation variant (single BN, summed modulators).
template <typename T>
struct AmfSite {
  AmfUnit<T> u3, u2, u1;
  DiffusionConfig::AmfMode mode = DiffusionConfig::AmfMode::chain;

  AmfSite() = default;
  AmfSite(const std::string& name, const DiffusionConfig& cfg, int channels)
      : u3(name + ".f3", cfg.lr_feat, cfg.amf_hidden, channels),
        u2(name + ".f2", cfg.depth_feat, cfg.amf_hidden, channels),
        u1(name + ".f1", cfg.kernel_feat, cfg.amf_hidden, channels),
        mode(cfg.amf_mode) {}

  void init(ParamStore<T>& ps, RngStream& rng) const {
    u3.init(ps, rng);
    u2.init(ps, rng);
    u1.init(ps, rng);
  }

  typename Tape<T>::Var apply(Binding<T>& bd, typename Tape<T>::Var h,
                              typename Tape<T>::Var f3, typename Tape<T>::Var f2,
                              typename Tape<T>::Var f1) const {
    auto& tp = bd.tape();
    if (mode == DiffusionConfig::AmfMode::chain) {
      h = u3.apply(bd, h, f3);
      h = u2.apply(bd, h, f2);
      h = u1.apply(bd, h, f1);
      return h;
    }
    auto [a3, b3] = u3.modulators(bd, f3);
    auto [a2, b2] = u2.modulators(bd, f2);
    auto [a1, b1] = u1.modulators(bd, f1);
    auto a = tp.add(tp.add(a3, a2), a1);
    auto b = tp.add(tp.add(b3, b2), b1);
    return tp.channel_scale_shift(u3.bn.apply(bd, h), a, b);
  }
};

template <typename T>
struct Denoiser {
  DiffusionConfig cfg;
  Conv2dLayer<T> stem;
  TimeResBlock<T> e0a, e0b, e1a, e1b, mid, d0a, d0b;
  Conv2dLayer<T> down, up, fuse, out;
  AmfSite<T> amf0, amf1, amf2;

  explicit Denoiser(const DiffusionConfig& config) : cfg(config) {
    int c0 = cfg.base_channels, c1c = 2 * cfg.base_channels, td = cfg.temb_dim;
    stem = {"den.stem", 2 * cfg.image_channels, c0, 3, true};
    e0a = TimeResBlock<T>("den.e0a", c0, td);
    e0b = TimeResBlock<T>("den.e0b", c0, td);
    down = {"den.down", c0, c1c, 3, true};
    e1a = TimeResBlock<T>("den.e1a", c1c, td);
    e1b = TimeResBlock<T>("den.e1b", c1c, td);
    mid = TimeResBlock<T>("den.mid", c1c, td);
    up = {"den.up", c1c, c0, 3, true};
    fuse = {"den.fuse", 2 * c0, c0, 3, true};
    d0a = TimeResBlock<T>("den.d0a", c0, td);
    d0b = TimeResBlock<T>("den.d0b", c0, td);
    out = {"den.out", c0, cfg.image_channels, 3, true};
    amf0 = AmfSite<T>("den.amf0", cfg, c0);
    amf1 = AmfSite<T>("den.amf1", cfg, c1c);
    amf2 = AmfSite<T>("den.amf2", cfg, c0);
  }

  void init(ParamStore<T>& ps, RngStream& rng) const {
    stem.init(ps, rng);
    e0a.init(ps, rng);
    e0b.init(ps, rng);
    down.init(ps, rng);
    e1a.init(ps, rng);
    e1b.init(ps, rng);
    mid.init(ps, rng);
    up.init(ps, rng);
    fuse.init(ps, rng);
    d0a.init(ps, rng);
    d0b.init(ps, rng);
    out.init(ps, rng, T(1), /*zero=*/true);
    amf0.init(ps, rng);
    amf1.init(ps, rng);
    amf2.init(ps, rng);
  }

  // z_and_lr: [2*image_channels, H, W] (z_t with the upsampled LR in [-1,1]).
  typename Tape<T>::Var forward(Binding<T>& bd, typename Tape<T>::Var z_and_lr, int t,
                                const FusionFeatures<T>& cond) const {
    auto& tp = bd.tape();
    require(cond.f1.size() == 3 && cond.f2.size() == 3 && cond.f3.size() == 3,
            Errc::invalid_argument, "denoiser: need one feature map per injection site");
    const auto& xv = tp.val(z_and_lr);
    require(xv.dim(1) % 2 == 0 && xv.dim(2) % 2 == 0, Errc::invalid_argument,
            "denoiser: dims must be even");

    BasicTensor<T> et({cfg.temb_dim});
    et.v = sinusoidal_time_embedding<T>(t, cfg.temb_dim);
    auto temb = tp.leaf(std::move(et));

    auto h = stem.apply(bd, z_and_lr);
    h = e0a.apply(bd, h, temb);
    h = e0b.apply(bd, h, temb);
    h = amf0.apply(bd, h, cond.f3[0], cond.f2[0], cond.f1[0]);
    auto skip = h;

    h = down.apply(bd, tp.avg_pool(h, 2));
    h = e1a.apply(bd, h, temb);
    h = e1b.apply(bd, h, temb);
    h = amf1.apply(bd, h, cond.f3[1], cond.f2[1], cond.f1[1]);
    h = mid.apply(bd, h, temb);

    h = up.apply(bd, tp.bilinear(h, xv.dim(1), xv.dim(2)));
    h = fuse.apply(bd, tp.concat_ch(h, skip));
    h = d0a.apply(bd, h, temb);
    h = d0b.apply(bd, h, temb);
    h = amf2.apply(bd, h, cond.f3[2], cond.f2[2], cond.f1[2]);

    auto eps = out.apply(bd, tp.relu(h));
    const auto& ev = tp.val(eps);
    for (T x : ev.v)
      if (!std::isfinite(static_cast<double>(x)))
        fail(Errc::numeric_error, "denoiser: non-finite activation");
    return eps;
  }
};

// Complete conditional diffusion bundle: encoders + denoiser + projection.
template <typename T>
struct DiffusionModel {
  DiffusionConfig cfg;
  LrEncoder<T> enc_lr;
  SmallEncoder<T> enc_depth, enc_kernel;
  Denoiser<T> den;

  explicit DiffusionModel(const DiffusionConfig& config)
      : cfg(config),
        enc_lr(config),
        enc_depth("enc_depth", 1, config.depth_feat),
        enc_kernel("enc_kernel", 4, config.kernel_feat),
        den(config) {}

  void init(ParamStore<T>& ps, RngStream& rng) const {
    enc_lr.init(ps, rng);
    enc_depth.init(ps, rng);
    enc_kernel.init(ps, rng);
    den.init(ps, rng);
  }
};

// Host-side conditioning inputs at HR resolution.
struct ConditionInputs {
  Tensor lr_up;           // [3,H,W], in [0,1]
  Tensor depth_hr;        // [1,H,W]
  Tensor kernel_summary;  // [4,H,W]: scaled variance map + top-3 projection maps
};

inline ConditionInputs make_condition_inputs(const Image& lr, const DepthMap& depth,
                                             const KernelField& field, const KernelProjection& proj,
                                             int scale) {
  ConditionInputs ci;
  const int h = lr.height() * scale, w = lr.width() * scale;
  require(field.height() == h && field.width() == w, Errc::shape_mismatch,
          "make_condition_inputs: field must be at HR dims");
  ci.lr_up = bilinear_resize(lr.t, h, w);
  ci.depth_hr = resize_depth(depth, h, w).t;
  Tensor var = kernel_variance_map(field);
  Tensor coeff = project_field(field, proj, 3);
  ci.kernel_summary = Tensor({4, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const float vscale = static_cast<float>(field.kdim());  // variance * n is in (0,1]
  for (std::size_t i = 0; i < plane; ++i) ci.kernel_summary.v[i] = var.v[i] * vscale;
  std::copy(coeff.v.begin(), coeff.v.end(), ci.kernel_summary.v.begin() + static_cast<std::ptrdiff_t>(plane));
  return ci;
}

template <typename T>
inline std::vector<typename Tape<T>::Var> zero_features(Tape<T>& tp, int feat, int h, int w) {
  std::vector<typename Tape<T>::Var> out;
  out.push_back(tp.leaf(BasicTensor<T>({feat, h, w})));
  out.push_back(tp.leaf(BasicTensor<T>({feat, h / 2, w / 2})));
  out.push_back(tp.leaf(BasicTensor<T>({feat, h, w})));
  return out;
}

// Runs the three modality encoders. use_kernel / use_depth zero the
// corresponding features at the AMF boundary (the ablation mechanism).
template <typename T>
inline FusionFeatures<T> encode_conditions(const DiffusionModel<T>& model, Binding<T>& bd,
                                           const ConditionInputs& ci, bool use_kernel = true,
                                           bool use_depth = true) {
  auto& tp = bd.tape();
  BasicTensor<T> lr_sym = ci.lr_up.template cast<T>();
  for (T& v : lr_sym.v) v = T(2) * v - T(1);

  FusionFeatures<T> f;
  f.f3 = model.enc_lr.apply(bd, tp.leaf(std::move(lr_sym)));
  if (use_depth) {
    f.f2 = model.enc_depth.apply(bd, tp.leaf(ci.depth_hr.template cast<T>()));
  } else {
    f.f2 = zero_features<T>(tp, model.cfg.depth_feat, ci.depth_hr.dim(1), ci.depth_hr.dim(2));
  }
  if (use_kernel) {
    f.f1 = model.enc_kernel.apply(bd, tp.leaf(ci.kernel_summary.template cast<T>()));
  } else {
    f.f1 = zero_features<T>(tp, model.cfg.kernel_feat, ci.kernel_summary.dim(1),
                            ci.kernel_summary.dim(2));
  }
  return f;
}

template <typename T>
inline FusionValues<T> snapshot_features(const Tape<T>& tp, const FusionFeatures<T>& f) {
  FusionValues<T> v;
  for (auto x : f.f1) v.f1.push_back(tp.val(x));
  for (auto x : f.f2) v.f2.push_back(tp.val(x));
  for (auto x : f.f3) v.f3.push_back(tp.val(x));
  return v;
}

template <typename T>
inline FusionFeatures<T> leaf_features(Tape<T>& tp, const FusionValues<T>& v) {
  FusionFeatures<T> f;
  for (const auto& x : v.f1) f.f1.push_back(tp.leaf(x));
  for (const auto& x : v.f2) f.f2.push_back(tp.leaf(x));
  for (const auto& x : v.f3) f.f3.push_back(tp.leaf(x));
  return f;
}

}  // namespace ssr
