#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ssr/core/image.hpp"
#include "ssr/core/resize.hpp"
#include "ssr/core/tensor_io.hpp"
#include "ssr/kernelfield/field.hpp"
#include "ssr/nn/modules.hpp"

namespace ssr {

// Low-dimensional kernel representation: per-pixel kernels are centered and
// projected onto the top principal directions of a training sample.
struct KernelProjection {
  Tensor basis;  // [kdim, m], orthonormal columns
  Tensor mean;   // [kdim]

  int kdim() const { return basis.dim(0); }
  int m() const { return basis.dim(1); }

  void save(const std::string& basis_path, const std::string& mean_path) const {
    write_tensor(basis, basis_path);
    write_tensor(mean, mean_path);
  }
  static KernelProjection load(const std::string& basis_path, const std::string& mean_path) {
    KernelProjection p;
    p.basis = read_tensor(basis_path);
    p.mean = read_tensor(mean_path);
    require(p.basis.rank() == 2 && p.mean.rank() == 1 && p.mean.dim(0) == p.basis.dim(0),
            Errc::shape_mismatch, "kernel projection: inconsistent files");
    return p;
  }
};

// PCA over a sample of flattened kernels; requires at least 10*m samples.
inline KernelProjection kernel_projection_fit(const std::vector<std::vector<float>>& samples, int m) {
  require(!samples.empty(), Errc::invalid_argument, "kernel_projection_fit: no samples");
  const int kdim = static_cast<int>(samples[0].size());
  require(m >= 1 && m <= kdim, Errc::invalid_argument, "kernel_projection_fit: bad m");
  require(static_cast<int>(samples.size()) >= 10 * m, Errc::invalid_argument,
          "kernel_projection_fit: need at least 10*m samples");

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(kdim);
  for (const auto& s : samples)
    for (int i = 0; i < kdim; ++i) mean[i] += s[static_cast<std::size_t>(i)];
  mean /= static_cast<double>(samples.size());

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(kdim, kdim);
  for (const auto& s : samples) {
    Eigen::VectorXd d(kdim);
    for (int i = 0; i < kdim; ++i) d[i] = s[static_cast<std::size_t>(i)] - mean[i];
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(samples.size());

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  require(eig.info() == Eigen::Success, Errc::numeric_error, "kernel_projection_fit: eigensolver failed");

  KernelProjection p;
  p.basis = Tensor({kdim, m});
  p.mean = Tensor({kdim});
  for (int i = 0; i < kdim; ++i) p.mean(i) = static_cast<float>(mean[i]);
  // Eigenvalues ascend; take the top m columns.
  for (int j = 0; j < m; ++j) {
    auto col = eig.eigenvectors().col(kdim - 1 - j);
    for (int i = 0; i < kdim; ++i) p.basis(i, j) = static_cast<float>(col[i]);
  }
  return p;
}

// Per-pixel projection coefficients of a field: [m_use, H, W].
inline Tensor project_field(const KernelField& field, const KernelProjection& proj, int m_use) {
  require(field.kdim() == proj.kdim(), Errc::shape_mismatch, "project_field: kdim mismatch");
  require(m_use >= 1 && m_use <= proj.m(), Errc::invalid_argument, "project_field: bad m_use");
  const int h = field.height(), w = field.width(), kdim = field.kdim();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({m_use, h, w});
  std::vector<float> buf(static_cast<std::size_t>(kdim));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      field.pixel_kernel(y, x, buf.data());
      for (int j = 0; j < m_use; ++j) {
        double acc = 0.0;
        for (int i = 0; i < kdim; ++i)
          acc += (buf[static_cast<std::size_t>(i)] - proj.mean(i)) * proj.basis(i, j);
        out.v[static_cast<std::size_t>(j) * plane + static_cast<std::size_t>(y) * w + x] =
            static_cast<float>(acc);
      }
    }
  return out;
}

inline Tensor reconstruct_kernel(const KernelProjection& proj, const float* coeffs, int m_use) {
  Tensor k({proj.kdim()});
  for (int i = 0; i < proj.kdim(); ++i) {
    double acc = proj.mean(i);
    for (int j = 0; j < m_use; ++j) acc += proj.basis(i, j) * coeffs[j];
    k(i) = static_cast<float>(acc);
  }
  return k;
}

// Lightweight RRDB-based non-blind SR trunk operating at LR resolution,
// conditioned on pooled kernel-projection maps, with a global bilinear skip
// and sub-pixel upsampling.
struct NbsrConfig {
  int in_channels = 3;
  int n_rrdb = 4;
  int channels = 32;
  int growth = 16;
  int scale = 4;
  int proj_m = 10;

  void validate() const {
    require(n_rrdb >= 1, Errc::invalid_argument, "nbsr: n_rrdb must be >= 1");
    require(scale >= 1, Errc::invalid_argument, "nbsr: scale must be >= 1");
  }
};

// Five-conv dense block with residual scaling 0.2. The last conv is
// zero-initialized so each block starts as an identity.
template <typename T>
struct DenseBlock {
  int channels = 0, growth = 0;
  Conv2dLayer<T> c1, c2, c3, c4, c5;

  DenseBlock() = default;
  DenseBlock(const std::string& name, int ch, int g) : channels(ch), growth(g) {
    c1 = {name + ".c1", ch, g, 3, true};
    c2 = {name + ".c2", ch + g, g, 3, true};
    c3 = {name + ".c3", ch + 2 * g, g, 3, true};
    c4 = {name + ".c4", ch + 3 * g, g, 3, true};
    c5 = {name + ".c5", ch + 4 * g, ch, 3, true};
  }

  void init(ParamStore<T>& ps, RngStream& rng) const {
    c1.init(ps, rng);
    c2.init(ps, rng);
    c3.init(ps, rng);
    c4.init(ps, rng);
    c5.init(ps, rng, T(1), /*zero=*/true);
  }

  typename Tape<T>::Var apply(Binding<T>& bd, typename Tape<T>::Var x) const {
    auto& tp = bd.tape();
    const T slope = T(0.2);
    auto d1 = tp.leaky_relu(c1.apply(bd, x), slope);
    auto x1 = tp.concat_ch(x, d1);
    auto d2 = tp.leaky_relu(c2.apply(bd, x1), slope);
    auto x2 = tp.concat_ch(x1, d2);
    auto d3 = tp.leaky_relu(c3.apply(bd, x2), slope);
    auto x3 = tp.concat_ch(x2, d3);
    auto d4 = tp.leaky_relu(c4.apply(bd, x3), slope);
    auto x4 = tp.concat_ch(x3, d4);
    auto d5 = c5.apply(bd, x4);
    return tp.add(x, tp.scale(d5, T(0.2)));
  }
};

template <typename T>
struct Rrdb {
  DenseBlock<T> b1, b2, b3;

  Rrdb() = default;
  Rrdb(const std::string& name, int ch, int g)
      : b1(name + ".b1", ch, g), b2(name + ".b2", ch, g), b3(name + ".b3", ch, g) {}

  void init(ParamStore<T>& ps, RngStream& rng) const {
    b1.init(ps, rng);
    b2.init(ps, rng);
    b3.init(ps, rng);
  }

  typename Tape<T>::Var apply(Binding<T>& bd, typename Tape<T>::Var x) const {
    auto h = b1.apply(bd, x);
    h = b2.apply(bd, h);
    h = b3.apply(bd, h);
    return bd.tape().add(x, bd.tape().scale(h, T(0.2)));
  }
};

template <typename T>
struct Nbsr {
  NbsrConfig cfg;
  Conv2dLayer<T> stem, trunk_conv, up_conv, out_conv;
  std::vector<Rrdb<T>> blocks;

  explicit Nbsr(const NbsrConfig& config) : cfg(config) {
    cfg.validate();
    stem = {"nbsr.stem", cfg.in_channels + cfg.proj_m, cfg.channels, 3, true};
    trunk_conv = {"nbsr.trunk", cfg.channels, cfg.channels, 3, true};
    up_conv = {"nbsr.up", cfg.channels, cfg.in_channels * cfg.scale * cfg.scale, 3, true};
    out_conv = {"nbsr.out", cfg.in_channels, cfg.in_channels, 3, true};
    for (int i = 0; i < cfg.n_rrdb; ++i)
      blocks.emplace_back("nbsr.rrdb" + std::to_string(i), cfg.channels, cfg.growth);
  }

  void init(ParamStore<T>& ps, RngStream& rng) const {
    stem.init(ps, rng);
    trunk_conv.init(ps, rng);
    up_conv.init(ps, rng);
    out_conv.init(ps, rng, T(1), /*zero=*/true);  // identity start: output = bilinear skip
    for (const auto& b : blocks) b.init(ps, rng);
  }

  // lr: [C,h,w]; coeff: [proj_m,h,w] pooled projection maps. Returns the SR
  // image [C, s*h, s*w] clamped to [0,1].
  typename Tape<T>::Var forward(Binding<T>& bd, typename Tape<T>::Var lr,
                                typename Tape<T>::Var coeff) const {
    auto& tp = bd.tape();
    const auto& lv = tp.val(lr);
    const auto& cv = tp.val(coeff);
    require(lv.rank() == 3 && cv.rank() == 3 && cv.dim(0) == cfg.proj_m, Errc::shape_mismatch,
            "nbsr: want [C,h,w] and [m,h,w]");
    require(lv.dim(1) == cv.dim(1) && lv.dim(2) == cv.dim(2), Errc::shape_mismatch,
            "nbsr: coefficient maps must match LR dims");

    auto x = tp.concat_ch(lr, coeff);
    auto f0 = stem.apply(bd, x);
    auto f = f0;
    for (const auto& b : blocks) f = b.apply(bd, f);
    f = tp.add(f0, trunk_conv.apply(bd, f));
    auto up = tp.pixel_shuffle(up_conv.apply(bd, f), cfg.scale);
    auto res = out_conv.apply(bd, up);
    auto skip = tp.bilinear(lr, lv.dim(1) * cfg.scale, lv.dim(2) * cfg.scale);
    return tp.clamp01(tp.add(skip, res));
  }
};

// Pools the per-pixel projection of an HR-resolution field down to LR
// resolution for trunk conditioning.
inline Tensor nbsr_condition_maps(const KernelField& field, const KernelProjection& proj, int m,
                                  int scale) {
  Tensor hr = project_field(field, proj, m);
  require(hr.dim(1) % scale == 0 && hr.dim(2) % scale == 0, Errc::shape_mismatch,
          "nbsr_condition_maps: field dims must divide by scale");
  const int c = hr.dim(0), h = hr.dim(1) / scale, w = hr.dim(2) / scale;
  Tensor out({c, h, w});
  const float inv = 1.0f / static_cast<float>(scale * scale);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int dy = 0; dy < scale; ++dy)
          for (int dx = 0; dx < scale; ++dx) acc += hr(ch, y * scale + dy, x * scale + dx);
        out(ch, y, x) = acc * inv;
      }
  return out;
}

template <typename T>
inline typename Tape<T>::Var nbsr_loss(Tape<T>& tp, typename Tape<T>::Var pred,
                                       typename Tape<T>::Var hr) {
  return tp.l1(pred, hr);
}

// f32 inference wrapper.
inline Image nbsr_super_resolve(const Nbsr<float>& net, ParamStore<float>& ps, const Image& lr,
                                const KernelField& field, const KernelProjection& proj) {
  Tape<float> tp;
  Binding<float> bd(tp, ps, /*train=*/false);
  Tensor coeff = nbsr_condition_maps(field, proj, net.cfg.proj_m, net.cfg.scale);
  auto out = net.forward(bd, tp.leaf(lr.t), tp.leaf(coeff));
  return Image(tp.val(out));
}

}  // namespace ssr
