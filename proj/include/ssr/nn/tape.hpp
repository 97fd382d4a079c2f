#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "ssr/core/image.hpp"
#include "ssr/core/parallel.hpp"
#include "ssr/core/resize.hpp"
#include "ssr/core/tensor.hpp"

namespace ssr {

// Running statistics for one batch-norm site.
template <typename T>
struct BnStats {
  BasicTensor<T>* mean = nullptr;
  BasicTensor<T>* var = nullptr;
};

// Reverse-mode autodiff over dense tensors. A fresh tape is built per
// forward pass; ops record backward closures only when an input requires
// gradients, so inference pays no taping cost. Feature maps are [C,H,W],
// vectors [N], scalars [1]. All convolutions use reflect-101 padding.
template <typename T>
class Tape {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Var leaf(BasicTensor<T> value, bool needs_grad = false) {
    return make_node(std::move(value), needs_grad);
  }

  const BasicTensor<T>& val(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  const BasicTensor<T>& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  void backward(Var loss) {
    auto& n = nodes_[static_cast<std::size_t>(loss.id)];
    require(n.value.numel() == 1, Errc::invalid_argument, "backward: loss must be scalar");
    n.grad.v.assign(n.value.v.size(), T(1));
    for (auto it = backops_.rbegin(); it != backops_.rend(); ++it) (*it)();
  }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    check_same_shape(av, bv, "add");
    BasicTensor<T> out = av;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv.v[i];
    Var o = make_like(std::move(out), needs_grad(a) || needs_grad(b));
    if (needs_grad(o))
      record([this, a, b, o] {
        const auto& g = grad_ref(o);
        if (needs_grad(a)) accumulate(a, g.v.data());
        if (needs_grad(b)) accumulate(b, g.v.data());
      });
    return o;
  }

  Var sub(Var a, Var b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    check_same_shape(av, bv, "sub");
    BasicTensor<T> out = av;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] -= bv.v[i];
    Var o = make_like(std::move(out), needs_grad(a) || needs_grad(b));
    if (needs_grad(o))
      record([this, a, b, o] {
        const auto& g = grad_ref(o);
        if (needs_grad(a)) accumulate(a, g.v.data());
        if (needs_grad(b)) {
          auto& gb = grad_ref_mut(b);
          for (std::size_t i = 0; i < g.v.size(); ++i) gb.v[i] -= g.v[i];
        }
      });
    return o;
  }

  Var mul(Var a, Var b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    check_same_shape(av, bv, "mul");
    BasicTensor<T> out = av;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bv.v[i];
    Var o = make_like(std::move(out), needs_grad(a) || needs_grad(b));
    if (needs_grad(o))
      record([this, a, b, o] {
        const auto& g = grad_ref(o);
        if (needs_grad(a)) {
          auto& ga = grad_ref_mut(a);
          const auto& bv2 = val(b);
          for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * bv2.v[i];
        }
        if (needs_grad(b)) {
          auto& gb = grad_ref_mut(b);
          const auto& av2 = val(a);
          for (std::size_t i = 0; i < g.v.size(); ++i) gb.v[i] += g.v[i] * av2.v[i];
        }
      });
    return o;
  }

  Var scale(Var a, T c) {
    BasicTensor<T> out = val(a);
    for (T& x : out.v) x *= c;
    Var o = make_like(std::move(out), needs_grad(a));
    if (needs_grad(o))
      record([this, a, o, c] {
        const auto& g = grad_ref(o);
        auto& ga = grad_ref_mut(a);
        for (std::size_t i = 0; i < g.v.size(); ++i) ga.v[i] += c * g.v[i];
      });
    return o;
  }

  Var relu(Var a) {
    BasicTensor<T> out = val(a);
    for (T& x : out.v) x = x > T(0) ? x : T(0);
    Var o = make_like(std::move(out), needs_grad(a));
    if (needs_grad(o))
      record([this, a, o] {
        const auto& g = grad_ref(o);
        const auto& x = val(a);
        auto& ga = grad_ref_mut(a);
        for (std::size_t i = 0; i < g.v.size(); ++i)
          if (x.v[i] > T(0)) ga.v[i] += g.v[i];
      });
    return o;
  }

  Var leaky_relu(Var a, T slope) {
    BasicTensor<T> out = val(a);
    for (T& x : out.v) x = x > T(0) ? x : slope * x;
    Var o = make_like(std::move(out), needs_grad(a));
    if (needs_grad(o))
      record([this, a, o, slope] {
        const auto& g = grad_ref(o);
        const auto& x = val(a);
        auto& ga = grad_ref_mut(a);
        for (std::size_t i = 0; i < g.v.size(); ++i)
          ga.v[i] += (x.v[i] > T(0) ? T(1) : slope) * g.v[i];
      });
    return o;
  }

  Var clamp01(Var a) {
    BasicTensor<T> out = val(a);
    for (T& x : out.v) x = std::clamp(x, T(0), T(1));
    Var o = make_like(std::move(out), needs_grad(a));
    if (needs_grad(o))
      record([this, a, o] {
        const auto& g = grad_ref(o);
        const auto& x = val(a);
        auto& ga = grad_ref_mut(a);
        for (std::size_t i = 0; i < g.v.size(); ++i)
          if (x.v[i] > T(0) && x.v[i] < T(1)) ga.v[i] += g.v[i];
      });
    return o;
  }

  // ---- channel-structured ops on [C,H,W] ----

  Var add_channel_bias(Var x, Var b) {
    const auto& xv = val(x);
    const auto& bv = val(b);
    require(xv.rank() == 3 && bv.rank() == 1 && bv.dim(0) == xv.dim(0), Errc::shape_mismatch,
            "add_channel_bias: want [C,H,W] and [C]");
    BasicTensor<T> out = xv;
    const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
    for (int c = 0; c < xv.dim(0); ++c) {
      T bc = bv.v[static_cast<std::size_t>(c)];
      T* p = out.v.data() + static_cast<std::size_t>(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += bc;
    }
    Var o = make_like(std::move(out), needs_grad(x) || needs_grad(b));
    if (needs_grad(o))
      record([this, x, b, o, plane] {
        const auto& g = grad_ref(o);
        if (needs_grad(x)) accumulate(x, g.v.data());
        if (needs_grad(b)) {
          auto& gb = grad_ref_mut(b);
          for (int c = 0; c < val(x).dim(0); ++c) {
            const T* p = g.v.data() + static_cast<std::size_t>(c) * plane;
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            gb.v[static_cast<std::size_t>(c)] += acc;
          }
        }
      });
    return o;
  }

  // out = x * (1 + s_c) + t_c, per channel.
  Var channel_scale_shift(Var x, Var s, Var t) {
    const auto& xv = val(x);
    const auto& sv = val(s);
    const auto& tv = val(t);
    require(xv.rank() == 3 && sv.rank() == 1 && tv.rank() == 1 && sv.dim(0) == xv.dim(0) &&
                tv.dim(0) == xv.dim(0),
            Errc::shape_mismatch, "channel_scale_shift: want [C,H,W], [C], [C]");
    BasicTensor<T> out = xv;
    const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
    for (int c = 0; c < xv.dim(0); ++c) {
      T sc = T(1) + sv.v[static_cast<std::size_t>(c)];
      T tc = tv.v[static_cast<std::size_t>(c)];
      T* p = out.v.data() + static_cast<std::size_t>(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] = p[i] * sc + tc;
    }
    Var o = make_like(std::move(out), needs_grad(x) || needs_grad(s) || needs_grad(t));
    if (needs_grad(o))
      record([this, x, s, t, o, plane] {
        const auto& g = grad_ref(o);
        const auto& xv2 = val(x);
        const auto& sv2 = val(s);
        for (int c = 0; c < xv2.dim(0); ++c) {
          const T* gp = g.v.data() + static_cast<std::size_t>(c) * plane;
          const T* xp = xv2.v.data() + static_cast<std::size_t>(c) * plane;
          if (needs_grad(x)) {
            auto& gx = grad_ref_mut(x);
            T sc = T(1) + sv2.v[static_cast<std::size_t>(c)];
            T* gxp = gx.v.data() + static_cast<std::size_t>(c) * plane;
            for (std::size_t i = 0; i < plane; ++i) gxp[i] += gp[i] * sc;
          }
          if (needs_grad(s)) {
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += gp[i] * xp[i];
            grad_ref_mut(s).v[static_cast<std::size_t>(c)] += acc;
          }
          if (needs_grad(t)) {
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
            grad_ref_mut(t).v[static_cast<std::size_t>(c)] += acc;
          }
        }
      });
    return o;
  }

  Var concat_ch(Var a, Var b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    require(av.rank() == 3 && bv.rank() == 3 && av.dim(1) == bv.dim(1) && av.dim(2) == bv.dim(2),
            Errc::shape_mismatch, "concat_ch: spatial dims must match");
    BasicTensor<T> out({av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)});
    std::copy(av.v.begin(), av.v.end(), out.v.begin());
    std::copy(bv.v.begin(), bv.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(av.v.size()));
    Var o = make_like(std::move(out), needs_grad(a) || needs_grad(b));
    if (needs_grad(o))
      record([this, a, b, o] {
        const auto& g = grad_ref(o);
        std::size_t na = val(a).v.size();
        if (needs_grad(a)) accumulate(a, g.v.data());
        if (needs_grad(b)) accumulate(b, g.v.data() + na);
      });
    return o;
  }

  // Channels [c0, c0+len) of x.
  Var slice_ch(Var x, int c0, int len) {
    const auto& xv = val(x);
    require(xv.rank() == 3 && c0 >= 0 && c0 + len <= xv.dim(0), Errc::shape_mismatch,
            "slice_ch: bad channel range");
    const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
    BasicTensor<T> out({len, xv.dim(1), xv.dim(2)});
    std::copy(xv.v.begin() + static_cast<std::ptrdiff_t>(c0 * plane),
              xv.v.begin() + static_cast<std::ptrdiff_t>((c0 + len) * plane), out.v.begin());
    Var o = make_like(std::move(out), needs_grad(x));
    if (needs_grad(o))
      record([this, x, o, c0, plane] {
        const auto& g = grad_ref(o);
        auto& gx = grad_ref_mut(x);
        T* dst = gx.v.data() + static_cast<std::size_t>(c0) * plane;
        for (std::size_t i = 0; i < g.v.size(); ++i) dst[i] += g.v[i];
      });
    return o;
  }

  // Per-pixel softmax over the channel axis.
  Var softmax_ch(Var x) {
    const auto& xv = val(x);
    require(xv.rank() == 3, Errc::shape_mismatch, "softmax_ch: want [C,H,W]");
    const int c = xv.dim(0);
    const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
    BasicTensor<T> out(xv.shape);
    for (std::size_t p = 0; p < plane; ++p) {
      T mx = xv.v[p];
      for (int ch = 1; ch < c; ++ch) mx = std::max(mx, xv.v[static_cast<std::size_t>(ch) * plane + p]);
      T sum = T(0);
      for (int ch = 0; ch < c; ++ch) {
        T e = std::exp(xv.v[static_cast<std::size_t>(ch) * plane + p] - mx);
        out.v[static_cast<std::size_t>(ch) * plane + p] = e;
        sum += e;
      }
      T inv = T(1) / sum;
      for (int ch = 0; ch < c; ++ch) out.v[static_cast<std::size_t>(ch) * plane + p] *= inv;
    }
    Var o = make_like(std::move(out), needs_grad(x));
    if (needs_grad(o))
      record([this, x, o, c, plane] {
        const auto& g = grad_ref(o);
        const auto& s = val(o);
        auto& gx = grad_ref_mut(x);
        for (std::size_t p = 0; p < plane; ++p) {
          T dot = T(0);
          for (int ch = 0; ch < c; ++ch) {
            std::size_t i = static_cast<std::size_t>(ch) * plane + p;
            dot += g.v[i] * s.v[i];
          }
          for (int ch = 0; ch < c; ++ch) {
            std::size_t i = static_cast<std::size_t>(ch) * plane + p;
            gx.v[i] += s.v[i] * (g.v[i] - dot);
          }
        }
      });
    return o;
  }

  // ---- resampling ----

  Var bilinear(Var x, int h2, int w2) {
    const auto& xv = val(x);
    require(xv.rank() == 3, Errc::shape_mismatch, "bilinear: want [C,H,W]");
    BasicTensor<T> out = bilinear_resize(xv, h2, w2);
    Var o = make_like(std::move(out), needs_grad(x));
    if (needs_grad(o))
      record([this, x, o, h2, w2] {
        const auto& g = grad_ref(o);
        const auto& xv2 = val(x);
        auto& gx = grad_ref_mut(x);
        const int c = xv2.dim(0), h = xv2.dim(1), w = xv2.dim(2);
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < h2; ++y) {
            int y0, y1;
            float wy;
            bilinear_taps(y, h2, h, y0, y1, wy);
            for (int xx = 0; xx < w2; ++xx) {
              int x0, x1;
              float wx;
              bilinear_taps(xx, w2, w, x0, x1, wx);
              T gv = g(ch, y, xx);
              gx(ch, y0, x0) += gv * static_cast<T>((1 - wy) * (1 - wx));
              gx(ch, y0, x1) += gv * static_cast<T>((1 - wy) * wx);
              gx(ch, y1, x0) += gv * static_cast<T>(wy * (1 - wx));
              gx(ch, y1, x1) += gv * static_cast<T>(wy * wx);
            }
          }
      });
    return o;
  }

  Var nearest_up(Var x, int s) {
    const auto& xv = val(x);
    require(xv.rank() == 3 && s >= 1, Errc::shape_mismatch, "nearest_up: want [C,H,W]");
    const int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    BasicTensor<T> out({c, h * s, w * s});
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h * s; ++y)
        for (int xx = 0; xx < w * s; ++xx) out(ch, y, xx) = xv(ch, y / s, xx / s);
    Var o = make_like(std::move(out), needs_grad(x));
    if (needs_grad(o))
      record([this, x, o, c, h, w, s] {
        const auto& g = grad_ref(o);
        auto& gx = grad_ref_mut(x);
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < h * s; ++y)
            for (int xx = 0; xx < w * s; ++xx) gx(ch, y / s, xx / s) += g(ch, y, xx);
      });
    return o;
  }

  Var avg_pool(Var x, int s) {
    const auto& xv = val(x);
    require(xv.rank() == 3 && xv.dim(1) % s == 0 && xv.dim(2) % s == 0, Errc::shape_mismatch,
            "avg_pool: dims must divide by s");
    const int c = xv.dim(0), h = xv.dim(1) / s, w = xv.dim(2) / s;
    const T inv = T(1) / static_cast<T>(s * s);
    BasicTensor<T> out({c, h, w});
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          T acc = T(0);
          for (int dy = 0; dy < s; ++dy)
            for (int dx = 0; dx < s; ++dx) acc += xv(ch, y * s + dy, xx * s + dx);
          out(ch, y, xx) = acc * inv;
        }
    Var o = make_like(std::move(out), needs_grad(x));
    if (needs_grad(o))
      record([this, x, o, c, h, w, s, inv] {
        const auto& g = grad_ref(o);
        auto& gx = grad_ref_mut(x);
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
              T gv = g(ch, y, xx) * inv;
              for (int dy = 0; dy < s; ++dy)
                for (int dx = 0; dx < s; ++dx) gx(ch, y * s + dy, xx * s + dx) += gv;
            }
      });
    return o;
  }

  // [C*s*s, H, W] -> [C, H*s, W*s]; out(c, y*?+dy, x*?+dx) = in(c*s*s + dy*s + dx, y, x).
  Var pixel_shuffle(Var x, int s) {
    const auto& xv = val(x);
    require(xv.rank() == 3 && xv.dim(0) % (s * s) == 0, Errc::shape_mismatch,
            "pixel_shuffle: channels must divide by s^2");
    const int c = xv.dim(0) / (s * s), h = xv.dim(1), w = xv.dim(2);
    BasicTensor<T> out({c, h * s, w * s});
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          for (int dy = 0; dy < s; ++dy)
            for (int dx = 0; dx < s; ++dx)
              out(ch, y * s + dy, xx * s + dx) = xv(ch * s * s + dy * s + dx, y, xx);
    Var o = make_like(std::move(out), needs_grad(x));
    if (needs_grad(o))
      record([this, x, o, c, h, w, s] {
        const auto& g = grad_ref(o);
        auto& gx = grad_ref_mut(x);
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx)
              for (int dy = 0; dy < s; ++dy)
                for (int dx = 0; dx < s; ++dx)
                  gx(ch * s * s + dy * s + dx, y, xx) += g(ch, y * s + dy, xx * s + dx);
      });
    return o;
  }

  // ---- dense / pooled ----

  Var global_avg_pool(Var x) {
    const auto& xv = val(x);
    require(xv.rank() == 3, Errc::shape_mismatch, "global_avg_pool: want [C,H,W]");
    const int c = xv.dim(0);
    const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
    const T inv = T(1) / static_cast<T>(plane);
    BasicTensor<T> out({c});
    for (int ch = 0; ch < c; ++ch) {
      const T* p = xv.v.data() + static_cast<std::size_t>(ch) * plane;
      T acc = T(0);
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      out.v[static_cast<std::size_t>(ch)] = acc * inv;
    }
    Var o = make_like(std::move(out), needs_grad(x));
    if (needs_grad(o))
      record([this, x, o, c, plane, inv] {
        const auto& g = grad_ref(o);
        auto& gx = grad_ref_mut(x);
        for (int ch = 0; ch < c; ++ch) {
          T gv = g.v[static_cast<std::size_t>(ch)] * inv;
          T* p = gx.v.data() + static_cast<std::size_t>(ch) * plane;
          for (std::size_t i = 0; i < plane; ++i) p[i] += gv;
        }
      });
    return o;
  }

  Var linear(Var x, Var w, Var b) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    require(xv.rank() == 1 && wv.rank() == 2 && wv.dim(1) == xv.dim(0), Errc::shape_mismatch,
            "linear: want [N], [M,N]");
    const int m = wv.dim(0), n = wv.dim(1);
    BasicTensor<T> out({m});
    for (int i = 0; i < m; ++i) {
      const T* row = wv.v.data() + static_cast<std::size_t>(i) * n;
      T acc = b.valid() ? val(b).v[static_cast<std::size_t>(i)] : T(0);
      for (int j = 0; j < n; ++j) acc += row[static_cast<std::size_t>(j)] * xv.v[static_cast<std::size_t>(j)];
      out.v[static_cast<std::size_t>(i)] = acc;
    }
    bool ng = needs_grad(x) || needs_grad(w) || (b.valid() && needs_grad(b));
    Var o = make_like(std::move(out), ng);
    if (needs_grad(o))
      record([this, x, w, b, o, m, n] {
        const auto& g = grad_ref(o);
        const auto& xv2 = val(x);
        const auto& wv2 = val(w);
        if (needs_grad(x)) {
          auto& gx = grad_ref_mut(x);
          for (int i = 0; i < m; ++i) {
            T gv = g.v[static_cast<std::size_t>(i)];
            const T* row = wv2.v.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) gx.v[static_cast<std::size_t>(j)] += gv * row[static_cast<std::size_t>(j)];
          }
        }
        if (needs_grad(w)) {
          auto& gw = grad_ref_mut(w);
          for (int i = 0; i < m; ++i) {
            T gv = g.v[static_cast<std::size_t>(i)];
            T* row = gw.v.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] += gv * xv2.v[static_cast<std::size_t>(j)];
          }
        }
        if (b.valid() && needs_grad(b)) {
          auto& gb = grad_ref_mut(b);
          for (int i = 0; i < m; ++i) gb.v[static_cast<std::size_t>(i)] += g.v[static_cast<std::size_t>(i)];
        }
      });
    return o;
  }

  // ---- convolution (reflect-101 same padding, odd kernel) ----

  Var conv2d(Var x, Var w, Var b) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    require(xv.rank() == 3 && wv.rank() == 4, Errc::shape_mismatch, "conv2d: want [C,H,W], [Co,Ci,k,k]");
    require(wv.dim(1) == xv.dim(0), Errc::shape_mismatch, "conv2d: input channel mismatch");
    require(wv.dim(2) == wv.dim(3) && wv.dim(2) % 2 == 1, Errc::invalid_argument,
            "conv2d: kernel must be square and odd");
    const int ci = xv.dim(0), h = xv.dim(1), wdt = xv.dim(2);
    const int co = wv.dim(0), k = wv.dim(2), r = k / 2;

    std::vector<int> my(static_cast<std::size_t>(k) * h), mx(static_cast<std::size_t>(k) * wdt);
    for (int ky = 0; ky < k; ++ky)
      for (int y = 0; y < h; ++y) my[static_cast<std::size_t>(ky) * h + y] = mirror_index(y + ky - r, h);
    for (int kx = 0; kx < k; ++kx)
      for (int xx = 0; xx < wdt; ++xx)
        mx[static_cast<std::size_t>(kx) * wdt + xx] = mirror_index(xx + kx - r, wdt);

    const std::size_t plane = static_cast<std::size_t>(h) * wdt;
    BasicTensor<T> out({co, h, wdt});
    const T* xp = xv.v.data();
    const T* wp = wv.v.data();
    const T* bp = b.valid() ? val(b).v.data() : nullptr;
    T* op = out.v.data();

    parallel_for(co, [&](int oc) {
      T* oplane = op + static_cast<std::size_t>(oc) * plane;
      T bias = bp ? bp[oc] : T(0);
      for (std::size_t i = 0; i < plane; ++i) oplane[i] = bias;
      for (int c = 0; c < ci; ++c) {
        const T* xplane = xp + static_cast<std::size_t>(c) * plane;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            T wgt = wp[((static_cast<std::size_t>(oc) * ci + c) * k + ky) * k + kx];
            if (wgt == T(0)) continue;
            const int lo = std::max(0, r - kx), hi = std::min(wdt, wdt + r - kx);
            const int shift = kx - r;
            const int* mxr = mx.data() + static_cast<std::size_t>(kx) * wdt;
            for (int y = 0; y < h; ++y) {
              const T* xrow = xplane + static_cast<std::size_t>(my[static_cast<std::size_t>(ky) * h + y]) * wdt;
              T* orow = oplane + static_cast<std::size_t>(y) * wdt;
              for (int xx = 0; xx < lo; ++xx) orow[xx] += wgt * xrow[mxr[xx]];
              const T* xs = xrow + shift;
              for (int xx = lo; xx < hi; ++xx) orow[xx] += wgt * xs[xx];
              for (int xx = hi; xx < wdt; ++xx) orow[xx] += wgt * xrow[mxr[xx]];
            }
          }
      }
    }, 8);

    bool ng = needs_grad(x) || needs_grad(w) || (b.valid() && needs_grad(b));
    Var o = make_like(std::move(out), ng);
    if (needs_grad(o))
      record([this, x, w, b, o, ci, h, wdt, co, k, r, my, mx, plane] {
        const auto& g = grad_ref(o);
        const auto& xv2 = val(x);
        const auto& wv2 = val(w);
        const T* gp = g.v.data();
        if (b.valid() && needs_grad(b)) {
          auto& gb = grad_ref_mut(b);
          for (int oc = 0; oc < co; ++oc) {
            const T* gplane = gp + static_cast<std::size_t>(oc) * plane;
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += gplane[i];
            gb.v[static_cast<std::size_t>(oc)] += acc;
          }
        }
        if (needs_grad(w)) {
          auto& gw = grad_ref_mut(w);
          T* gwp = gw.v.data();
          const T* xp2 = xv2.v.data();
          parallel_for(co, [&](int oc) {
            const T* gplane = gp + static_cast<std::size_t>(oc) * plane;
            for (int c = 0; c < ci; ++c) {
              const T* xplane = xp2 + static_cast<std::size_t>(c) * plane;
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const int lo = std::max(0, r - kx), hi = std::min(wdt, wdt + r - kx);
                  const int shift = kx - r;
                  const int* mxr = mx.data() + static_cast<std::size_t>(kx) * wdt;
                  T acc = T(0);
                  for (int y = 0; y < h; ++y) {
                    const T* xrow =
                        xplane + static_cast<std::size_t>(my[static_cast<std::size_t>(ky) * h + y]) * wdt;
                    const T* grow = gplane + static_cast<std::size_t>(y) * wdt;
                    for (int xx = 0; xx < lo; ++xx) acc += grow[xx] * xrow[mxr[xx]];
                    const T* xs = xrow + shift;
                    for (int xx = lo; xx < hi; ++xx) acc += grow[xx] * xs[xx];
                    for (int xx = hi; xx < wdt; ++xx) acc += grow[xx] * xrow[mxr[xx]];
                  }
                  gwp[((static_cast<std::size_t>(oc) * ci + c) * k + ky) * k + kx] += acc;
                }
            }
          }, 8);
        }
        if (needs_grad(x)) {
          auto& gx = grad_ref_mut(x);
          T* gxp = gx.v.data();
          const T* wp2 = wv2.v.data();
          parallel_for(ci, [&](int c) {
            T* gxplane = gxp + static_cast<std::size_t>(c) * plane;
            for (int oc = 0; oc < co; ++oc) {
              const T* gplane = gp + static_cast<std::size_t>(oc) * plane;
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  T wgt = wp2[((static_cast<std::size_t>(oc) * ci + c) * k + ky) * k + kx];
                  if (wgt == T(0)) continue;
                  const int lo = std::max(0, r - kx), hi = std::min(wdt, wdt + r - kx);
                  const int shift = kx - r;
                  const int* mxr = mx.data() + static_cast<std::size_t>(kx) * wdt;
                  for (int y = 0; y < h; ++y) {
                    T* xrow =
                        gxplane + static_cast<std::size_t>(my[static_cast<std::size_t>(ky) * h + y]) * wdt;
                    const T* grow = gplane + static_cast<std::size_t>(y) * wdt;
                    for (int xx = 0; xx < lo; ++xx) xrow[mxr[xx]] += wgt * grow[xx];
                    T* xs = xrow + shift;
                    for (int xx = lo; xx < hi; ++xx) xs[xx] += wgt * grow[xx];
                    for (int xx = hi; xx < wdt; ++xx) xrow[mxr[xx]] += wgt * grow[xx];
                  }
                }
            }
          }, 8);
        }
      });
    return o;
  }

  // ---- batch normalization (no learnable affine) ----

  // Training mode normalizes with per-channel statistics over H,W and
  // updates the running buffers in place (momentum on the fresh batch);
  // inference mode uses the running buffers.
  Var batch_norm(Var x, BnStats<T> stats, bool training, T momentum = T(0.1), T eps = T(1e-5)) {
    const auto& xv = val(x);
    require(xv.rank() == 3, Errc::shape_mismatch, "batch_norm: want [C,H,W]");
    const int c = xv.dim(0);
    require(stats.mean && stats.var && stats.mean->dim(0) == c && stats.var->dim(0) == c,
            Errc::shape_mismatch, "batch_norm: bad running stats");
    const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
    const T invn = T(1) / static_cast<T>(plane);

    BasicTensor<T> out(xv.shape);
    BasicTensor<T> inv_std({c});
    BasicTensor<T> batch_mean({c});
    if (training) {
      for (int ch = 0; ch < c; ++ch) {
        const T* p = xv.v.data() + static_cast<std::size_t>(ch) * plane;
        T mean = T(0);
        for (std::size_t i = 0; i < plane; ++i) mean += p[i];
        mean *= invn;
        T var = T(0);
        for (std::size_t i = 0; i < plane; ++i) {
          T d = p[i] - mean;
          var += d * d;
        }
        var *= invn;
        T istd = T(1) / std::sqrt(var + eps);
        batch_mean.v[static_cast<std::size_t>(ch)] = mean;
        inv_std.v[static_cast<std::size_t>(ch)] = istd;
        T* q = out.v.data() + static_cast<std::size_t>(ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) q[i] = (p[i] - mean) * istd;
        stats.mean->v[static_cast<std::size_t>(ch)] =
            (T(1) - momentum) * stats.mean->v[static_cast<std::size_t>(ch)] + momentum * mean;
        stats.var->v[static_cast<std::size_t>(ch)] =
            (T(1) - momentum) * stats.var->v[static_cast<std::size_t>(ch)] + momentum * var;
      }
    } else {
      for (int ch = 0; ch < c; ++ch) {
        T mean = stats.mean->v[static_cast<std::size_t>(ch)];
        T istd = T(1) / std::sqrt(stats.var->v[static_cast<std::size_t>(ch)] + eps);
        inv_std.v[static_cast<std::size_t>(ch)] = istd;
        const T* p = xv.v.data() + static_cast<std::size_t>(ch) * plane;
        T* q = out.v.data() + static_cast<std::size_t>(ch) * plane;
        for (std::size_t i = 0; i < plane; ++i) q[i] = (p[i] - mean) * istd;
      }
    }

    Var o = make_like(std::move(out), needs_grad(x));
    if (needs_grad(o)) {
      if (training) {
        record([this, x, o, c, plane, invn, inv_std] {
          const auto& g = grad_ref(o);
          const auto& xhat = val(o);
          auto& gx = grad_ref_mut(x);
          for (int ch = 0; ch < c; ++ch) {
            const T* gp = g.v.data() + static_cast<std::size_t>(ch) * plane;
            const T* hp = xhat.v.data() + static_cast<std::size_t>(ch) * plane;
            T* q = gx.v.data() + static_cast<std::size_t>(ch) * plane;
            T gmean = T(0), gdot = T(0);
            for (std::size_t i = 0; i < plane; ++i) {
              gmean += gp[i];
              gdot += gp[i] * hp[i];
            }
            gmean *= invn;
            gdot *= invn;
            T istd = inv_std.v[static_cast<std::size_t>(ch)];
            for (std::size_t i = 0; i < plane; ++i) q[i] += istd * (gp[i] - gmean - hp[i] * gdot);
          }
        });
      } else {
        record([this, x, o, c, plane, inv_std] {
          const auto& g = grad_ref(o);
          auto& gx = grad_ref_mut(x);
          for (int ch = 0; ch < c; ++ch) {
            const T* gp = g.v.data() + static_cast<std::size_t>(ch) * plane;
            T* q = gx.v.data() + static_cast<std::size_t>(ch) * plane;
            T istd = inv_std.v[static_cast<std::size_t>(ch)];
            for (std::size_t i = 0; i < plane; ++i) q[i] += istd * gp[i];
          }
        });
      }
    }
    return o;
  }

  // ---- reductions ----

  Var mse(Var a, Var b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    check_same_shape(av, bv, "mse");
    const T invn = T(1) / static_cast<T>(av.v.size());
    T acc = T(0);
    for (std::size_t i = 0; i < av.v.size(); ++i) {
      T d = av.v[i] - bv.v[i];
      acc += d * d;
    }
    BasicTensor<T> out({1});
    out.v[0] = acc * invn;
    Var o = make_like(std::move(out), needs_grad(a) || needs_grad(b));
    if (needs_grad(o))
      record([this, a, b, o, invn] {
        T g = grad_ref(o).v[0];
        const auto& av2 = val(a);
        const auto& bv2 = val(b);
        T c = T(2) * invn * g;
        if (needs_grad(a)) {
          auto& ga = grad_ref_mut(a);
          for (std::size_t i = 0; i < av2.v.size(); ++i) ga.v[i] += c * (av2.v[i] - bv2.v[i]);
        }
        if (needs_grad(b)) {
          auto& gb = grad_ref_mut(b);
          for (std::size_t i = 0; i < av2.v.size(); ++i) gb.v[i] -= c * (av2.v[i] - bv2.v[i]);
        }
      });
    return o;
  }

  Var l1(Var a, Var b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    check_same_shape(av, bv, "l1");
    const T invn = T(1) / static_cast<T>(av.v.size());
    T acc = T(0);
    for (std::size_t i = 0; i < av.v.size(); ++i) acc += std::abs(av.v[i] - bv.v[i]);
    BasicTensor<T> out({1});
    out.v[0] = acc * invn;
    Var o = make_like(std::move(out), needs_grad(a) || needs_grad(b));
    if (needs_grad(o))
      record([this, a, b, o, invn] {
        T g = grad_ref(o).v[0] * invn;
        const auto& av2 = val(a);
        const auto& bv2 = val(b);
        if (needs_grad(a)) {
          auto& ga = grad_ref_mut(a);
          for (std::size_t i = 0; i < av2.v.size(); ++i) {
            T d = av2.v[i] - bv2.v[i];
            ga.v[i] += g * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)));
          }
        }
        if (needs_grad(b)) {
          auto& gb = grad_ref_mut(b);
          for (std::size_t i = 0; i < av2.v.size(); ++i) {
            T d = av2.v[i] - bv2.v[i];
            gb.v[i] -= g * (d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)));
          }
        }
      });
    return o;
  }

  Var sum_sq(Var a) {
    const auto& av = val(a);
    T acc = T(0);
    for (T x : av.v) acc += x * x;
    BasicTensor<T> out({1});
    out.v[0] = acc;
    Var o = make_like(std::move(out), needs_grad(a));
    if (needs_grad(o))
      record([this, a, o] {
        T g = grad_ref(o).v[0];
        const auto& av2 = val(a);
        auto& ga = grad_ref_mut(a);
        for (std::size_t i = 0; i < av2.v.size(); ++i) ga.v[i] += T(2) * g * av2.v[i];
      });
    return o;
  }

  // Mean absolute value over the concatenation of several tensors.
  Var mean_abs_multi(const std::vector<Var>& xs) {
    require(!xs.empty(), Errc::invalid_argument, "mean_abs_multi: empty input");
    std::size_t total = 0;
    for (Var v : xs) total += val(v).v.size();
    T acc = T(0);
    bool ng = false;
    for (Var v : xs) {
      for (T x : val(v).v) acc += std::abs(x);
      ng = ng || needs_grad(v);
    }
    BasicTensor<T> out({1});
    out.v[0] = acc / static_cast<T>(total);
    Var o = make_like(std::move(out), ng);
    if (needs_grad(o))
      record([this, xs, o, total] {
        T g = grad_ref(o).v[0] / static_cast<T>(total);
        for (Var v : xs) {
          if (!needs_grad(v)) continue;
          const auto& xv = val(v);
          auto& gv = grad_ref_mut(v);
          for (std::size_t i = 0; i < xv.v.size(); ++i)
            gv.v[i] += g * (xv.v[i] > T(0) ? T(1) : (xv.v[i] < T(0) ? T(-1) : T(0)));
        }
      });
    return o;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    bool needs_grad = false;
  };

  Var make_node(BasicTensor<T> value, bool needs_grad) {
    Node n;
    n.needs_grad = needs_grad;
    if (needs_grad) n.grad = BasicTensor<T>(value.shape);
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var make_like(BasicTensor<T> value, bool needs_grad) { return make_node(std::move(value), needs_grad); }

  void record(std::function<void()> fn) { backops_.push_back(std::move(fn)); }

  const BasicTensor<T>& grad_ref(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }
  BasicTensor<T>& grad_ref_mut(Var v) { return nodes_[static_cast<std::size_t>(v.id)].grad; }

  void accumulate(Var v, const T* g) {
    auto& gv = grad_ref_mut(v);
    for (std::size_t i = 0; i < gv.v.size(); ++i) gv.v[i] += g[i];
  }

  std::vector<Node> nodes_;
  std::vector<std::function<void()>> backops_;
};

}  // namespace ssr
