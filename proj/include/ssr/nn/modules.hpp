#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ssr/core/rng.hpp"
#include "ssr/core/tensor_io.hpp"
#include "ssr/nn/tape.hpp"

namespace ssr {

// Fills a [Co, Ci, k, k] or [M, N] tensor with a (semi-)orthogonal matrix
// over its flattened trailing dimensions, scaled by gain.
template <typename T>
inline void orthogonal_fill(BasicTensor<T>& w, RngStream& rng, T gain) {
  const int n = w.dim(0);
  const int m = static_cast<int>(w.numel()) / n;
  std::vector<double> a(w.numel());
  for (double& x : a) x = rng.normal();

  // Modified Gram-Schmidt over the smaller set of vectors.
  auto orthonormalize = [&](int count, int len, auto get, auto set) {
    for (int i = 0; i < count; ++i) {
      for (int j = 0; j < i; ++j) {
        double dot = 0;
        for (int l = 0; l < len; ++l) dot += get(i, l) * get(j, l);
        for (int l = 0; l < len; ++l) set(i, l, get(i, l) - dot * get(j, l));
      }
      double norm = 0;
      for (int l = 0; l < len; ++l) norm += get(i, l) * get(i, l);
      norm = std::sqrt(norm);
      if (norm < 1e-12) norm = 1.0;
      for (int l = 0; l < len; ++l) set(i, l, get(i, l) / norm);
    }
  };

  if (n <= m) {
    orthonormalize(
        n, m, [&](int i, int l) { return a[static_cast<std::size_t>(i) * m + l]; },
        [&](int i, int l, double v) { a[static_cast<std::size_t>(i) * m + l] = v; });
  } else {
    orthonormalize(
        m, n, [&](int i, int l) { return a[static_cast<std::size_t>(l) * m + i]; },
        [&](int i, int l, double v) { a[static_cast<std::size_t>(l) * m + i] = v; });
  }
  for (std::size_t i = 0; i < w.numel(); ++i) w.v[i] = static_cast<T>(a[i]) * gain;
}

// Named parameters with gradients and Adam state, plus non-learnable
// buffers (batch-norm running statistics). std::map keeps iteration order
// deterministic.
template <typename T>
struct ParamStore {
  struct Entry {
    BasicTensor<T> value, grad, m, v;
  };
  std::map<std::string, Entry> params;
  std::map<std::string, BasicTensor<T>> buffers;
  std::string config_hash;

  BasicTensor<T>& declare(const std::string& name, std::vector<int> shape) {
    auto it = params.find(name);
    if (it != params.end()) {
      require(it->second.value.shape == shape, Errc::shape_mismatch,
              "param redeclared with different shape: " + name);
      return it->second.value;
    }
    Entry e;
    e.value = BasicTensor<T>(shape);
    e.grad = BasicTensor<T>(shape);
    e.m = BasicTensor<T>(shape);
    e.v = BasicTensor<T>(std::move(shape));
    return params.emplace(name, std::move(e)).first->second.value;
  }

  BasicTensor<T>& buffer(const std::string& name, std::vector<int> shape, T fill = T(0)) {
    auto it = buffers.find(name);
    if (it != buffers.end()) return it->second;
    return buffers.emplace(name, BasicTensor<T>(std::move(shape), fill)).first->second;
  }

  BasicTensor<T>& param(const std::string& name) {
    auto it = params.find(name);
    require(it != params.end(), Errc::invalid_argument, "unknown param: " + name);
    return it->second.value;
  }

  void zero_grads() {
    for (auto& [_, e] : params) std::fill(e.grad.v.begin(), e.grad.v.end(), T(0));
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& [_, e] : params) n += e.value.numel();
    return n;
  }

  bool all_finite() const {
    for (const auto& [_, e] : params)
      for (T x : e.value.v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  void adam_step(T lr, int t, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8)) {
    T c1 = T(1) - std::pow(beta1, static_cast<T>(t));
    T c2 = T(1) - std::pow(beta2, static_cast<T>(t));
    for (auto& [_, e] : params) {
      for (std::size_t i = 0; i < e.value.v.size(); ++i) {
        T g = e.grad.v[i];
        e.m.v[i] = beta1 * e.m.v[i] + (T(1) - beta1) * g;
        e.v.v[i] = beta2 * e.v.v[i] + (T(1) - beta2) * g * g;
        T mhat = e.m.v[i] / c1;
        T vhat = e.v.v[i] / c2;
        e.value.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  // Checkpoint: key=value manifest plus one ".tnsr" per parameter/buffer.
  void save(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream mf(dir + "/manifest.txt");
    require(mf.good(), Errc::io_unwritable, "checkpoint: cannot write manifest in " + dir);
    mf << "config_hash = " << config_hash << "\n";
    for (const auto& [name, e] : params) {
      std::string file = name + ".tnsr";
      mf << "param." << name << " = " << shape_csv(e.value.shape) << ";" << file << "\n";
      write_tensor(e.value.template cast<float>(), dir + "/" + file);
    }
    for (const auto& [name, b] : buffers) {
      std::string file = name + ".tnsr";
      mf << "buffer." << name << " = " << shape_csv(b.shape) << ";" << file << "\n";
      write_tensor(b.template cast<float>(), dir + "/" + file);
    }
  }

  void load(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.txt");
    require(mf.good(), Errc::missing_checkpoint, "checkpoint: no manifest in " + dir);
    std::string line;
    while (std::getline(mf, line)) {
      if (line.empty()) continue;
      auto eq = line.find(" = ");
      require(eq != std::string::npos, Errc::io_unsupported_format,
              "checkpoint: malformed manifest line: " + line);
      std::string key = line.substr(0, eq);
      std::string value = line.substr(eq + 3);
      if (key == "config_hash") {
        config_hash = value;
        continue;
      }
      auto semi = value.find(';');
      require(semi != std::string::npos, Errc::io_unsupported_format,
              "checkpoint: malformed manifest value: " + line);
      Tensor t = read_tensor(dir + "/" + value.substr(semi + 1));
      require(shape_csv(t.shape) == value.substr(0, semi), Errc::shape_mismatch,
              "checkpoint: payload shape differs from manifest for " + key);
      if (key.rfind("param.", 0) == 0) {
        std::string name = key.substr(6);
        auto it = params.find(name);
        if (it != params.end())
          require(it->second.value.shape == t.shape, Errc::shape_mismatch,
                  "checkpoint: shape mismatch for " + name);
        auto& val = declare(name, t.shape);
        val = t.template cast<T>();
      } else if (key.rfind("buffer.", 0) == 0) {
        buffers[key.substr(7)] = t.template cast<T>();
      } else {
        fail(Errc::io_unsupported_format, "checkpoint: unknown manifest key: " + key);
      }
    }
  }

  static std::string shape_csv(const std::vector<int>& s) {
    std::ostringstream os;
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    return os.str();
  }
};

// Per-forward binding of store parameters to tape leaves. Parameters are
// taped lazily and memoized; gradients are pulled back after backward().
template <typename T>
class Binding {
 public:
  Binding(Tape<T>& tape, ParamStore<T>& store, bool train) : tape_(&tape), store_(&store), train_(train) {}

  typename Tape<T>::Var operator()(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    auto var = tape_->leaf(store_->param(name), train_);
    vars_.emplace(name, var);
    return var;
  }

  bool training() const { return train_; }
  ParamStore<T>& store() { return *store_; }
  Tape<T>& tape() { return *tape_; }

  void pull_grads() {
    for (const auto& [name, var] : vars_) {
      const auto& g = tape_->grad(var);
      auto& dst = store_->params.at(name).grad;
      for (std::size_t i = 0; i < g.v.size(); ++i) dst.v[i] += g.v[i];
    }
  }

 private:
  Tape<T>* tape_;
  ParamStore<T>* store_;
  bool train_;
  std::map<std::string, typename Tape<T>::Var> vars_;
};

// ---- layer helpers ----

template <typename T>
struct Conv2dLayer {
  std::string name;
  int cin = 0, cout = 0, k = 3;
  bool bias = true;

  void init(ParamStore<T>& ps, RngStream& rng, T gain = T(1), bool zero = false) const {
    auto& w = ps.declare(name + ".w", {cout, cin, k, k});
    if (zero)
      std::fill(w.v.begin(), w.v.end(), T(0));
    else
      orthogonal_fill(w, rng, gain);
    if (bias) ps.declare(name + ".b", {cout});
  }

  typename Tape<T>::Var apply(Binding<T>& bd, typename Tape<T>::Var x) const {
    typename Tape<T>::Var b;
    if (bias) b = bd(name + ".b");
    return bd.tape().conv2d(x, bd(name + ".w"), b);
  }
};

template <typename T>
struct LinearLayer {
  std::string name;
  int in = 0, out = 0;
  bool bias = true;

  void init(ParamStore<T>& ps, RngStream& rng, T gain = T(1), bool zero = false) const {
    auto& w = ps.declare(name + ".w", {out, in});
    if (zero)
      std::fill(w.v.begin(), w.v.end(), T(0));
    else
      orthogonal_fill(w, rng, gain);
    if (bias) ps.declare(name + ".b", {out});
  }

  typename Tape<T>::Var apply(Binding<T>& bd, typename Tape<T>::Var x) const {
    typename Tape<T>::Var b;
    if (bias) b = bd(name + ".b");
    return bd.tape().linear(x, bd(name + ".w"), b);
  }
};

// Two-layer MLP with ReLU; the output layer is zero-initialized so the
// modulation it parameterizes starts as an identity.
template <typename T>
struct MlpLayer {
  LinearLayer<T> l1, l2;

  MlpLayer() = default;
  MlpLayer(const std::string& name, int in, int hidden, int out)
      : l1{name + ".l1", in, hidden, true}, l2{name + ".l2", hidden, out, true} {}

  void init(ParamStore<T>& ps, RngStream& rng, bool zero_out = true) const {
    l1.init(ps, rng);
    l2.init(ps, rng, T(1), zero_out);
  }

  typename Tape<T>::Var apply(Binding<T>& bd, typename Tape<T>::Var x) const {
    auto h = bd.tape().relu(l1.apply(bd, x));
    return l2.apply(bd, h);
  }
};

template <typename T>
struct BatchNormLayer {
  std::string name;
  int channels = 0;

  void init(ParamStore<T>& ps) const {
    ps.buffer(name + ".running_mean", {channels}, T(0));
    ps.buffer(name + ".running_var", {channels}, T(1));
  }

  typename Tape<T>::Var apply(Binding<T>& bd, typename Tape<T>::Var x, T momentum = T(0.1)) const {
    BnStats<T> st{&bd.store().buffers.at(name + ".running_mean"),
                  &bd.store().buffers.at(name + ".running_var")};
    return bd.tape().batch_norm(x, st, bd.training(), momentum);
  }
};

}  // namespace ssr
