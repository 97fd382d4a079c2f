#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ssr/core/error.hpp"

namespace ssr {

// Dense row-major tensor. Rank up to 4 is what the file format and the
// pipeline use; nothing in here enforces a hard cap beyond indexing helpers.
template <typename T>
struct BasicTensor {
  std::vector<int> shape;
  std::vector<T> v;

  BasicTensor() = default;
  explicit BasicTensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), T(0)) {}
  BasicTensor(std::vector<int> s, T fill) : shape(std::move(s)), v(count(shape), fill) {}

  static BasicTensor zeros(std::vector<int> s) { return BasicTensor(std::move(s)); }
  static BasicTensor full(std::vector<int> s, T value) { return BasicTensor(std::move(s), value); }

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      require(d >= 1, Errc::invalid_argument, "tensor dims must be >= 1");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  int rank() const { return static_cast<int>(shape.size()); }
  std::size_t numel() const { return v.size(); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& operator()(int i) { return v[static_cast<std::size_t>(i)]; }
  T operator()(int i) const { return v[static_cast<std::size_t>(i)]; }
  T& operator()(int i, int j) { return v[static_cast<std::size_t>(i) * shape[1] + j]; }
  T operator()(int i, int j) const { return v[static_cast<std::size_t>(i) * shape[1] + j]; }
  T& operator()(int i, int j, int k) {
    return v[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  T operator()(int i, int j, int k) const {
    return v[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  T& operator()(int i, int j, int k, int l) {
    return v[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  T operator()(int i, int j, int k, int l) const {
    return v[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  bool same_shape(const BasicTensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
  }

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

using Tensor = BasicTensor<float>;

template <typename T>
inline void check_same_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* what) {
  require(a.same_shape(b), Errc::shape_mismatch,
          std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace ssr
