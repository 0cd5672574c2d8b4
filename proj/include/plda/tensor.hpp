#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace plda {

using real = double;

/// Dense row-major tensor. Rank is dynamic; indexing helpers cover the
/// ranks used in practice (1..4).
struct Tensor {
  std::vector<int> shape;
  std::vector<real> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, real fill = 0) : shape(std::move(s)) {
    v.assign(static_cast<size_t>(numel_of(shape)), fill);
  }

  static std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  static Tensor from(std::vector<int> s, std::vector<real> data) {
    Tensor t;
    t.shape = std::move(s);
    if (static_cast<std::int64_t>(data.size()) != numel_of(t.shape))
      throw std::invalid_argument("tensor: data size does not match shape");
    t.v = std::move(data);
    return t;
  }

  static Tensor scalar(real x) { return from({1}, {x}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  real& at(int i) { return v[static_cast<size_t>(i)]; }
  real at(int i) const { return v[static_cast<size_t>(i)]; }
  // [C,H,W]
  real& at(int c, int y, int x) {
    return v[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
  }
  real at(int c, int y, int x) const {
    return v[(static_cast<size_t>(c) * dim(1) + y) * dim(2) + x];
  }
  // [N,K]
  real& at2(int i, int j) { return v[static_cast<size_t>(i) * dim(1) + j]; }
  real at2(int i, int j) const { return v[static_cast<size_t>(i) * dim(1) + j]; }

  void fill(real x) { std::fill(v.begin(), v.end(), x); }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

/// Thrown for invalid user-facing configuration (bad thresholds, bad spec
/// fields, malformed config files). The message names the offending field.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace plda
