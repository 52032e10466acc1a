#pragma once

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "aod/common.hpp"
#include "aod/rng.hpp"

namespace aod {

// Dense row-major array of doubles with shape metadata. 64-bit values keep
// the finite-difference oracles meaningful; define AOD_REAL_FLOAT to trade
// precision for speed in long training runs.
#ifdef AOD_REAL_FLOAT
using real_t = float;
#else
using real_t = double;
#endif

struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(numel_of(shape), 0.0) {}
  Tensor(std::vector<int> s, std::vector<double> values)
      : shape(std::move(s)), v(std::move(values)) {
    if (static_cast<std::size_t>(numel_of(shape)) != v.size()) {
      throw ShapeError("Tensor: value count does not match shape");
    }
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int e : s) {
      if (e <= 0) throw ShapeError("Tensor: extents must be positive");
      n *= static_cast<std::size_t>(e);
    }
    return n;
  }

  std::size_t numel() const { return v.size(); }

  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }

  // 3-d (c,h,w) accessors for feature maps and images.
  double& at3(int c, int y, int x) {
    return v[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  double at3(int c, int y, int x) const {
    return v[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  void fill(double value) { std::fill(v.begin(), v.end(), value); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double x : v) {
      if (!is_finite(x)) return false;
    }
    return true;
  }

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape); }

  static Tensor gaussian(std::vector<int> s, double stddev, Rng& rng) {
    Tensor t(std::move(s));
    for (double& x : t.v) x = rng.normal(0.0, stddev);
    return t;
  }

  bool operator==(const Tensor&) const = default;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": shape mismatch");
}

// A trainable value with its gradient accumulator and momentum buffer. The
// gradient is zeroed by sgd_step after each update.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor velocity;

  Parameter() = default;
  Parameter(std::string n, Tensor init)
      : name(std::move(n)), value(std::move(init)), grad(value.shape), velocity(value.shape) {}
};

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace aod
