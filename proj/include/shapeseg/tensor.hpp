#pragma once

// Minimal NCHW float tensor used by the network layers.

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace shapeseg {

struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0f) {}

  std::size_t size() const { return v.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }

  float* data() { return v.data(); }
  const float* data() const { return v.data(); }

  float& at(int b, int ch, int i, int j) {
    return v[((static_cast<std::size_t>(b) * c + ch) * h + i) * w + j];
  }
  float at(int b, int ch, int i, int j) const {
    return v[((static_cast<std::size_t>(b) * c + ch) * h + i) * w + j];
  }

  void zero() { std::fill(v.begin(), v.end(), 0.0f); }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

inline void add_into(Tensor& dst, const Tensor& src) {
  if (!dst.same_shape(src)) throw std::invalid_argument("add_into: shape mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) dst.v[i] += src.v[i];
}

}  // namespace shapeseg
