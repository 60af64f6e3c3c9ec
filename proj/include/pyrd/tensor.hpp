#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace pyrd {

// Dense row-major (n, c, h, w) array of 32-bit floats. Carrier for all
// network activations, parameters and gradients.
struct Tensor4 {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<float> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, float fill_value = 0.0f);

  std::size_t size() const { return data.size(); }
  std::array<int, 4> dims() const { return {n, c, h, w}; }
  bool same_dims(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  std::size_t index(int in, int ic, int iy, int ix) const {
    return ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix;
  }
  float& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
  float at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

  void fill(float v);
  void zero() { fill(0.0f); }
  bool all_finite() const;
  double sum() const;  // 64-bit accumulation

  std::string dims_str() const;
};

Tensor4 zeros_like(const Tensor4& t);

}  // namespace pyrd
