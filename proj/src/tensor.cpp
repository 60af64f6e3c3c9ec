#include "pyrd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pyrd/errors.hpp"

namespace pyrd {

Tensor4::Tensor4(int n_, int c_, int h_, int w_, float fill_value)
    : n(n_), c(c_), h(h_), w(w_) {
  if (n < 1 || c < 1 || h < 1 || w < 1) {
    std::ostringstream os;
    os << "tensor dims must all be >= 1, got (" << n_ << ", " << c_ << ", " << h_
       << ", " << w_ << ")";
    throw ConfigError(os.str());
  }
  data.assign(static_cast<std::size_t>(n) * c * h * w, fill_value);
}

void Tensor4::fill(float v) { std::fill(data.begin(), data.end(), v); }

bool Tensor4::all_finite() const {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double Tensor4::sum() const {
  double acc = 0.0;
  for (float v : data) acc += v;
  return acc;
}

std::string Tensor4::dims_str() const {
  std::ostringstream os;
  os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

Tensor4 zeros_like(const Tensor4& t) { return Tensor4(t.n, t.c, t.h, t.w, 0.0f); }

}  // namespace pyrd
