#include "pyrd/density.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pyrd/errors.hpp"

namespace pyrd {

double DensityMap::total() const {
  double acc = 0.0;
  for (double v : grid) acc += v;
  return acc;
}

namespace {

void check_points(const PointAnnotations& ann) {
  if (ann.h < 1 || ann.w < 1) throw InputError("annotation image dims must be >= 1");
  for (std::size_t i = 0; i < ann.points.size(); ++i) {
    const float x = ann.points[i][0];
    const float y = ann.points[i][1];
    if (!(x >= 0.0f && x < static_cast<float>(ann.w)) ||
        !(y >= 0.0f && y < static_cast<float>(ann.h))) {
      std::ostringstream os;
      os << "point " << i << " (" << x << ", " << y << ") outside image " << ann.w << "x"
         << ann.h;
      throw InputError(os.str());
    }
  }
}

// Adds one unit-mass Gaussian. The window is centred on the nearest pixel so
// integer shifts of interior points shift the stamped kernel identically.
void stamp_kernel(DensityMap& d, float px, float py, double sigma) {
  const int r = static_cast<int>(std::ceil(4.0 * sigma));
  const int cx = static_cast<int>(std::lround(px));
  const int cy = static_cast<int>(std::lround(py));
  const int x0 = std::max(0, cx - r), x1 = std::min(d.w - 1, cx + r);
  const int y0 = std::max(0, cy - r), y1 = std::min(d.h - 1, cy + r);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);

  double mass = 0.0;
  std::vector<double> values(static_cast<std::size_t>(y1 - y0 + 1) * (x1 - x0 + 1));
  std::size_t i = 0;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x, ++i) {
      const double dx = x - static_cast<double>(px);
      const double dy = y - static_cast<double>(py);
      const double v = std::exp(-(dx * dx + dy * dy) * inv2s2);
      values[i] = v;
      mass += v;
    }
  }
  i = 0;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x, ++i) {
      d.at(y, x) += values[i] / mass;
    }
  }
}

}  // namespace

DensityMap generate_fixed(const PointAnnotations& ann, double sigma) {
  if (!(sigma > 0.0)) throw InputError("sigma must be > 0");
  check_points(ann);
  DensityMap d(ann.h, ann.w, 1);
  for (const auto& p : ann.points) stamp_kernel(d, p[0], p[1], sigma);
  return d;
}

std::vector<double> knn_distances(const std::vector<std::array<float, 2>>& points, int k) {
  if (k < 1) throw InputError("k must be >= 1");
  if (points.size() < 2) throw InputError("knn_distances needs at least 2 points");
  const std::size_t n = points.size();
  std::vector<double> result(n);
  std::vector<double> dists;
  dists.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    dists.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = static_cast<double>(points[i][0]) - points[j][0];
      const double dy = static_cast<double>(points[i][1]) - points[j][1];
      dists.push_back(std::sqrt(dx * dx + dy * dy));
    }
    const std::size_t use = std::min<std::size_t>(k, dists.size());
    std::nth_element(dists.begin(), dists.begin() + (use - 1), dists.end());
    double acc = 0.0;
    for (std::size_t j = 0; j < use; ++j) acc += dists[j];
    result[i] = acc / static_cast<double>(use);
  }
  return result;
}

std::vector<double> adaptive_sigmas(const PointAnnotations& ann,
                                    const AdaptiveKernelOptions& opt) {
  if (opt.k < 1) throw InputError("k must be >= 1");
  check_points(ann);
  std::vector<double> sigmas(ann.points.size(), opt.sigma_fallback);
  if (ann.points.size() >= 2) {
    const std::vector<double> mean_d = knn_distances(ann.points, opt.k);
    for (std::size_t i = 0; i < sigmas.size(); ++i) sigmas[i] = opt.beta * mean_d[i];
  }
  for (double& s : sigmas) s = std::clamp(s, opt.sigma_min, opt.sigma_max);
  return sigmas;
}

DensityMap generate_adaptive(const PointAnnotations& ann, const AdaptiveKernelOptions& opt) {
  const std::vector<double> sigmas = adaptive_sigmas(ann, opt);
  DensityMap d(ann.h, ann.w, 1);
  for (std::size_t i = 0; i < ann.points.size(); ++i) {
    stamp_kernel(d, ann.points[i][0], ann.points[i][1], sigmas[i]);
  }
  return d;
}

DensityMap sum_pool_4(const DensityMap& d) {
  if (d.scale_factor != 1) throw InputError("sum_pool_4 expects a full-resolution map");
  const int oh = (d.h + 3) / 4;
  const int ow = (d.w + 3) / 4;
  DensityMap out(oh, ow, 4);
  for (int y = 0; y < d.h; ++y) {
    for (int x = 0; x < d.w; ++x) {
      out.at(y / 4, x / 4) += d.at(y, x);
    }
  }
  return out;
}

}  // namespace pyrd
