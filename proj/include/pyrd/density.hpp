#pragma once

#include <array>
#include <string>
#include <vector>

namespace pyrd {

// Head positions (x, y) in pixel coordinates for one image.
struct PointAnnotations {
  std::vector<std::array<float, 2>> points;
  int h = 0;
  int w = 0;
};

// Non-negative grid whose integral equals the annotated object count.
// scale_factor 1 is full resolution, 4 the sum-pooled training target grid.
struct DensityMap {
  int h = 0;
  int w = 0;
  int scale_factor = 1;
  std::vector<double> grid;

  DensityMap() = default;
  DensityMap(int h_, int w_, int scale_factor_ = 1)
      : h(h_), w(w_), scale_factor(scale_factor_),
        grid(static_cast<std::size_t>(h_) * w_, 0.0) {}

  double& at(int y, int x) { return grid[static_cast<std::size_t>(y) * w + x]; }
  double at(int y, int x) const { return grid[static_cast<std::size_t>(y) * w + x]; }
  double total() const;
};

struct AdaptiveKernelOptions {
  int k = 5;
  double beta = 0.3;
  double sigma_fallback = 15.0;  // used when an image has fewer than 2 points
  double sigma_min = 1.0;
  double sigma_max = 25.0;
};

// Isotropic Gaussian per point, truncated to a (2*ceil(4*sigma)+1)^2 window
// clipped to the image and renormalized over the clipped window, so every
// person contributes exactly mass 1.
DensityMap generate_fixed(const PointAnnotations& ann, double sigma);

// Per-point sigma = beta * (mean distance to the k nearest other points),
// clamped to [sigma_min, sigma_max]; fewer than k neighbours use the mean
// over those available, and a lone point falls back to sigma_fallback.
DensityMap generate_adaptive(const PointAnnotations& ann,
                             const AdaptiveKernelOptions& opt = {});

// The per-point sigmas the adaptive mode would use (exposed for inspection).
std::vector<double> adaptive_sigmas(const PointAnnotations& ann,
                                    const AdaptiveKernelOptions& opt = {});

// Mean Euclidean distance from each point to its k nearest other points.
// Needs at least 2 points. With fewer than k other points, averages over
// all of them.
std::vector<double> knn_distances(const std::vector<std::array<float, 2>>& points, int k);

// Non-overlapping 4x4 block sums; pads with zeros on the right/bottom when
// dims are not multiples of 4. Conserves total mass.
DensityMap sum_pool_4(const DensityMap& d);

}  // namespace pyrd
