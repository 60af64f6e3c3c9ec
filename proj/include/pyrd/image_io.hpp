#pragma once

#include <string>

#include "pyrd/density.hpp"
#include "pyrd/tensor.hpp"

namespace pyrd {

// Binary 8-bit PGM (P5). Pixels map to floats in [0, 1] (value / 255).
Tensor4 read_pgm(const std::string& path);
void write_pgm(const std::string& path, const Tensor4& image01);

// Max-normalized visualization of an arbitrary non-negative map.
void write_pgm_normalized(const std::string& path, const Tensor4& map);

// Plain CSV grid, one row per line.
void write_density_csv(const std::string& path, const DensityMap& d);
DensityMap read_density_csv(const std::string& path);

// {"image": name, "points": [[x, y], ...]}; dims are taken from the image
// the annotation belongs to, so the caller fills them in afterwards.
struct AnnotationFile {
  std::string image;
  std::vector<std::array<float, 2>> points;
};
AnnotationFile read_annotations(const std::string& path);
void write_annotations(const std::string& path, const AnnotationFile& ann);

}  // namespace pyrd
