#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pyrd/density.hpp"
#include "pyrd/network.hpp"
#include "pyrd/tensor.hpp"

namespace pyrd {

// Whole-image inference: zero-pads right/bottom to multiples of 4, runs the
// pyramid, crops to (ceil(h/4), ceil(w/4)) and divides by density_scale so
// the returned map integrates to the predicted count.
DensityMap predict_full(PyramidModel& model, const Tensor4& image,
                        double density_scale = 100.0);

// Counting metrics over (gt, predicted) count pairs.
double mae(const std::vector<std::pair<double, double>>& pairs);
double mse(const std::vector<std::pair<double, double>>& pairs);
double rmse(const std::vector<std::pair<double, double>>& pairs);

struct EvalRow {
  std::string image;
  double gt = 0.0;
  double pred = 0.0;
};

struct EvalSummary {
  double mae = 0.0;
  double mse = 0.0;
  double rmse = 0.0;
};
EvalSummary summarize(const std::vector<EvalRow>& rows);

// Median throughput of predict_full on a zero image of the given dims.
// Warm-up runs are excluded from the timing.
double benchmark_fps(PyramidModel& model, int h, int w, int n_runs, int warmup = 1);

}  // namespace pyrd
