#include "pyrd/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>

#include "pyrd/errors.hpp"
#include "pyrd/ops.hpp"

namespace pyrd {

DensityMap predict_full(PyramidModel& model, const Tensor4& image, double density_scale) {
  if (image.n != 1 || image.c != 1) {
    throw ConfigError("predict_full expects a (1,1,h,w) image, got " + image.dims_str());
  }
  if (!(density_scale > 0.0)) throw ConfigError("density_scale must be > 0");

  const int ph = (image.h + 3) / 4 * 4;
  const int pw = (image.w + 3) / 4 * 4;
  Tensor4 padded = image;
  if (ph != image.h || pw != image.w) {
    padded = Tensor4(1, 1, ph, pw);
    for (int y = 0; y < image.h; ++y) {
      std::memcpy(&padded.data[padded.index(0, 0, y, 0)], &image.data[image.index(0, 0, y, 0)],
                  static_cast<std::size_t>(image.w) * sizeof(float));
    }
  }

  const PyramidOutput out = forward_pyramid(model, padded, nullptr);
  const int oh = (image.h + 3) / 4;
  const int ow = (image.w + 3) / 4;
  DensityMap d(oh, ow, 4);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      d.at(y, x) = static_cast<double>(out.fused.at(0, 0, y, x)) / density_scale;
    }
  }
  return d;
}

namespace {

void check_pairs(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.empty()) throw InputError("metrics need at least one (gt, pred) pair");
}

}  // namespace

double mae(const std::vector<std::pair<double, double>>& pairs) {
  check_pairs(pairs);
  double acc = 0.0;
  for (const auto& [gt, pred] : pairs) acc += std::abs(pred - gt);
  return acc / static_cast<double>(pairs.size());
}

double mse(const std::vector<std::pair<double, double>>& pairs) {
  check_pairs(pairs);
  double acc = 0.0;
  for (const auto& [gt, pred] : pairs) acc += (pred - gt) * (pred - gt);
  return acc / static_cast<double>(pairs.size());
}

double rmse(const std::vector<std::pair<double, double>>& pairs) {
  return std::sqrt(mse(pairs));
}

EvalSummary summarize(const std::vector<EvalRow>& rows) {
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(rows.size());
  for (const EvalRow& r : rows) pairs.emplace_back(r.gt, r.pred);
  EvalSummary s;
  s.mae = mae(pairs);
  s.mse = mse(pairs);
  s.rmse = std::sqrt(s.mse);
  return s;
}

double benchmark_fps(PyramidModel& model, int h, int w, int n_runs, int warmup) {
  if (n_runs < 1) throw InputError("benchmark needs n_runs >= 1");
  const Tensor4 image(1, 1, h, w);
  for (int i = 0; i < warmup; ++i) {
    (void)predict_full(model, image);
  }
  std::vector<double> secs(n_runs);
  for (int i = 0; i < n_runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)predict_full(model, image);
    const auto t1 = std::chrono::steady_clock::now();
    secs[i] = std::chrono::duration<double>(t1 - t0).count();
  }
  std::nth_element(secs.begin(), secs.begin() + n_runs / 2, secs.end());
  const double median = secs[n_runs / 2];
  return median > 0.0 ? 1.0 / median : 0.0;
}

}  // namespace pyrd
