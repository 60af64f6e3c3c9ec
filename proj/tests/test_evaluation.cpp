#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "pyrd/errors.hpp"
#include "pyrd/evaluation.hpp"
#include "pyrd/training.hpp"
#include "reference_ops.hpp"

using namespace pyrd;

namespace {

NetworkConfig tiny_backbone() {
  return {"tiny-test",
          {LayerSpec::conv(6, 1, 5), LayerSpec::pool(), LayerSpec::conv(8, 6, 3),
           LayerSpec::pool(), LayerSpec::conv(10, 8, 3), LayerSpec::conv(6, 10, 3),
           LayerSpec::conv(1, 6, 3, Activation::Relu)}};
}

}  // namespace

TEST_CASE("zero image through a fusion-zeroed model counts zero") {
  PyramidModel model =
      make_pyramid_model(builtin_config("FCN-5c"), {1.0f, 0.7f}, FusionMode::Adaptive, 3);
  model.fusion->params.weights.zero();
  model.fusion->params.bias[0] = 0.0f;
  const Tensor4 image(1, 1, 60, 80);
  const DensityMap d = predict_full(model, image);
  CHECK(d.total() == 0.0);
}

TEST_CASE("predict_full output dims are ceil(h/4) x ceil(w/4)") {
  PyramidModel model = make_pyramid_model(tiny_backbone(), {1.0f, 0.7f}, FusionMode::Adaptive, 5);
  const DensityMap big = predict_full(model, Tensor4(1, 1, 768, 1024));
  CHECK(big.h == 192);
  CHECK(big.w == 256);
  CHECK(big.scale_factor == 4);

  const DensityMap odd = predict_full(model, Tensor4(1, 1, 61, 79));
  CHECK(odd.h == 16);
  CHECK(odd.w == 20);
}

TEST_CASE("predicted count is the sum of the returned map") {
  PyramidModel model = make_pyramid_model(tiny_backbone(), {1.0f}, FusionMode::Sum, 7);
  model.backbone.convs.back().params.bias[0] = 0.5f;  // force a nonzero density
  std::mt19937 rng(9);
  Tensor4 image(1, 1, 48, 48);
  ref::fill_uniform(image, rng, 0.0f, 1.0f);
  const DensityMap d = predict_full(model, image, 100.0);
  double acc = 0.0;
  for (double v : d.grid) acc += v;
  CHECK(d.total() == doctest::Approx(acc));
  CHECK(d.total() > 0.0);

  // density_scale divides the map: scale 1 map is 100x the scale 100 map.
  const DensityMap raw = predict_full(model, image, 1.0);
  CHECK(raw.total() == doctest::Approx(100.0 * d.total()).epsilon(1e-9));
}

TEST_CASE("metrics match hand arithmetic") {
  const std::vector<std::pair<double, double>> pairs = {{3.0, 4.0}, {5.0, 7.0}};
  CHECK(mae(pairs) == doctest::Approx(1.5));
  CHECK(mse(pairs) == doctest::Approx(2.5));
  CHECK(rmse(pairs) == doctest::Approx(std::sqrt(2.5)));

  const std::vector<std::pair<double, double>> exact = {{3.0, 3.0}, {7.5, 7.5}};
  CHECK(mae(exact) == 0.0);
  CHECK(mse(exact) == 0.0);
  CHECK(rmse(exact) == 0.0);

  const std::vector<std::pair<double, double>> one = {{10.0, 7.5}};
  CHECK(mae(one) == doctest::Approx(2.5));
  CHECK(rmse(one) == doctest::Approx(2.5));  // mae == rmse when N == 1

  CHECK_THROWS_AS(mae({}), InputError);
}

TEST_CASE("metric identities on random pairs") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(0.0, 50.0);
  std::vector<EvalRow> rows;
  for (int i = 0; i < 25; ++i) rows.push_back({"img", u(rng), u(rng)});
  const EvalSummary s = summarize(rows);
  CHECK(std::abs(s.rmse * s.rmse - s.mse) < 1e-9);
  CHECK(s.mae <= s.rmse + 1e-12);
}

TEST_CASE("padding is interior: zero pixels are indistinguishable from padding") {
  // With zero biases a net maps black input to exactly zero, and content
  // further than RF/2 from every edge cannot spill past the boundary, so a
  // single-scale model cannot tell extra zero rows from its own zero pad.
  // (The multi-scale, near-border version of this property needs a trained
  // model with a low background response; the acceptance suite covers it.)
  PyramidModel model = make_pyramid_model(tiny_backbone(), {1.0f}, FusionMode::Sum, 13);
  for (auto& c : model.backbone.convs) {
    std::fill(c.params.bias.begin(), c.params.bias.end(), 0.0f);
  }

  SyntheticSceneSpec spec;
  spec.h = 48;
  spec.w = 48;
  spec.count_min = 6;
  spec.count_max = 9;
  spec.size0 = 5.0;
  spec.bg_level = 0.0;
  spec.noise_std = 0.0;
  spec.seed = 17;
  const Dataset inner = generate_synthetic_dataset(spec, 1);
  Tensor4 image(1, 1, 96, 96);  // content embedded 24 px from every edge
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x < 48; ++x) {
      image.at(0, 0, y + 24, x + 24) = inner[0].image.at(0, 0, y, x);
    }
  }

  CHECK(predict_full(model, Tensor4(1, 1, 96, 96)).total() == 0.0);
  const double base = predict_full(model, image).total();
  REQUIRE(base > 0.0);
  for (int pad = 1; pad <= 3; ++pad) {
    Tensor4 padded(1, 1, image.h + pad, image.w + pad);
    for (int y = 0; y < image.h; ++y) {
      for (int x = 0; x < image.w; ++x) padded.at(0, 0, y, x) = image.at(0, 0, y, x);
    }
    const double shifted = predict_full(model, padded).total();
    CHECK(std::abs(shifted - base) / base < 1e-9);
  }
}

TEST_CASE("inference is deterministic") {
  PyramidModel model = make_pyramid_model(tiny_backbone(), {1.0f, 0.7f}, FusionMode::Adaptive, 19);
  std::mt19937 rng(21);
  Tensor4 image(1, 1, 52, 52);
  ref::fill_uniform(image, rng, 0.0f, 1.0f);
  const DensityMap a = predict_full(model, image);
  const DensityMap b = predict_full(model, image);
  CHECK(a.grid == b.grid);
}

TEST_CASE("fps benchmark") {
  PyramidModel model = make_pyramid_model(tiny_backbone(), {1.0f}, FusionMode::Sum, 23);
  CHECK_THROWS_AS(benchmark_fps(model, 64, 64, 0), InputError);
  const double fps = benchmark_fps(model, 64, 64, 3);
  CHECK(fps > 0.0);

  SUBCASE("medians are reasonably stable on repeat") {
    const double a = benchmark_fps(model, 96, 96, 5);
    const double b = benchmark_fps(model, 96, 96, 5);
    CHECK(std::abs(a - b) / std::max(a, b) < 0.2);
  }
}
