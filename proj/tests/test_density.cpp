#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "pyrd/density.hpp"
#include "pyrd/errors.hpp"
#include "reference_ops.hpp"

using namespace pyrd;

TEST_CASE("fixed kernel: one centered point carries unit mass") {
  PointAnnotations ann;
  ann.h = 158;
  ann.w = 238;
  ann.points = {{119.0f, 79.0f}};
  const DensityMap d = generate_fixed(ann, 4.0);
  CHECK(std::abs(d.total() - 1.0) < 1e-6);
  for (double v : d.grid) CHECK(v >= 0.0);
}

TEST_CASE("fixed kernel: no points gives an all-zero map") {
  PointAnnotations ann;
  ann.h = 32;
  ann.w = 32;
  const DensityMap d = generate_fixed(ann, 15.0);
  CHECK(d.total() == 0.0);
}

TEST_CASE("fixed kernel: corner clipping is compensated by renormalization") {
  PointAnnotations ann;
  ann.h = 100;
  ann.w = 100;
  ann.points = {{1.0f, 2.0f}, {0.0f, 0.0f}, {3.5f, 1.5f}};
  const DensityMap d = generate_fixed(ann, 15.0);
  double direct = 0.0;  // independent summation of the emitted grid
  for (int y = 0; y < d.h; ++y) {
    for (int x = 0; x < d.w; ++x) direct += d.at(y, x);
  }
  CHECK(std::abs(direct - 3.0) < 1e-6);
}

TEST_CASE("fixed kernel rejects out-of-image points and bad sigma") {
  PointAnnotations ann;
  ann.h = 10;
  ann.w = 10;
  ann.points = {{10.0f, 3.0f}};
  CHECK_THROWS_AS(generate_fixed(ann, 4.0), InputError);
  ann.points = {{3.0f, 3.0f}};
  CHECK_THROWS_AS(generate_fixed(ann, 0.0), InputError);
}

TEST_CASE("fixed kernel is translation-equivariant for interior points") {
  PointAnnotations a;
  a.h = 120;
  a.w = 120;
  a.points = {{40.0f, 45.0f}};
  PointAnnotations b = a;
  b.points = {{47.0f, 51.0f}};  // integer shift (7, 6)
  const DensityMap da = generate_fixed(a, 4.0);
  const DensityMap db = generate_fixed(b, 4.0);
  const int r = 16;  // 4 * sigma
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      CHECK(da.at(45 + dy, 40 + dx) == db.at(51 + dy, 47 + dx));
    }
  }
}

TEST_CASE("adding a point raises total mass by exactly one") {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> px(0.0f, 63.9f);
  PointAnnotations ann;
  ann.h = 64;
  ann.w = 64;
  for (int i = 0; i < 20; ++i) ann.points.push_back({px(rng), px(rng)});
  const double before = generate_fixed(ann, 6.0).total();
  ann.points.push_back({px(rng), px(rng)});
  const double after = generate_fixed(ann, 6.0).total();
  CHECK(std::abs(after - before - 1.0) < 1e-6);
}

TEST_CASE("knn distances") {
  SUBCASE("collinear points, k=1") {
    const std::vector<std::array<float, 2>> pts = {{0, 0}, {10, 0}, {30, 0}};
    const auto d = knn_distances(pts, 1);
    CHECK(d[0] == doctest::Approx(10.0));
    CHECK(d[1] == doctest::Approx(10.0));
    CHECK(d[2] == doctest::Approx(20.0));
  }

  SUBCASE("duplicate points give zero distance; sigma clamps at the floor") {
    PointAnnotations ann;
    ann.h = 50;
    ann.w = 50;
    ann.points = {{10.0f, 10.0f}, {10.0f, 10.0f}};
    const auto sig = adaptive_sigmas(ann, {});
    CHECK(sig[0] == 1.0);  // sigma_min
    CHECK(sig[1] == 1.0);
    CHECK(std::abs(generate_adaptive(ann).total() - 2.0) < 1e-6);
  }

  SUBCASE("random cloud matches the all-pairs sort oracle") {
    std::mt19937 rng(11);
    std::uniform_real_distribution<float> u(0.0f, 200.0f);
    std::vector<std::array<float, 2>> pts;
    for (int i = 0; i < 50; ++i) pts.push_back({u(rng), u(rng)});
    const auto got = knn_distances(pts, 5);
    const auto want = ref::knn_mean_distances(pts, 5);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }

  SUBCASE("fewer than two points is an input error") {
    CHECK_THROWS_AS(knn_distances({{1.0f, 1.0f}}, 5), InputError);
  }
}

TEST_CASE("adaptive sigmas: two points use the single available neighbour") {
  PointAnnotations ann;
  ann.h = 100;
  ann.w = 100;
  ann.points = {{20.0f, 50.0f}, {60.0f, 50.0f}};  // 40 px apart
  const auto sig = adaptive_sigmas(ann, {});       // k=5 falls back to 1 neighbour
  CHECK(sig[0] == doctest::Approx(0.3 * 40.0));
  CHECK(sig[1] == doctest::Approx(0.3 * 40.0));
}

TEST_CASE("adaptive sigmas on a regular grid match the brute-force oracle") {
  const double spacing = 8.0;
  PointAnnotations ann;
  ann.h = 100;
  ann.w = 100;
  for (int gy = 0; gy < 10; ++gy) {
    for (int gx = 0; gx < 10; ++gx) {
      ann.points.push_back({static_cast<float>(10 + gx * spacing),
                            static_cast<float>(10 + gy * spacing)});
    }
  }
  AdaptiveKernelOptions opt;
  const auto sig = adaptive_sigmas(ann, opt);
  const auto oracle = ref::knn_mean_distances(ann.points, opt.k);
  for (std::size_t i = 0; i < sig.size(); ++i) {
    CHECK(sig[i] ==
          doctest::Approx(std::clamp(opt.beta * oracle[i], opt.sigma_min, opt.sigma_max)));
  }
  // Interior points: 4 of the 5 nearest at distance d, the 5th at d or d*sqrt(2).
  CHECK(sig[5 * 10 + 5] <= doctest::Approx(0.3 * spacing * (4 + std::sqrt(2.0)) / 5));
  CHECK(sig[5 * 10 + 5] >= doctest::Approx(0.3 * spacing));
}

TEST_CASE("adaptive mode: lone point falls back to the default sigma") {
  PointAnnotations ann;
  ann.h = 200;
  ann.w = 200;
  ann.points = {{100.0f, 100.0f}};
  CHECK(adaptive_sigmas(ann, {})[0] == 15.0);
  CHECK(std::abs(generate_adaptive(ann).total() - 1.0) < 1e-6);
}

TEST_CASE("mass conservation holds across random annotation sets") {
  std::mt19937 rng(17);
  for (int it = 0; it < 10; ++it) {
    PointAnnotations ann;
    ann.h = 60 + static_cast<int>(rng() % 80);
    ann.w = 60 + static_cast<int>(rng() % 80);
    const int n = 1 + static_cast<int>(rng() % 40);
    std::uniform_real_distribution<float> ux(0.0f, static_cast<float>(ann.w) - 0.01f);
    std::uniform_real_distribution<float> uy(0.0f, static_cast<float>(ann.h) - 0.01f);
    for (int i = 0; i < n; ++i) ann.points.push_back({ux(rng), uy(rng)});

    const double fixed_mass = generate_fixed(ann, 15.0).total();
    CHECK(std::abs(fixed_mass - n) <= 1e-5 * n);
    const double adaptive_mass = generate_adaptive(ann).total();
    CHECK(std::abs(adaptive_mass - n) <= 1e-5 * n);
  }
}

TEST_CASE("sum_pool_4") {
  SUBCASE("all-ones 8x8 becomes all-16 2x2") {
    DensityMap d(8, 8);
    for (double& v : d.grid) v = 1.0;
    const DensityMap p = sum_pool_4(d);
    REQUIRE(p.h == 2);
    REQUIRE(p.w == 2);
    CHECK(p.scale_factor == 4);
    for (double v : p.grid) CHECK(v == 16.0);
  }

  SUBCASE("an impulse at (x=2, y=5) lands in block (row 1, col 0)") {
    DensityMap d(8, 8);
    d.at(5, 2) = 1.0;
    const DensityMap p = sum_pool_4(d);
    CHECK(p.at(1, 0) == 1.0);
    CHECK(p.total() == 1.0);
  }

  SUBCASE("mass is conserved on random maps, including ragged dims") {
    std::mt19937 rng(23);
    std::uniform_real_distribution<double> u(0.0, 0.01);
    DensityMap d(37, 53);
    for (double& v : d.grid) v = u(rng);
    const DensityMap p = sum_pool_4(d);
    CHECK(p.h == 10);
    CHECK(p.w == 14);
    CHECK(std::abs(p.total() - d.total()) <= 1e-6);
  }
}
