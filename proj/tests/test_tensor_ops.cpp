#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "pyrd/errors.hpp"
#include "pyrd/ops.hpp"
#include "reference_ops.hpp"

using namespace pyrd;

TEST_CASE("conv2d: 1x1 kernel is an affine scaling") {
  Tensor4 x(1, 1, 3, 3, 1.0f);
  ConvParams p;
  p.weights = Tensor4(1, 1, 1, 1, 2.0f);
  p.bias = {0.5f};
  const Tensor4 y = conv2d_forward(x, p);
  for (float v : y.data) CHECK(v == doctest::Approx(2.5f));
}

TEST_CASE("conv2d: 3x3 identity kernel reproduces the input") {
  std::mt19937 rng(7);
  Tensor4 x(2, 3, 5, 6);
  ref::fill_uniform(x, rng);
  ConvParams p;
  p.weights = Tensor4(3, 3, 3, 3, 0.0f);
  for (int o = 0; o < 3; ++o) p.weights.at(o, o, 1, 1) = 1.0f;
  p.bias = {0.0f, 0.0f, 0.0f};
  const Tensor4 y = conv2d_forward(x, p);
  REQUIRE(y.same_dims(x));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]));
}

TEST_CASE("conv2d matches the nested-loop reference") {
  std::mt19937 rng(11);
  Tensor4 x(1, 2, 6, 6);
  ref::fill_uniform(x, rng);
  ConvParams p;
  p.weights = Tensor4(3, 2, 5, 5);
  ref::fill_uniform(p.weights, rng);
  p.bias = {0.1f, -0.2f, 0.3f};
  const Tensor4 got = conv2d_forward(x, p);
  const Tensor4 want = ref::conv2d(x, p);
  REQUIRE(got.same_dims(want));
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(std::abs(got.data[i] - want.data[i]) < 1e-5);
  }
}

TEST_CASE("conv2d matches the reference across random configurations") {
  std::mt19937 rng(23);
  std::uniform_int_distribution<int> ch(1, 4), sp(1, 9), ker(0, 2), batch(1, 2);
  const int kernels[] = {1, 3, 5};
  for (int it = 0; it < 25; ++it) {
    Tensor4 x(batch(rng), ch(rng), sp(rng), sp(rng));
    ref::fill_uniform(x, rng);
    ConvParams p;
    p.weights = Tensor4(ch(rng), x.c, kernels[ker(rng)], kernels[ker(rng)]);
    ref::fill_uniform(p.weights, rng);
    p.bias.resize(p.out_ch());
    for (float& b : p.bias) b = std::uniform_real_distribution<float>(-1, 1)(rng);
    const Tensor4 got = conv2d_forward(x, p);
    const Tensor4 want = ref::conv2d(x, p);
    for (std::size_t i = 0; i < got.size(); ++i) {
      REQUIRE(std::abs(got.data[i] - want.data[i]) < 1e-5);
    }
  }
}

TEST_CASE("conv2d rejects channel mismatches") {
  Tensor4 x(1, 2, 4, 4, 1.0f);
  ConvParams p;
  p.weights = Tensor4(1, 3, 3, 3, 0.1f);
  p.bias = {0.0f};
  CHECK_THROWS_AS(conv2d_forward(x, p), ConfigError);
  CHECK_THROWS_AS(conv2d_backward(Tensor4(1, 1, 4, 4), x, p), ConfigError);
}

TEST_CASE("conv2d is bit-identical across thread counts") {
  std::mt19937 rng(31);
  Tensor4 x(1, 3, 17, 13);
  ref::fill_uniform(x, rng);
  ConvParams p;
  p.weights = Tensor4(5, 3, 5, 5);
  ref::fill_uniform(p.weights, rng);
  p.bias.assign(5, 0.25f);
  const Tensor4 one = conv2d_forward(x, p);
  set_num_threads(4);
  const Tensor4 four = conv2d_forward(x, p);
  const ConvGrads g1 = conv2d_backward(one, x, p);
  set_num_threads(1);
  const ConvGrads g2 = conv2d_backward(one, x, p);
  CHECK(one.data == four.data);
  CHECK(g1.w.data == g2.w.data);
  CHECK(g1.x.data == g2.x.data);
}

TEST_CASE("conv2d backward: zero upstream gradient gives zero gradients") {
  std::mt19937 rng(3);
  Tensor4 x(1, 2, 4, 4);
  ref::fill_uniform(x, rng);
  ConvParams p;
  p.weights = Tensor4(2, 2, 3, 3);
  ref::fill_uniform(p.weights, rng);
  p.bias = {0.5f, -0.5f};
  const ConvGrads g = conv2d_backward(Tensor4(1, 2, 4, 4), x, p);
  for (float v : g.x.data) CHECK(v == 0.0f);
  for (float v : g.w.data) CHECK(v == 0.0f);
  for (float v : g.b) CHECK(v == 0.0f);
}

TEST_CASE("conv2d backward: bias gradient of a sum loss is n*h*w") {
  Tensor4 x(2, 1, 3, 5, 0.7f);
  ConvParams p;
  p.weights = Tensor4(3, 1, 3, 3, 0.2f);
  p.bias = {0.0f, 0.0f, 0.0f};
  const ConvGrads g = conv2d_backward(Tensor4(2, 3, 3, 5, 1.0f), x, p);
  for (float v : g.b) CHECK(v == doctest::Approx(2 * 3 * 5));
}

TEST_CASE("conv2d backward matches finite differences") {
  std::mt19937 rng(17);
  Tensor4 x(1, 2, 5, 4);
  ref::fill_uniform(x, rng);
  ConvParams p;
  p.weights = Tensor4(2, 2, 3, 3);
  ref::fill_uniform(p.weights, rng);
  p.bias = {0.3f, -0.1f};
  Tensor4 head(1, 2, 5, 4);
  ref::fill_uniform(head, rng);

  const auto loss = [&] { return ref::weighted_sum(conv2d_forward(x, p), head); };
  const ConvGrads g = conv2d_backward(head, x, p);

  for (std::size_t i = 0; i < x.size(); i += 3) {
    CHECK(ref::rel_err(g.x.data[i], ref::finite_diff(x.data[i], loss)) < 1e-2);
  }
  for (std::size_t i = 0; i < p.weights.size(); i += 2) {
    CHECK(ref::rel_err(g.w.data[i], ref::finite_diff(p.weights.data[i], loss)) < 1e-2);
  }
  for (std::size_t i = 0; i < p.bias.size(); ++i) {
    CHECK(ref::rel_err(g.b[i], ref::finite_diff(p.bias[i], loss)) < 1e-2);
  }
}

TEST_CASE("maxpool2x2 basics") {
  Tensor4 x(1, 1, 2, 2);
  x.data = {1, 2, 3, 4};
  const PoolResult r = maxpool2x2_forward(x);
  CHECK(r.y.data[0] == 4.0f);
  CHECK(r.argmax[0] == 3);

  SUBCASE("ties go to the first window element") {
    Tensor4 c(1, 2, 4, 4, 0.5f);
    const PoolResult rc = maxpool2x2_forward(c);
    for (float v : rc.y.data) CHECK(v == 0.5f);
    CHECK(rc.argmax[0] == c.index(0, 0, 0, 0));
    CHECK(rc.argmax[1] == c.index(0, 0, 0, 2));
  }

  SUBCASE("too-small inputs are rejected") {
    CHECK_THROWS_AS(maxpool2x2_forward(Tensor4(1, 1, 1, 5)), ConfigError);
  }
}

TEST_CASE("maxpool2x2 drops trailing odd row/column and matches brute force") {
  std::mt19937 rng(5);
  Tensor4 x(1, 1, 7, 7);
  ref::fill_uniform(x, rng);
  const PoolResult r = maxpool2x2_forward(x);
  REQUIRE(r.y.h == 3);
  REQUIRE(r.y.w == 3);
  const Tensor4 want = ref::maxpool2x2(x);
  for (std::size_t i = 0; i < r.y.size(); ++i) CHECK(r.y.data[i] == want.data[i]);
}

TEST_CASE("maxpool2x2 backward routes gradients to argmax positions") {
  std::mt19937 rng(9);
  Tensor4 x(1, 1, 6, 6);
  ref::fill_uniform(x, rng);
  const PoolResult r = maxpool2x2_forward(x);

  Tensor4 ones(1, 1, 3, 3, 1.0f);
  Tensor4 gx = maxpool2x2_backward(ones, r.argmax, x.dims());
  int nonzero = 0;
  for (float v : gx.data) nonzero += v != 0.0f;
  CHECK(nonzero == 9);

  Tensor4 zeros(1, 1, 3, 3);
  gx = maxpool2x2_backward(zeros, r.argmax, x.dims());
  for (float v : gx.data) CHECK(v == 0.0f);

  SUBCASE("finite differences, away from ties") {
    Tensor4 head(1, 1, 3, 3);
    ref::fill_uniform(head, rng);
    const auto loss = [&] { return ref::weighted_sum(maxpool2x2_forward(x).y, head); };
    const Tensor4 g = maxpool2x2_backward(head, r.argmax, x.dims());
    for (std::size_t i = 0; i < x.size(); i += 2) {
      CHECK(ref::rel_err(g.data[i], ref::finite_diff(x.data[i], loss)) < 1e-2);
    }
  }
}

TEST_CASE("leaky relu and relu") {
  Tensor4 x(1, 1, 1, 4);
  x.data = {-2.0f, 3.0f, -5.0f, 0.0f};
  const Tensor4 ly = leaky_relu_forward(x);
  CHECK(ly.data[0] == doctest::Approx(-0.2f));
  CHECK(ly.data[1] == 3.0f);

  const Tensor4 ry = relu_forward(x);
  CHECK(ry.data[0] == 0.0f);
  CHECK(ry.data[1] == 3.0f);

  Tensor4 head(1, 1, 1, 4, 1.0f);
  const Tensor4 lg = leaky_relu_backward(head, x);
  CHECK(lg.data[2] == doctest::Approx(0.1f));
  const auto lloss = [&] {
    return ref::weighted_sum(leaky_relu_forward(x), head);
  };
  CHECK(ref::rel_err(lg.data[2], ref::finite_diff(x.data[2], lloss)) < 1e-2);

  std::mt19937 rng(13);
  Tensor4 xr(1, 2, 4, 4);
  ref::fill_uniform(xr, rng);
  for (float& v : xr.data) {
    if (std::abs(v) < 0.05f) v = 0.5f;  // keep away from the kink
  }
  Tensor4 hr(1, 2, 4, 4);
  ref::fill_uniform(hr, rng);
  const Tensor4 rg = relu_backward(hr, xr);
  const auto rloss = [&] { return ref::weighted_sum(relu_forward(xr), hr); };
  for (std::size_t i = 0; i < xr.size(); i += 2) {
    CHECK(ref::rel_err(rg.data[i], ref::finite_diff(xr.data[i], rloss)) < 1e-2);
  }
}

TEST_CASE("bilinear upsample: constants, identity, hand formula") {
  Tensor4 one(1, 1, 1, 1, 0.75f);
  const Tensor4 big = bilinear_upsample_forward(one, 5, 7);
  for (float v : big.data) CHECK(v == 0.75f);

  std::mt19937 rng(19);
  Tensor4 x(1, 1, 2, 2);
  ref::fill_uniform(x, rng);
  const Tensor4 same = bilinear_upsample_forward(x, 2, 2);
  CHECK(same.data == x.data);

  const Tensor4 up = bilinear_upsample_forward(x, 4, 4);
  for (int oy = 0; oy < 4; ++oy) {
    for (int ox = 0; ox < 4; ++ox) {
      CHECK(up.at(0, 0, oy, ox) == doctest::Approx(ref::bilinear_at(x, oy, ox, 4, 4)));
    }
  }

  CHECK_THROWS_AS(bilinear_upsample_forward(x, 1, 4), ConfigError);
}

TEST_CASE("bilinear upsample backward matches finite differences") {
  std::mt19937 rng(29);
  Tensor4 x(1, 1, 3, 4);
  ref::fill_uniform(x, rng);
  Tensor4 head(1, 1, 7, 9);
  ref::fill_uniform(head, rng);
  const auto loss = [&] { return ref::weighted_sum(bilinear_upsample_forward(x, 7, 9), head); };
  const Tensor4 g = bilinear_upsample_backward(head, 3, 4);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(ref::rel_err(g.data[i], ref::finite_diff(x.data[i], loss)) < 1e-2);
  }
}

TEST_CASE("softmax across scales") {
  SUBCASE("equal inputs split evenly") {
    Tensor4 stack(1, 2, 3, 3, 0.8f);
    const Tensor4 y = softmax_across_scales_forward(stack);
    for (float v : y.data) CHECK(v == doctest::Approx(0.5f));
  }

  SUBCASE("a dominant scale saturates") {
    Tensor4 stack(1, 3, 1, 1);
    stack.data = {0.0f, 0.0f, 40.0f};
    const Tensor4 y = softmax_across_scales_forward(stack);
    CHECK(y.data[0] < 1e-6f);
    CHECK(y.data[1] < 1e-6f);
    CHECK(y.data[2] == doctest::Approx(1.0f));
  }

  SUBCASE("per-pixel sums, shift invariance, gradient") {
    std::mt19937 rng(37);
    Tensor4 stack(2, 3, 4, 5);
    ref::fill_uniform(stack, rng, -3.0f, 3.0f);
    const Tensor4 y = softmax_across_scales_forward(stack);
    const std::size_t plane = 4 * 5;
    for (int img = 0; img < 2; ++img) {
      for (std::size_t px = 0; px < plane; ++px) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c) s += y.data[y.index(img, c, 0, 0) + px];
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
    }

    Tensor4 shifted = stack;
    Tensor4 constant(2, 1, 4, 5);
    ref::fill_uniform(constant, rng);
    for (int img = 0; img < 2; ++img) {
      for (int c = 0; c < 3; ++c) {
        for (std::size_t px = 0; px < plane; ++px) {
          shifted.data[shifted.index(img, c, 0, 0) + px] +=
              constant.data[constant.index(img, 0, 0, 0) + px];
        }
      }
    }
    const Tensor4 ys = softmax_across_scales_forward(shifted);
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(std::abs(ys.data[i] - y.data[i]) < 1e-5);
    }

    Tensor4 head(2, 3, 4, 5);
    ref::fill_uniform(head, rng);
    const auto loss = [&] {
      return ref::weighted_sum(softmax_across_scales_forward(stack), head);
    };
    const Tensor4 g = softmax_across_scales_backward(head, y);
    for (std::size_t i = 0; i < stack.size(); i += 3) {
      CHECK(ref::rel_err(g.data[i], ref::finite_diff(stack.data[i], loss)) < 1e-2);
    }
  }

  SUBCASE("stacking rejects mismatched maps, softmax rejects single scale") {
    std::vector<Tensor4> maps{Tensor4(1, 1, 2, 2), Tensor4(1, 1, 3, 2)};
    CHECK_THROWS_AS(stack_maps(maps), ConfigError);
    CHECK_THROWS_AS(softmax_across_scales_forward(Tensor4(1, 1, 2, 2)), ConfigError);
  }
}

TEST_CASE("elementwise mul") {
  std::mt19937 rng(41);
  Tensor4 a(1, 2, 3, 3);
  ref::fill_uniform(a, rng);
  Tensor4 ones(1, 2, 3, 3, 1.0f);
  CHECK(elementwise_mul_forward(a, ones).data == a.data);
  Tensor4 zeros(1, 2, 3, 3);
  for (float v : elementwise_mul_forward(a, zeros).data) CHECK(v == 0.0f);
  CHECK_THROWS_AS(elementwise_mul_forward(a, Tensor4(1, 1, 3, 3)), ConfigError);

  Tensor4 b(1, 2, 3, 3);
  ref::fill_uniform(b, rng);
  Tensor4 head(1, 2, 3, 3);
  ref::fill_uniform(head, rng);
  const Tensor4 ga = elementwise_mul_forward(head, b);
  const Tensor4 gb = elementwise_mul_forward(head, a);
  const auto loss = [&] { return ref::weighted_sum(elementwise_mul_forward(a, b), head); };
  for (std::size_t i = 0; i < a.size(); i += 2) {
    CHECK(ref::rel_err(ga.data[i], ref::finite_diff(a.data[i], loss)) < 1e-2);
    CHECK(ref::rel_err(gb.data[i], ref::finite_diff(b.data[i], loss)) < 1e-2);
  }
}

TEST_CASE("mse loss") {
  std::mt19937 rng(43);
  Tensor4 pred(1, 1, 4, 4);
  ref::fill_uniform(pred, rng);
  CHECK(mse_loss_forward(pred, pred) == 0.0);

  Tensor4 target = pred;
  for (float& v : target.data) v -= 0.3f;
  CHECK(mse_loss_forward(pred, target) == doctest::Approx(0.09).epsilon(1e-4));

  CHECK_THROWS_AS(mse_loss_forward(pred, Tensor4(1, 1, 2, 2)), ConfigError);

  ref::fill_uniform(target, rng);
  const Tensor4 g = mse_loss_backward(pred, target);
  const auto loss = [&] { return mse_loss_forward(pred, target); };
  for (std::size_t i = 0; i < pred.size(); ++i) {
    CHECK(ref::rel_err(g.data[i], ref::finite_diff(pred.data[i], loss)) < 1e-2);
  }
}

TEST_CASE("sum over channels and its backward") {
  std::mt19937 rng(47);
  Tensor4 x(2, 3, 2, 2);
  ref::fill_uniform(x, rng);
  const Tensor4 y = sum_channels_forward(x);
  CHECK(y.at(0, 0, 1, 1) ==
        doctest::Approx(x.at(0, 0, 1, 1) + x.at(0, 1, 1, 1) + x.at(0, 2, 1, 1)));
  Tensor4 head(2, 1, 2, 2);
  ref::fill_uniform(head, rng);
  const Tensor4 g = sum_channels_backward(head, 3);
  const auto loss = [&] { return ref::weighted_sum(sum_channels_forward(x), head); };
  for (std::size_t i = 0; i < x.size(); i += 2) {
    CHECK(ref::rel_err(g.data[i], ref::finite_diff(x.data[i], loss)) < 1e-2);
  }
}

TEST_CASE("grad tape replays steps in exact reverse order") {
  GradTape tape;
  std::vector<int> visited;
  for (int i = 0; i < 5; ++i) {
    tape.record([&visited, i] { visited.push_back(i); });
  }
  tape.backward();
  CHECK(visited == std::vector<int>{4, 3, 2, 1, 0});
}

TEST_CASE("ops leave finite values finite") {
  std::mt19937 rng(53);
  Tensor4 x(1, 2, 8, 8);
  ref::fill_uniform(x, rng, -4.0f, 4.0f);
  ConvParams p;
  p.weights = Tensor4(4, 2, 5, 5);
  ref::fill_uniform(p.weights, rng);
  p.bias.assign(4, 0.1f);
  const Tensor4 y = conv2d_forward(x, p);
  CHECK(y.all_finite());
  CHECK(leaky_relu_forward(y).all_finite());
  CHECK(maxpool2x2_forward(y).y.all_finite());
  CHECK(bilinear_upsample_forward(y, 11, 13).all_finite());
  const ConvGrads g = conv2d_backward(y, x, p);
  CHECK(g.x.all_finite());
  CHECK(g.w.all_finite());
}
