#include <doctest.h>

#include <cmath>

#include "lumenseg/error.hpp"
#include "lumenseg/gradcheck.hpp"
#include "lumenseg/ops.hpp"
#include "lumenseg/random.hpp"
#include "support/oracles.hpp"

using lumenseg::Rng;
using lumenseg::Shape;
using lumenseg::Tensor;
namespace ops = lumenseg::ops;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(lumenseg::numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(v));
}

std::vector<double> to_vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("conv2d trivial cases") {
  SUBCASE("1x1 identity multiplies") {
    Tensor<double> x({1, 1, 1}, 3.0);
    Tensor<double> k({1, 1, 1, 1}, 0.5);
    auto y = ops::conv2d(x, k);
    CHECK(y.shape() == Shape{1, 1, 1});
    CHECK(y[0] == 1.5);
  }
  SUBCASE("constant field") {
    Tensor<double> x({4, 4, 1}, 1.0);
    Tensor<double> k({3, 3, 1, 1}, 1.0);
    auto y = ops::conv2d(x, k);
    CHECK(y.shape() == Shape{2, 2, 1});
    for (double v : y.data()) CHECK(v == 9.0);
  }
}

TEST_CASE("conv2d matches nested-loop oracle") {
  struct Case {
    std::size_t n, h, w, c, kh, kw, co, stride, pad;
  };
  const Case cases[] = {{1, 5, 5, 2, 3, 3, 4, 1, 0}, {2, 7, 6, 3, 3, 3, 5, 1, 1}, {1, 9, 8, 2, 3, 2, 3, 2, 1},
                        {3, 4, 4, 4, 1, 1, 2, 1, 0}, {1, 6, 6, 1, 5, 5, 1, 1, 2},
                        // wide channel axes exercise the blocked GEMM kernels
                        {2, 12, 10, 48, 3, 3, 40, 1, 1}, {1, 10, 20, 96, 3, 3, 64, 1, 1}, {1, 8, 8, 200, 1, 1, 96, 1, 0}};
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    for (const auto& cs : cases) {
      Rng rng(seed * 31 + cs.h);
      auto x = random_tensor({cs.n, cs.h, cs.w, cs.c}, rng);
      auto k = random_tensor({cs.kh, cs.kw, cs.c, cs.co}, rng);
      auto y = ops::conv2d(x, k, cs.stride, cs.pad);
      std::size_t ho = 0, wo = 0;
      auto ref = oracle::conv2d(to_vec(x), cs.n, cs.h, cs.w, cs.c, to_vec(k), cs.kh, cs.kw, cs.co, cs.stride, cs.pad,
                                ho, wo);
      REQUIRE(y.shape() == Shape{cs.n, ho, wo, cs.co});
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-6);
    }
  }
}

TEST_CASE("conv2d errors") {
  Tensor<double> x({5, 5, 2});
  CHECK_THROWS_AS(ops::conv2d(x, Tensor<double>({3, 3, 3, 1})), lumenseg::DimensionError);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor<double>({7, 7, 2, 1})), lumenseg::DimensionError);
  CHECK_THROWS_AS(ops::conv2d(x, Tensor<double>({3, 3, 2, 1}), 0), lumenseg::ParameterError);
  try {
    ops::conv2d(x, Tensor<double>({3, 3, 3, 1}));
  } catch (const lumenseg::DimensionError& e) {
    CHECK(std::string(e.what()).find("channel") != std::string::npos);
  }
}

TEST_CASE("conv3d shape contract and values") {
  SUBCASE("3x64x64x3 with 8 kernels gives 1x62x62x8") {
    Tensor<float> x({3, 64, 64, 3}, 0.25f);
    Tensor<float> k({3, 3, 3, 3, 8}, 0.1f);
    CHECK(ops::conv3d(x, k).shape() == Shape{1, 62, 62, 8});
  }
  SUBCASE("constant field") {
    Tensor<double> x({1, 3, 3, 1}, 1.0);
    Tensor<double> k({1, 3, 3, 1, 1}, 1.0);
    auto y = ops::conv3d(x, k);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == 9.0);
  }
  SUBCASE("random input matches oracle") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed);
      auto x = random_tensor({3, 7, 7, 2}, rng);
      auto k = random_tensor({3, 3, 3, 2, 5}, rng);
      auto y = ops::conv3d(x, k);
      auto ref = oracle::conv3d(to_vec(x), 3, 7, 7, 2, to_vec(k), 3, 3, 5);
      REQUIRE(y.shape() == Shape{1, 5, 5, 5});
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-6);
    }
  }
  SUBCASE("batched") {
    Rng rng(9);
    auto x = random_tensor({2, 3, 6, 5, 2}, rng);
    auto k = random_tensor({3, 3, 3, 2, 4}, rng);
    auto y = ops::conv3d(x, k);
    CHECK(y.shape() == Shape{2, 1, 4, 3, 4});
    auto xv = to_vec(x);
    std::vector<double> second(xv.begin() + xv.size() / 2, xv.end());
    auto ref = oracle::conv3d(second, 3, 6, 5, 2, to_vec(k), 3, 3, 4);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y[ref.size() + i] - ref[i]) < 1e-6);
  }
  SUBCASE("temporal mismatch") {
    CHECK_THROWS_AS(ops::conv3d(Tensor<double>({3, 5, 5, 1}), Tensor<double>({2, 3, 3, 1, 1})),
                    lumenseg::DimensionError);
  }
}

TEST_CASE("convolution is linear in its input") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 100);
    auto x = random_tensor({2, 6, 6, 3}, rng);
    auto z = random_tensor({2, 6, 6, 3}, rng);
    auto k = random_tensor({3, 3, 3, 4}, rng);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    Tensor<double> mix(x.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * z[i];
    auto lhs = ops::conv2d(mix, k, 1, 1);
    auto yx = ops::conv2d(x, k, 1, 1), yz = ops::conv2d(z, k, 1, 1);
    for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(std::abs(lhs[i] - (a * yx[i] + b * yz[i])) < 1e-6);

    auto t1 = random_tensor({3, 5, 5, 2}, rng), t2 = random_tensor({3, 5, 5, 2}, rng);
    auto k3 = random_tensor({3, 3, 3, 2, 3}, rng);
    Tensor<double> tmix(t1.shape());
    for (std::size_t i = 0; i < tmix.size(); ++i) tmix[i] = a * t1[i] + b * t2[i];
    auto l3 = ops::conv3d(tmix, k3), y1 = ops::conv3d(t1, k3), y2 = ops::conv3d(t2, k3);
    for (std::size_t i = 0; i < l3.size(); ++i) CHECK(std::abs(l3[i] - (a * y1[i] + b * y2[i])) < 1e-6);
  }
}

TEST_CASE("zero_pad_spatial") {
  SUBCASE("62 -> 64 with zero border") {
    Rng rng(3);
    auto x = random_tensor({1, 62, 62, 8}, rng, 0.1, 1.0);
    auto y = ops::zero_pad_spatial(x, 1);
    REQUIRE(y.shape() == Shape{1, 64, 64, 8});
    for (std::size_t r = 0; r < 64; ++r)
      for (std::size_t c = 0; c < 64; ++c)
        for (std::size_t k = 0; k < 8; ++k) {
          const double v = y[(r * 64 + c) * 8 + k];
          if (r == 0 || c == 0 || r == 63 || c == 63) CHECK(v == 0.0);
          else CHECK(v == x[((r - 1) * 62 + c - 1) * 8 + k]);
        }
  }
  SUBCASE("pad 0 is identity") {
    Rng rng(4);
    auto x = random_tensor({1, 5, 7, 2}, rng);
    auto y = ops::zero_pad_spatial(x, 0);
    CHECK(y.shape() == x.shape());
    CHECK(to_vec(y) == to_vec(x));
  }
  SUBCASE("sum preserved") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      auto x = random_tensor({2, 1, 4 + seed, 3 + seed, 3}, rng);
      auto y = ops::zero_pad_spatial(x, 1 + seed % 3);
      CHECK(ops::sum(y).item() == doctest::Approx(ops::sum(x).item()).epsilon(1e-12));
    }
  }
}

TEST_CASE("pointwise and normalization ops") {
  Tensor<double> x({2}, std::vector<double>{-1.0, 2.0});
  auto r = ops::relu(x);
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 2.0);
  CHECK(std::isnan(ops::relu(Tensor<double>({1}, std::nan("")))[0]));
  CHECK(ops::sigmoid(Tensor<double>({1}, 0.0))[0] == 0.5);

  Tensor<double> constant({2, 3, 3, 2}, 4.0);
  Tensor<double> gamma({2}, std::vector<double>{1.5, -0.5});
  Tensor<double> beta({2}, std::vector<double>{0.25, -2.0});
  auto bn = ops::batchnorm(constant, gamma, beta, 1e-5);
  for (std::size_t i = 0; i < bn.size(); ++i) CHECK(bn[i] == beta[i % 2]);
  CHECK_THROWS_AS(ops::batchnorm(constant, gamma, beta, 0.0), lumenseg::ParameterError);
  CHECK_THROWS_AS(ops::batchnorm(constant, gamma, beta, -1.0), lumenseg::ParameterError);
}

TEST_CASE("maxpool2 routes gradient to first maximum on ties") {
  Tensor<double> x({2, 2, 1}, 1.0);
  x.set_requires_grad(true);
  auto y = ops::maxpool2(x);
  CHECK(y.shape() == Shape{1, 1, 1});
  ops::sum(y).backward();
  auto g = x.grad();
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 0.0);
}

TEST_CASE("upsample2 and concat shapes") {
  Rng rng(1);
  auto x = random_tensor({2, 3, 4, 5}, rng);
  auto u = ops::upsample2(x);
  CHECK(u.shape() == Shape{2, 6, 8, 5});
  CHECK(u[((1 * 6 + 5) * 8 + 7) * 5 + 2] == x[((1 * 3 + 2) * 4 + 3) * 5 + 2]);
  auto z = random_tensor({2, 3, 4, 2}, rng);
  auto c = ops::concat_channels(x, z);
  CHECK(c.shape() == Shape{2, 3, 4, 7});
  CHECK(c[6] == z[1]);
  CHECK_THROWS_AS(ops::concat_channels(x, random_tensor({2, 3, 5, 2}, rng)), lumenseg::DimensionError);
  CHECK_THROWS_AS(ops::add(x, z), lumenseg::DimensionError);
}

TEST_CASE("no graph is recorded under NoGradGuard") {
  Tensor<double> x({3}, 1.0);
  x.set_requires_grad(true);
  {
    lumenseg::NoGradGuard guard;
    CHECK_FALSE(ops::relu(x).requires_grad());
  }
  CHECK(ops::relu(x).requires_grad());
}

TEST_CASE("gradcheck on a linear op is exact") {
  Rng rng(5);
  auto w = random_tensor({10}, rng);
  auto x = random_tensor({10}, rng);
  auto report = lumenseg::gradcheck(
      "dot", [&] { return ops::sum(ops::mul(w, x)); }, {x}, 1e-10);
  CHECK(report.passed);
  CHECK(report.max_rel_error < 1e-10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(x.grad()[i] == 0.0);  // cleared after the check
}

TEST_CASE("reverse-mode gradients match finite differences for every op") {
  constexpr double kTol = 1e-4;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 1000);
    CAPTURE(seed);
    auto x4 = random_tensor({2, 6, 6, 2}, rng);
    auto k2 = random_tensor({3, 3, 2, 3}, rng);
    CHECK(lumenseg::gradcheck("conv2d", [&] { return ops::conv2d(x4, k2, 1, 1); }, {x4, k2}, kTol).passed);
    CHECK(lumenseg::gradcheck("conv2d_stride", [&] { return ops::conv2d(x4, k2, 2, 0); }, {x4, k2}, kTol).passed);

    auto t = random_tensor({3, 5, 6, 2}, rng);
    auto k3 = random_tensor({3, 3, 3, 2, 3}, rng);
    CHECK(lumenseg::gradcheck("conv3d", [&] { return ops::conv3d(t, k3); }, {t, k3}, kTol).passed);
    CHECK(lumenseg::gradcheck("zero_pad", [&] { return ops::zero_pad_spatial(t, 1); }, {t}, kTol).passed);

    auto gamma = random_tensor({2}, rng, 0.5, 1.5);
    auto beta = random_tensor({2}, rng);
    CHECK(lumenseg::gradcheck("batchnorm", [&] { return ops::batchnorm(x4, gamma, beta, 1e-5); },
                              {x4, gamma, beta}, kTol)
              .passed);
    auto mean = random_tensor({2}, rng), var = random_tensor({2}, rng, 0.5, 2.0);
    CHECK(lumenseg::gradcheck(
              "batchnorm_inference", [&] { return ops::batchnorm_inference(x4, gamma, beta, mean, var, 1e-5); },
              {x4, gamma, beta}, kTol)
              .passed);
    CHECK(lumenseg::gradcheck("relu", [&] { return ops::relu(x4); }, {x4}, kTol).passed);
    CHECK(lumenseg::gradcheck("sigmoid", [&] { return ops::sigmoid(x4); }, {x4}, kTol).passed);
    CHECK(lumenseg::gradcheck("maxpool2", [&] { return ops::maxpool2(x4); }, {x4}, kTol).passed);
    CHECK(lumenseg::gradcheck("upsample2", [&] { return ops::upsample2(x4); }, {x4}, kTol).passed);
    auto y4 = random_tensor({2, 6, 6, 2}, rng);
    CHECK(lumenseg::gradcheck("add", [&] { return ops::add(x4, y4); }, {x4, y4}, kTol).passed);
    CHECK(lumenseg::gradcheck("mul", [&] { return ops::mul(x4, y4); }, {x4, y4}, kTol).passed);
    auto z4 = random_tensor({2, 6, 6, 3}, rng);
    CHECK(lumenseg::gradcheck("concat", [&] { return ops::concat_channels(x4, z4); }, {x4, z4}, kTol).passed);
    auto bias = random_tensor({2}, rng);
    CHECK(lumenseg::gradcheck("bias_add", [&] { return ops::bias_add(x4, bias); }, {x4, bias}, kTol).passed);
    CHECK(lumenseg::gradcheck("reshape", [&] { return ops::reshape(x4, {12, 12}); }, {x4}, kTol).passed);

    auto pred = random_tensor({2, 4, 4, 1}, rng, 0.05, 0.95);
    Tensor<double> target(pred.shape());
    for (std::size_t i = 0; i < target.size(); ++i) target[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    target[0] = 1.0;
    target[16] = 1.0;
    CHECK(lumenseg::gradcheck("dice_loss", [&] { return ops::dice_loss(pred, target); }, {pred}, kTol).passed);
  }
}

TEST_CASE("branch trace digests relu and maxpool decisions") {
  Tensor<double> x({1, 2, 2, 1}, std::vector<double>{0.5, -0.25, 1.0, 2.0});
  auto digest = [&] {
    ops::BranchTrace trace;
    ops::maxpool2(ops::relu(x));
    return trace.digest();
  };
  const auto base = digest();
  CHECK(base != 0);
  x[0] = 0.75;
  CHECK(digest() == base);
  x[1] = 1e-9;
  const auto flipped = digest();
  CHECK(flipped != base);
  x[1] = -0.25;
  x[2] = 3.0;
  CHECK(digest() != base);
  CHECK(digest() != flipped);

  ops::BranchTrace outer;
  ops::relu(x);
  const auto after_relu = outer.digest();
  { ops::BranchTrace inner; ops::relu(x); }
  CHECK(outer.digest() == after_relu);
}

TEST_CASE("gradcheck skips coordinates whose step crosses a kink") {
  Tensor<double> x({4}, std::vector<double>{0.5, 3e-6, -0.7, -4e-6});
  const auto r = lumenseg::gradcheck("relu_near_zero", [&] { return ops::relu(x); }, {x}, 1e-4);
  CHECK(r.coords_checked == 2);
  CHECK(r.coords_skipped == 2);
  CHECK(r.passed);

  Tensor<double> y({2}, std::vector<double>{1e-6, -2e-6});
  const auto none = lumenseg::gradcheck("relu_all_kinks", [&] { return ops::relu(y); }, {y}, 1e-4);
  CHECK(none.coords_checked == 0);
  CHECK_FALSE(none.covered);
  CHECK_FALSE(none.passed);

  // a graph-detached copy has zero analytic gradient; the smooth coordinates expose it
  Tensor<double> z({3}, std::vector<double>{0.5, 3e-6, 1.5});
  const auto detached = lumenseg::gradcheck(
      "relu_detached", [&] { return ops::relu(Tensor<double>(z.shape(), std::vector<double>(z.data().begin(), z.data().end()))); },
      {z}, 1e-4);
  CHECK(detached.coords_skipped == 1);
  CHECK(detached.max_rel_error == doctest::Approx(1.0));
  CHECK_FALSE(detached.passed);
}

TEST_CASE("gradcheck suite covers every op and both residual networks") {
  for (std::uint64_t seed : {0u, 1u, 3u, 7u, 9u, 11u}) {
    lumenseg::GradCheckSuiteOptions options;
    options.seed = seed;
    const auto reports = lumenseg::gradcheck_suite(options);
    CHECK(reports.size() >= 13);
    for (const auto& r : reports) {
      CAPTURE(r.name);
      CAPTURE(r.max_rel_error);
      CHECK(r.passed);
      CHECK(r.coords_checked > 0);
    }
  }
}

TEST_CASE("dice_loss values") {
  Tensor<double> pred({4}, std::vector<double>{1, 1, 0, 0});
  Tensor<double> target({4}, std::vector<double>{1, 0, 1, 0});
  CHECK(ops::dice_loss(pred, target).item() == 0.5);
  CHECK(ops::dice_loss(target, target).item() == 0.0);
  Tensor<double> empty({4}, 0.0);
  CHECK(ops::dice_loss(empty, empty).item() == 0.0);
  CHECK(ops::dice_loss(pred, empty).item() == 1.0);
  CHECK_THROWS_AS(ops::dice_loss(pred, Tensor<double>({4}, 0.5)), lumenseg::ParameterError);
  CHECK_THROWS_AS(ops::dice_loss(pred, Tensor<double>({5}, 0.0)), lumenseg::DimensionError);

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    std::vector<double> p(64), g(64);
    for (auto& v : p) v = rng.uniform();
    for (auto& v : g) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    auto loss = ops::dice_loss(Tensor<double>({8, 8}, p), Tensor<double>({8, 8}, g)).item();
    CHECK(std::abs(loss - oracle::soft_dice_loss(p, g)) < 1e-9);
  }
}
