#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fsdrive/grad_check.hpp"
#include "fsdrive/layers.hpp"
#include "support/gradient_suite.hpp"

using namespace fsdrive;
using fsdrive::test_support::random_tensor;

TEST(Conv2d, OutputShapeFollowsValidConvolution) {
  Tensor<float> x({1, 3, 256, 256});
  Tensor<float> w({8, 3, 5, 5});
  Tensor<float> b({8});
  EXPECT_EQ(conv2d(x, w, b, 2).shape(), (Shape{1, 8, 126, 126}));
}

TEST(Conv2d, SumOfOnes) {
  Tensor<double> x({1, 1, 3, 3}, 1.0), w({1, 1, 3, 3}, 1.0), b({1});
  auto y = conv2d(x, w, b, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 9.0);
}

TEST(Conv2d, ZeroInputPassesBias) {
  Rng rng(3);
  Tensor<double> x({1, 1, 3, 3});
  auto w = random_tensor({1, 1, 3, 3}, rng);
  Tensor<double> b({1}, {0.75});
  EXPECT_DOUBLE_EQ(conv2d(x, w, b, 1)[0], 0.75);
}

TEST(Conv2d, ChannelMismatchNamesBothShapes) {
  Tensor<float> x({1, 2, 6, 6}), w({4, 3, 3, 3}), b({4});
  try {
    conv2d(x, w, b, 1);
    FAIL() << "expected rejection";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape_mismatch);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(1x2x6x6)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(4x3x3x3)"), std::string::npos) << msg;
  }
}

TEST(Conv2d, OneHotKernelIsShiftedCopy) {
  // Brute force: a kernel with a single 1 at (r, c) picks input(h + r, w + c).
  Rng rng(11);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      auto x = random_tensor({1, 1, 6, 6}, rng);
      Tensor<double> w({1, 1, 3, 3}), b({1});
      w[r * 3 + c] = 1.0;
      auto y = conv2d(x, w, b, 1);
      for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t col = 0; col < 4; ++col) EXPECT_EQ(y.at(0, 0, h, col), x.at(0, 0, h + r, col + c));
    }
  }
}

TEST(MaxPool, PicksMaximum) {
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(maxpool(x, 2, 2)[0], 4.0);
}

TEST(MaxPool, OutputExtents) {
  EXPECT_EQ(maxpool(Tensor<float>({1, 1, 126, 126}), 2, 2).shape(), (Shape{1, 1, 63, 63}));
  EXPECT_EQ(maxpool(Tensor<float>({1, 1, 63, 63}), 2, 2).shape(), (Shape{1, 1, 31, 31}));
}

TEST(MaxPool, WindowLargerThanInputRejected) {
  EXPECT_THROW(maxpool(Tensor<float>({1, 1, 1, 1}), 2, 2), Error);
}

TEST(MaxPool, TiesRouteToFirstElement) {
  Tensor<double> x({1, 1, 2, 2}, {5, 5, 5, 5});
  std::vector<std::size_t> argmax;
  maxpool(x, 2, 2, &argmax);
  auto dx = maxpool_backward(x.shape(), argmax, Tensor<double>({1, 1, 1, 1}, 1.0));
  EXPECT_EQ(dx.values()[0], 1.0);
  EXPECT_EQ(dx[1] + dx[2] + dx[3], 0.0);
}

TEST(MaxPool, MatchesBruteForceAndConservesGradient) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto x = random_tensor({2, 3, 8, 8}, rng);
    std::vector<std::size_t> argmax;
    auto y = maxpool(x, 2, 2, &argmax);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t h = 0; h < 4; ++h)
          for (std::size_t w = 0; w < 4; ++w) {
            double best = -INFINITY;
            for (std::size_t r = 0; r < 2; ++r)
              for (std::size_t s = 0; s < 2; ++s) best = std::max(best, x.at(n, c, 2 * h + r, 2 * w + s));
            EXPECT_EQ(y.at(n, c, h, w), best);
          }
    auto g = random_tensor(y.shape(), rng);
    auto dx = maxpool_backward(x.shape(), argmax, g);
    double gs = 0, dxs = 0;
    for (auto v : g.values()) gs += v;
    for (auto v : dx.values()) dxs += v;
    EXPECT_NEAR(gs, dxs, 1e-12);
  }
}

namespace {

LayerParams<double> bn_params(std::size_t channels, double gamma = 1.0, double beta = 0.0) {
  LayerParams<double> p;
  p.gamma = Tensor<double>({channels}, gamma);
  p.beta = Tensor<double>({channels}, beta);
  p.running_mean = Tensor<double>({channels});
  p.running_var = Tensor<double>({channels}, 1.0);
  return p;
}

}  // namespace

TEST(BatchNorm, TwoValueChannel) {
  Tensor<double> x({2, 1, 1, 1}, {1.0, 3.0});
  auto p = bn_params(1);
  auto y = batchnorm2d(x, p, Mode::train);
  // mean 2, biased variance 1
  const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y[0], -expected, 1e-12);
  EXPECT_NEAR(y[1], expected, 1e-12);
  EXPECT_NEAR(y[1], 0.999995, 1e-6);
}

TEST(BatchNorm, ConstantChannelGivesZero) {
  Tensor<double> x({4, 1, 2, 2}, 3.5);
  auto p = bn_params(1);
  auto y = batchnorm2d(x, p, Mode::train);
  for (auto v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  Rng rng(5);
  auto x = random_tensor({3, 2, 3, 3}, rng);
  auto p = bn_params(2, 0.0, 7.0);
  auto y = batchnorm2d(x, p, Mode::train);
  for (auto v : y.values()) EXPECT_EQ(v, 7.0);
}

TEST(BatchNorm, SingleElementBatchIsPermitted) {
  Tensor<double> x({1, 2, 1, 1}, {4.0, -1.0});
  auto p = bn_params(2, 1.0, 0.5);
  auto y = batchnorm2d(x, p, Mode::train);
  EXPECT_EQ(y[0], 0.5);
  EXPECT_EQ(y[1], 0.5);
}

TEST(BatchNorm, RunningStatisticsUseMomentum) {
  Tensor<double> x({2, 1, 1, 1}, {1.0, 3.0});
  auto p = bn_params(1);
  batchnorm2d(x, p, Mode::train);
  EXPECT_NEAR(p.running_mean[0], 0.1 * 2.0, 1e-15);
  // unbiased variance of {1, 3} is 2
  EXPECT_NEAR(p.running_var[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-15);
  auto y = batchnorm2d(x, p, Mode::eval);
  EXPECT_NEAR(y[0], (1.0 - 0.2) / std::sqrt(1.1 + 1e-5), 1e-12);
}

TEST(BatchNorm, TrainOutputIsStandardized) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto x = random_tensor({4, 3, 4, 4}, rng, -5, 9);
    auto p = bn_params(3);
    auto y = batchnorm2d(x, p, Mode::train);
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0, sq = 0;
      for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t i = 0; i < 16; ++i) mean += y[(n * 3 + c) * 16 + i];
      mean /= 64;
      for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t i = 0; i < 16; ++i) sq += std::pow(y[(n * 3 + c) * 16 + i] - mean, 2);
      EXPECT_LT(std::abs(mean), 1e-5);
      EXPECT_NEAR(sq / 64, 1.0, 1e-3);
    }
  }
}

TEST(Linear, HandArithmetic) {
  Tensor<double> x({1, 2}, {1, 2}), w({2, 2}, {1, 1, 1, -1}), b({2});
  auto y = linear(x, w, b);
  EXPECT_EQ(y[0], 3.0);
  EXPECT_EQ(y[1], -1.0);
  EXPECT_EQ(linear(Tensor<double>({1, 1}, {1}), Tensor<double>({1, 1}, {2}), Tensor<double>({1}, {0.5}))[0], 2.5);
}

TEST(Linear, ZeroInputGivesBias) {
  Rng rng(9);
  auto w = random_tensor({3, 4}, rng);
  auto b = random_tensor({3}, rng);
  auto y = linear(Tensor<double>({1, 4}), w, b);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(y[i], b[i]);
}

TEST(Linear, FeatureMismatchRejected) {
  try {
    linear(Tensor<float>({2, 5}), Tensor<float>({3, 4}), Tensor<float>({3}));
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2x5)"), std::string::npos);
    EXPECT_NE(msg.find("(3x4)"), std::string::npos);
  }
}

TEST(Relu, Elementwise) {
  auto y = relu(Tensor<double>({3}, {-1, 0, 2}));
  EXPECT_EQ(y, Tensor<double>({3}, {0, 0, 2}));
  auto dx = relu_backward(Tensor<double>({3}, {-1, 0, 2}), Tensor<double>({3}, {1, 1, 1}));
  EXPECT_EQ(dx, Tensor<double>({3}, {0, 0, 1}));
  EXPECT_EQ(relu(Tensor<double>({2}, {-3, -0.5})), Tensor<double>({2}, {0, 0}));
  EXPECT_EQ(relu(Tensor<double>({2}, {3, 0.5})), Tensor<double>({2}, {3, 0.5}));
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  std::vector<int> label{2};
  EXPECT_NEAR(softmax_cross_entropy(Tensor<double>({1, 3}), label).loss, std::log(3.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, ConfidentCorrectClass) {
  std::vector<int> label{1};
  const double expected = std::log1p(2.0 * std::exp(-10.0));
  auto r = softmax_cross_entropy(Tensor<double>({1, 3}, {10, 0, 0}), label);
  EXPECT_NEAR(r.loss, expected, 1e-15);
  EXPECT_NEAR(r.loss, 9.08e-5, 1e-8);
}

TEST(SoftmaxCrossEntropy, DuplicatedRowsKeepLoss) {
  std::vector<int> one{3}, two{3, 3};
  auto single = softmax_cross_entropy(Tensor<double>({1, 3}, {0.3, -1.2, 2.0}), one).loss;
  auto twice = softmax_cross_entropy(Tensor<double>({2, 3}, {0.3, -1.2, 2.0, 0.3, -1.2, 2.0}), two).loss;
  EXPECT_NEAR(single, twice, 1e-15);
}

TEST(SoftmaxCrossEntropy, LargeLogitsStayFinite) {
  std::vector<int> label{2, 1};
  auto r = softmax_cross_entropy(Tensor<float>({2, 3}, {1e4f, -1e4f, 0.f, -1e4f, 1e4f, 1e4f}), label);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_TRUE(r.grad.all_finite());
}

TEST(SoftmaxCrossEntropy, OutOfRangeClassRejected) {
  std::vector<int> zero{0}, four{4};
  EXPECT_THROW(softmax_cross_entropy(Tensor<double>({1, 3}), zero), Error);
  EXPECT_THROW(softmax_cross_entropy(Tensor<double>({1, 3}), four), Error);
}

TEST(Softmax, RowsSumToOneAndLossNonNegative) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto logits = random_tensor({6, 3}, rng, -50, 50);
    auto p = softmax(logits);
    for (std::size_t n = 0; n < 6; ++n) EXPECT_NEAR(p[3 * n] + p[3 * n + 1] + p[3 * n + 2], 1.0, 1e-6);
    std::vector<int> labels(6);
    for (auto& l : labels) l = 1 + static_cast<int>(rng.below(3));
    EXPECT_GE(softmax_cross_entropy(logits, labels).loss, 0.0);
  }
}

TEST(SmoothL1, PiecewiseValues) {
  auto loss = [](double d) { return smooth_l1(Tensor<double>({1}, {d}), Tensor<double>({1}, {0.0})).loss; };
  EXPECT_EQ(loss(0.0), 0.0);
  EXPECT_EQ(loss(0.5), 0.125);
  EXPECT_EQ(loss(3.0), 2.5);
}

TEST(SmoothL1, ContinuousWithContinuousSlopeAtOne) {
  auto eval = [](double d) { return smooth_l1(Tensor<double>({1}, {d}), Tensor<double>({1}, {0.0})); };
  for (double side : {1.0, -1.0}) {
    auto below = eval(side * (1 - 1e-6)), above = eval(side * (1 + 1e-6));
    EXPECT_LT(std::abs(below.loss - above.loss), 1e-5);
    EXPECT_LT(std::abs(below.grad[0] - above.grad[0]), 1e-5);
  }
}

TEST(ClampScale, Saturation) {
  auto y = clamp_scale(Tensor<double>({3}, {0.0, 250.0, -123.4}), -90, 90);
  EXPECT_EQ(y, Tensor<double>({3}, {0.0, 90.0, -90.0}));
  auto dx = clamp_scale_backward(Tensor<double>({3}, {0.0, 250.0, -123.4}), -90, 90, Tensor<double>({3}, 1.0));
  EXPECT_EQ(dx, Tensor<double>({3}, {1.0, 0.0, 0.0}));
}

TEST(ScaledSigmoid, Values) {
  EXPECT_EQ(scaled_sigmoid(Tensor<double>({1}, {0.0}), 256)[0], 128.0);
  EXPECT_NEAR(scaled_sigmoid(Tensor<double>({1}, {-20.0}), 256)[0], 256.0 / (1.0 + std::exp(20.0)), 1e-20);
  EXPECT_NEAR(scaled_sigmoid(Tensor<double>({1}, {-20.0}), 256)[0], 5.28e-7, 1e-9);
  for (double x : {40.0, 1e3, 1e30}) {
    EXPECT_LT(scaled_sigmoid(Tensor<double>({1}, {x}), 256)[0], 256.0);
    EXPECT_LT(scaled_sigmoid(Tensor<float>({1}, {static_cast<float>(x)}), 256)[0], 256.0f);
  }
}

TEST(OutputBounds, RandomInputsStayInRange) {
  Rng rng(1);
  auto x = random_tensor({1000}, rng, -1e4, 1e4);
  auto clamped = clamp_scale(x, -90, 90);
  for (auto v : clamped.values()) {
    EXPECT_GE(v, -90.0);
    EXPECT_LE(v, 90.0);
  }
  auto squashed = scaled_sigmoid(x.cast<float>(), 256);
  for (auto v : squashed.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 256.0f);
  }
}

TEST(GradCheck, ReportsNonFiniteCoordinate) {
  std::vector<double> point{1.0, 2.0};
  std::vector<double> analytic{0.0, 0.0};
  auto r = grad_check([&] { return point[1] > 2.0 ? NAN : 0.0; }, point, analytic, 1e-6);
  ASSERT_TRUE(r.non_finite_coordinate.has_value());
  EXPECT_EQ(*r.non_finite_coordinate, 1u);
  EXPECT_FALSE(r.passed(1.0));
}

TEST(GradCheck, RejectsStepOutsideRange) {
  std::vector<double> point{1.0}, analytic{0.0};
  EXPECT_THROW(grad_check([] { return 0.0; }, point, analytic, 1e-3), Error);
}

TEST(GradCheck, LayerExamples) {
  EXPECT_LT(test_support::check_linear(1), 1e-6);
  EXPECT_LT(test_support::check_relu(1), 1e-6);
  EXPECT_LT(test_support::check_conv2d(1), 1e-5);
}

TEST(GradCheck, EveryLayerTenSeeds) {
  for (const auto& check : test_support::layer_checks()) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const double err = check.run(seed);
      EXPECT_LT(err, 1e-5) << check.name << " seed " << seed;
    }
  }
}
