#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "resablate/ops.hpp"
#include "support.hpp"

using namespace resablate;
using namespace testing_support;

TEST(Conv2d, MatchesDirectLoopOracle) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> ch(1, 6), hw(3, 11), pick(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = pick(rng) ? 3 : 1;
    const std::size_t stride = pick(rng) + 1;
    const std::size_t pad = k == 3 ? pick(rng) : 0;
    const Shape4 shape{1 + pick(rng) * 2, ch(rng), hw(rng), hw(rng)};
    const auto x = random_tensor<float>(shape, rng);
    const auto kern = random_kernel<float>(ch(rng), shape.c, k, stride, pad, rng);
    const auto got = conv2d(x, kern);
    const auto want = naive_conv2d(x, kern);
    ASSERT_EQ(got.shape(), want.shape()) << "trial " << trial;
    EXPECT_LE(max_relative_error(got.vec(), want.vec()), 1e-5) << "trial " << trial << " " << shape.str();
  }
}

TEST(Conv2d, LinearInTheKernel) {
  std::mt19937_64 rng(3);
  const auto x = random_tensor<double>({2, 3, 7, 7}, rng);
  auto k1 = random_kernel<double>(4, 3, 3, 1, 1, rng);
  auto k2 = random_kernel<double>(4, 3, 3, 1, 1, rng);
  auto ksum = k1;
  for (std::size_t i = 0; i < ksum.weights.size(); ++i) ksum.weights[i] = 2.0 * k1.weights[i] - 0.5 * k2.weights[i];
  const auto a = conv2d(x, k1), b = conv2d(x, k2), c = conv2d(x, ksum);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], 2.0 * a[i] - 0.5 * b[i], 1e-12);
}

TEST(Conv2d, ZeroKernelGivesZeroOutput) {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<float>({2, 3, 6, 6}, rng);
  auto k = random_kernel<float>(4, 3, 3, 2, 1, rng);
  k.set_zero();
  const auto y = conv2d(x, k);
  for (float v : y.vec()) EXPECT_EQ(v, 0.0f);
}

TEST(Conv2d, ShapeErrors) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor<float>({1, 3, 4, 4}, rng);
  EXPECT_THROW(conv2d(x, random_kernel<float>(2, 2, 3, 1, 1, rng)), ConfigError);
  EXPECT_THROW(conv2d(x, random_kernel<float>(2, 3, 5, 1, 1, rng)), ConfigError);
}

TEST(BatchNorm, EvalIdentityCase) {
  std::mt19937_64 rng(2);
  const auto x = random_tensor<float>({2, 3, 4, 4}, rng);
  BatchNormState<float> bn(3);
  bn.epsilon = 0.0f;
  const auto y = batchnorm_eval(x, bn);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(BatchNorm, TrainModeStandardizes) {
  std::mt19937_64 rng(4);
  const auto x = random_tensor<double>({8, 4, 6, 6}, rng, -3.0, 5.0);
  BatchNormState<double> bn(4);
  const auto y = batchnorm(x, bn, BnMode::train);
  const double m = 8 * 36;
  for (std::size_t c = 0; c < 4; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t i = 0; i < 36; ++i) s += y.plane(n, c)[i];
    const double mean = s / m;
    for (std::size_t n = 0; n < 8; ++n)
      for (std::size_t i = 0; i < 36; ++i) s2 += (y.plane(n, c)[i] - mean) * (y.plane(n, c)[i] - mean);
    EXPECT_NEAR(mean, 0.0, 1e-5);
    EXPECT_NEAR(s2 / m, 1.0, 1e-4);  // epsilon shrinks the variance by about 1e-5 relative
  }
}

TEST(BatchNorm, RunningStatisticsUpdate) {
  std::mt19937_64 rng(6);
  const auto x = random_tensor<double>({4, 2, 3, 3}, rng, 0.0, 4.0);
  BatchNormState<double> bn(2);
  batchnorm(x, bn, BnMode::train);
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0;
    std::vector<double> vals;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 9; ++i) vals.push_back(x.plane(n, c)[i]);
    for (double v : vals) s += v;
    const double mean = s / vals.size();
    double ss = 0;
    for (double v : vals) ss += (v - mean) * (v - mean);
    const double unbiased = ss / (vals.size() - 1);
    EXPECT_NEAR(bn.running_mean[c], 0.1 * mean, 1e-12);
    EXPECT_NEAR(bn.running_var[c], 0.9 + 0.1 * unbiased, 1e-12);
  }
}

TEST(BatchNorm, EvalIsPerChannelAffine) {
  std::mt19937_64 rng(8);
  BatchNormState<double> bn(3);
  bn.gamma = {1.5, -0.3, 0.7};
  bn.beta = {0.2, 0.0, -1.1};
  bn.running_mean = {0.4, -2.0, 1.0};
  bn.running_var = {2.0, 0.5, 1.0};
  // Probe with two constant inputs per channel and recover a_k, b_k.
  const auto y0 = batchnorm_eval(Tensor<double>({1, 3, 1, 1}, 0.0), bn);
  const auto y1 = batchnorm_eval(Tensor<double>({1, 3, 1, 1}, 1.0), bn);
  const auto x = random_tensor<double>({2, 3, 3, 3}, rng);
  const auto y = batchnorm_eval(x, bn);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      const double a = y1[c] - y0[c], b = y0[c];
      EXPECT_NEAR(a, bn.eval_scale(c), 1e-12);
      EXPECT_NEAR(b, bn.zero_input_constant()[c], 1e-12);
      for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(y.plane(n, c)[i], a * x.plane(n, c)[i] + b, 1e-12);
    }
}

TEST(BatchNorm, ZeroInputGivesBranchConstant) {
  BatchNormState<double> bn(2);
  bn.gamma = {2.0, 0.5};
  bn.beta = {0.1, -0.2};
  bn.running_mean = {1.0, 3.0};
  bn.running_var = {3.0, 0.25};
  const auto y = batchnorm_eval(Tensor<double>({1, 2, 2, 2}, 0.0), bn);
  for (std::size_t c = 0; c < 2; ++c) {
    const double want = bn.beta[c] - bn.gamma[c] * bn.running_mean[c] / std::sqrt(bn.running_var[c] + bn.epsilon);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.plane(0, c)[i], want, 1e-12);
  }
}

TEST(BatchNorm, DegenerateBatch) {
  BatchNormState<float> bn(2);
  EXPECT_THROW(batchnorm(Tensor<float>({1, 2, 1, 1}), bn, BnMode::train), DegenerateBatchError);
  bn.momentum = 1.5f;
  EXPECT_THROW(bn.validate(), ConfigError);
}

TEST(Relu, ClampsNegatives) {
  Tensor<float> x({1, 1, 1, 4}, std::vector<float>{-2.0f, -0.0f, 0.5f, 3.0f});
  const auto y = relu(x);
  EXPECT_EQ(y.vec(), (std::vector<float>{0.0f, 0.0f, 0.5f, 3.0f}));
}

TEST(Heads, PoolAndUpsample) {
  const auto pooled = global_avg_pool(Tensor<float>({2, 3, 4, 4}, 1.25f));
  EXPECT_EQ(pooled.shape(), (Shape4{2, 3, 1, 1}));
  for (float v : pooled.vec()) EXPECT_FLOAT_EQ(v, 1.25f);
  const auto up = upsample_nearest2x(Tensor<float>({1, 1, 1, 1}, 0.75f));
  EXPECT_EQ(up.shape(), (Shape4{1, 1, 2, 2}));
  for (float v : up.vec()) EXPECT_EQ(v, 0.75f);
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  for (std::size_t k : {2u, 5u, 10u}) {
    Tensor<double> logits({3, k, 1, 1}, 0.4);
    std::vector<std::int32_t> labels = {0, 1, static_cast<std::int32_t>(k - 1)};
    EXPECT_NEAR(softmax_cross_entropy(logits, labels).loss, std::log(static_cast<double>(k)), 1e-12);
  }
}

TEST(CrossEntropy, LargeMarginApproachesZero) {
  Tensor<double> logits({1, 4, 1, 1}, 0.0);
  logits[2] = 60.0;
  std::vector<std::int32_t> labels = {2};
  EXPECT_LT(softmax_cross_entropy(logits, labels).loss, 1e-20);
}

TEST(CrossEntropy, BadLabel) {
  Tensor<float> logits({1, 3, 1, 1});
  std::vector<std::int32_t> labels = {3};
  EXPECT_THROW(softmax_cross_entropy(logits, labels), DataError);
}

TEST(Dice, IdenticalDisjointAndHalf) {
  std::vector<float> a = {1, 1, 0, 0, 1, 0};
  EXPECT_EQ(dice(a, a), 1.0);
  std::vector<float> b = {0, 0, 1, 1, 0, 1};
  EXPECT_EQ(dice(a, b), 0.0);
  // Prediction covers half of an 8-pixel true mask and nothing else.
  std::vector<float> truth(16, 0.0f), pred(16, 0.0f);
  for (int i = 0; i < 8; ++i) truth[i] = 1.0f;
  for (int i = 0; i < 4; ++i) pred[i] = 1.0f;
  EXPECT_EQ(dice(pred, truth), 2.0 / 3.0);
  std::vector<float> empty(5, 0.0f);
  EXPECT_EQ(dice(empty, empty), 1.0);
}

TEST(SoftDice, PerfectAndInverted) {
  Tensor<double> q({1, 1, 4, 4}, 0.0);
  for (std::size_t i = 0; i < 6; ++i) q[i] = 1.0;
  EXPECT_NEAR(soft_dice_loss(q, q).loss, 0.0, 1e-12);
  Tensor<double> inv(q.shape());
  for (std::size_t i = 0; i < q.size(); ++i) inv[i] = 1.0 - q[i];
  EXPECT_GT(soft_dice_loss(inv, q).loss, 0.9);
}

TEST(Sgd, MatchesHandUnrolledSteps) {
  std::vector<double> p = {1.0, -2.0}, v = {0.0, 0.0};
  const std::vector<double> g = {0.5, 0.25};
  SgdConfig<double> cfg{0.1, 0.9, 0.01};
  sgd_step<double>(p, g, v, cfg);
  // v1 = g + wd p0 ; p1 = p0 - lr v1
  const double v1a = 0.5 + 0.01 * 1.0, p1a = 1.0 - 0.1 * v1a;
  EXPECT_DOUBLE_EQ(v[0], v1a);
  EXPECT_DOUBLE_EQ(p[0], p1a);
  sgd_step<double>(p, g, v, cfg);
  const double v2a = 0.9 * v1a + 0.5 + 0.01 * p1a;
  EXPECT_DOUBLE_EQ(v[0], v2a);
  EXPECT_DOUBLE_EQ(p[0], p1a - 0.1 * v2a);
  const double v1b = 0.25 + 0.01 * -2.0, p1b = -2.0 - 0.1 * v1b;
  const double v2b = 0.9 * v1b + 0.25 + 0.01 * p1b;
  EXPECT_DOUBLE_EQ(p[1], p1b - 0.1 * v2b);
}

TEST(Numerics, NonFiniteActivationsRaise) {
  Tensor<float> x({1, 1, 2, 2}, 1.0f);
  x[1] = std::numeric_limits<float>::infinity();
  ConvKernel<float> k(1, 1, 1, 1, 1, 0);
  k.weights[0] = 1.0f;
  EXPECT_THROW(conv2d(x, k), NumericError);
}
