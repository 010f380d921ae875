#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace irismatch;
using irismatch::testing::gradcheck;
using irismatch::testing::max_abs_diff;
using irismatch::testing::random_tensor;
using irismatch::testing::reference_conv;

namespace {

constexpr double kGradTolerance = 1e-4;

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Elementwise, ForwardValues) {
  const Tensor x({4}, {-1.0, 0.0, 0.5, 2.0});
  const auto e = values(elu(x));
  EXPECT_DOUBLE_EQ(e[0], std::exp(-1.0) - 1.0);
  EXPECT_DOUBLE_EQ(e[1], 0.0);
  EXPECT_DOUBLE_EQ(e[3], 2.0);
  const auto r = values(relu(x));
  EXPECT_EQ(r[0], 0.0);
  EXPECT_EQ(r[2], 0.5);
  const auto s = values(sigmoid(x));
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  EXPECT_NEAR(s[3], 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
}

TEST(Elementwise, SigmoidSaturatesWithoutOverflow) {
  const Tensor x({2}, {-800.0, 800.0});
  const auto s = values(sigmoid(x));
  EXPECT_EQ(s[0], 0.0);
  EXPECT_EQ(s[1], 1.0);
}

TEST(Elementwise, ShapeMismatchThrows) {
  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  EXPECT_THROW(mul(Tensor::zeros({2, 1}), Tensor::zeros({1, 2})), ShapeError);
  EXPECT_THROW(reshape(Tensor::zeros({2, 3}), {4}), ShapeError);
}

TEST(GradCheck, ElementwiseAndReductions) {
  Rng rng(1);
  const auto a = random_tensor({2, 3}, rng), b = random_tensor({2, 3}, rng);
  EXPECT_LT(gradcheck([](const auto& in) { return add(in[0], in[1]); }, {a, b}).worst_relative_error, kGradTolerance);
  EXPECT_LT(gradcheck([](const auto& in) { return mul(in[0], in[1]); }, {a, b}).worst_relative_error, kGradTolerance);
  EXPECT_LT(gradcheck([](const auto& in) { return scale(in[0], -1.7); }, {a}).worst_relative_error, kGradTolerance);
  EXPECT_LT(gradcheck([](const auto& in) { return mean(in[0]); }, {a}).worst_relative_error, kGradTolerance);
  EXPECT_LT(gradcheck([](const auto& in) { return reshape(in[0], {3, 2}); }, {a}).worst_relative_error, kGradTolerance);
}

TEST(GradCheck, Activations) {
  Rng rng(2);
  const auto x = random_tensor({2, 2, 3, 3}, rng, -2.0, 2.0);
  EXPECT_LT(gradcheck([](const auto& in) { return elu(in[0]); }, {x}).worst_relative_error, kGradTolerance);
  EXPECT_LT(gradcheck([](const auto& in) { return sigmoid(in[0]); }, {x}).worst_relative_error, kGradTolerance);
  // Keep samples away from the kink.
  std::vector<double> v(x.data().begin(), x.data().end());
  for (double& t : v) t = (t >= 0 ? 0.1 : -0.1) + t;
  EXPECT_LT(gradcheck([](const auto& in) { return relu(in[0]); }, {Tensor(x.shape(), v, true)}).worst_relative_error,
            kGradTolerance);
}

TEST(GradCheck, LayoutOps) {
  Rng rng(3);
  const auto a = random_tensor({2, 1, 2, 3}, rng), b = random_tensor({2, 2, 2, 3}, rng);
  EXPECT_LT(gradcheck([](const auto& in) { return concat_channels({in[0], in[1]}); }, {a, b}).worst_relative_error,
            kGradTolerance);
  EXPECT_LT(gradcheck([](const auto& in) { return gather_batch(in[0], {1, 0, 1}); }, {b}).worst_relative_error,
            kGradTolerance);
  EXPECT_LT(gradcheck([](const auto& in) { return global_avg_pool(in[0]); }, {b}).worst_relative_error,
            kGradTolerance);
  EXPECT_LT(gradcheck([](const auto& in) { return wrap_pad(in[0], 3, 5); }, {b}).worst_relative_error, kGradTolerance);
}

TEST(Layout, ConcatChannelsInterleavesPerBatch) {
  const Tensor a({2, 1, 1, 1}, {1.0, 2.0});
  const Tensor b({2, 1, 1, 1}, {10.0, 20.0});
  EXPECT_EQ(values(concat_channels({a, b})), (std::vector<double>{1.0, 10.0, 2.0, 20.0}));
}

TEST(Layout, GlobalAvgPoolAveragesEachPlane) {
  const Tensor x({1, 2, 1, 2}, {1.0, 3.0, -2.0, 4.0});
  EXPECT_EQ(values(global_avg_pool(x)), (std::vector<double>{2.0, 1.0}));
}

TEST(WrapPad, PaddedColumnsReadModularSource) {
  // W = 4, kw = 5 => two columns each side.
  const Tensor x({1, 1, 1, 4}, {0.0, 1.0, 2.0, 3.0});
  const Tensor p = wrap_pad(x, 1, 5);
  EXPECT_EQ(values(p), (std::vector<double>{2.0, 3.0, 0.0, 1.0, 2.0, 3.0, 0.0, 1.0}));
}

TEST(WrapPad, RowsAreZeroPadded) {
  const Tensor x({1, 1, 1, 2}, {5.0, 6.0});
  const Tensor p = wrap_pad(x, 3, 1);
  EXPECT_EQ(values(p), (std::vector<double>{0.0, 0.0, 5.0, 6.0, 0.0, 0.0}));
}

TEST(WrapPad, HalfWidthBeyondImageWidthThrows) {
  const Tensor x({1, 1, 2, 3}, std::vector<double>(6, 1.0));
  EXPECT_NO_THROW(wrap_pad(x, 1, 7));
  EXPECT_THROW(wrap_pad(x, 1, 9), ShapeError);
}

struct ConvCase {
  std::size_t B, C, H, W, Co, kh, kw, sr, sc;
  bool bias;
};

class ConvOracle : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvOracle, MatchesReferenceForEveryPadding) {
  const ConvCase c = GetParam();
  Rng rng(c.B * 131 + c.C * 17 + c.kw);
  const auto x = random_tensor({c.B, c.C, c.H, c.W}, rng, -1, 1, false);
  const auto w = random_tensor({c.Co, c.C, c.kh, c.kw}, rng, -1, 1, false);
  const Tensor b = c.bias ? random_tensor({c.Co}, rng, -1, 1, false) : Tensor();
  const std::vector<double> bv = c.bias ? values(b) : std::vector<double>{};
  const Stride stride{c.sr, c.sc};

  const Tensor none = conv2d(x, w, b, stride, PaddingSpec::none());
  const auto ref_none = reference_conv(values(x), c.B, c.C, c.H, c.W, values(w), c.Co, c.kh, c.kw, bv, 0, 0, false, c.sr, c.sc);
  ASSERT_EQ(none.numel(), ref_none.size());
  EXPECT_LE(max_abs_diff(none.data(), ref_none), 1e-12);

  const Tensor zero = conv2d(x, w, b, stride, PaddingSpec::same(c.kh, c.kw));
  const auto ref_zero =
      reference_conv(values(x), c.B, c.C, c.H, c.W, values(w), c.Co, c.kh, c.kw, bv, c.kh / 2, c.kw / 2, false, c.sr, c.sc);
  ASSERT_EQ(zero.numel(), ref_zero.size());
  EXPECT_LE(max_abs_diff(zero.data(), ref_zero), 1e-12);

  const Tensor wrap = conv2d(x, w, b, stride, PaddingSpec::wrap(c.kh, c.kw));
  const auto ref_wrap =
      reference_conv(values(x), c.B, c.C, c.H, c.W, values(w), c.Co, c.kh, c.kw, bv, c.kh / 2, c.kw / 2, true, c.sr, c.sc);
  ASSERT_EQ(wrap.numel(), ref_wrap.size());
  EXPECT_LE(max_abs_diff(wrap.data(), ref_wrap), 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvOracle,
                         ::testing::Values(ConvCase{2, 1, 5, 8, 2, 3, 5, 1, 1, true},
                                           ConvCase{1, 1, 7, 9, 2, 7, 9, 1, 1, false},
                                           ConvCase{2, 3, 6, 7, 4, 3, 3, 1, 1, true},
                                           ConvCase{1, 2, 9, 10, 3, 3, 3, 2, 2, true},
                                           ConvCase{3, 4, 5, 6, 2, 1, 1, 1, 1, false},
                                           ConvCase{1, 2, 8, 11, 2, 5, 3, 2, 1, true}));

TEST(Conv2d, OutputShapes) {
  const Tensor x = Tensor::zeros({2, 3, 10, 12});
  const Tensor w = Tensor::zeros({5, 3, 3, 5});
  EXPECT_EQ(conv2d(x, w).shape(), (Shape{2, 5, 8, 8}));
  EXPECT_EQ(conv2d(x, w, {}, {}, PaddingSpec::same(3, 5)).shape(), (Shape{2, 5, 10, 12}));
  EXPECT_EQ(conv2d(x, w, {}, {2, 2}, PaddingSpec::same(3, 5)).shape(), (Shape{2, 5, 5, 6}));
}

TEST(Conv2d, RejectsInvalidArguments) {
  const Tensor x = Tensor::zeros({1, 2, 6, 6});
  EXPECT_THROW(conv2d(x, Tensor::zeros({1, 3, 3, 3})), ShapeError);      // channel mismatch
  EXPECT_THROW(conv2d(x, Tensor::zeros({1, 2, 2, 3})), ShapeError);      // even kernel
  EXPECT_THROW(conv2d(x, Tensor::zeros({1, 2, 3, 3}), Tensor::zeros({2})), ShapeError);  // bias size
  EXPECT_THROW(conv2d(Tensor::zeros({2, 6, 6}), Tensor::zeros({1, 2, 3, 3})), ShapeError);
}

TEST(GradCheck, Conv2dAllPaddings) {
  Rng rng(4);
  const auto x1 = random_tensor({2, 1, 5, 7}, rng);
  const auto x3 = random_tensor({2, 3, 5, 7}, rng);
  const auto w1 = random_tensor({2, 1, 3, 5}, rng);
  const auto w3 = random_tensor({2, 3, 3, 3}, rng);
  const auto b = random_tensor({2}, rng);
  for (const auto& pad : {PaddingSpec::none(), PaddingSpec::same(3, 5), PaddingSpec::wrap(3, 5)}) {
    EXPECT_LT(gradcheck([&](const auto& in) { return conv2d(in[0], in[1], in[2], {}, pad); }, {x1, w1, b})
                  .worst_relative_error,
              kGradTolerance);
  }
  for (const auto& pad : {PaddingSpec::none(), PaddingSpec::same(3, 3), PaddingSpec::wrap(3, 3)}) {
    EXPECT_LT(gradcheck([&](const auto& in) { return conv2d(in[0], in[1], in[2], {2, 2}, pad); }, {x3, w3, b})
                  .worst_relative_error,
              kGradTolerance);
  }
}

TEST(UnitCircle, PairsLandOnTheCircle) {
  Rng rng(5);
  const auto x = random_tensor({2, 4, 3, 3}, rng, -1, 1, false);
  const Tensor y = unit_circle_normalize(x);
  const std::size_t plane = 9;
  for (std::size_t bp = 0; bp < 4; ++bp) {
    for (std::size_t i = 0; i < plane; ++i) {
      const double a = y.data()[2 * bp * plane + i], b = y.data()[2 * bp * plane + plane + i];
      EXPECT_NEAR(std::hypot(a, b), 1.0, 1e-15);
    }
  }
}

TEST(UnitCircle, DegeneratePixelsGiveZeroAndNoGradient) {
  Tensor x({1, 2, 1, 2}, {0.0, 3.0, 0.0, 4.0}, true);
  const Tensor y = unit_circle_normalize(x);
  EXPECT_EQ(y.data()[0], 0.0);
  EXPECT_EQ(y.data()[2], 0.0);
  EXPECT_DOUBLE_EQ(y.data()[1], 0.6);
  EXPECT_DOUBLE_EQ(y.data()[3], 0.8);
  backward(sum(y));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[2], 0.0);
}

TEST(UnitCircle, OddChannelCountThrows) {
  EXPECT_THROW(unit_circle_normalize(Tensor::zeros({1, 3, 2, 2})), ShapeError);
}

TEST(GradCheck, UnitCircleNormalize) {
  Rng rng(6);
  const auto x = random_tensor({2, 4, 3, 2}, rng);
  EXPECT_LT(gradcheck([](const auto& in) { return unit_circle_normalize(in[0]); }, {x}).worst_relative_error,
            kGradTolerance);
}

TEST(BatchNorm, TrainModeStandardizesEachChannel) {
  Rng rng(7);
  // Per-channel variance far above eps so the normalized variance is 1 to 1e-6.
  const auto x = random_tensor({4, 3, 5, 5}, rng, -30.0, 30.0, false);
  BatchNormStats stats(3);
  const Tensor y = batch_norm(x, {}, {}, stats, true);
  const std::size_t plane = 25, count = 4 * plane;
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0.0, ss = 0.0;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < plane; ++i) s += y.data()[(b * 3 + c) * plane + i];
    const double mu = s / count;
    for (std::size_t b = 0; b < 4; ++b)
      for (std::size_t i = 0; i < plane; ++i) ss += std::pow(y.data()[(b * 3 + c) * plane + i] - mu, 2);
    EXPECT_NEAR(mu, 0.0, 1e-12);
    EXPECT_NEAR(ss / count, 1.0, 1e-6);
  }
}

TEST(BatchNorm, RunningStatsFollowMomentumWithUnbiasedVariance) {
  const Tensor x({2, 1, 1, 2}, {1.0, 2.0, 3.0, 6.0});
  BatchNormStats stats(1);
  batch_norm(x, {}, {}, stats, true);
  // Batch mean 3, biased var 3.5, unbiased 14/3.
  EXPECT_DOUBLE_EQ(stats.mean[0], 0.9 * 0.0 + 0.1 * 3.0);
  EXPECT_DOUBLE_EQ(stats.var[0], 0.9 * 1.0 + 0.1 * (14.0 / 3.0));
}

TEST(BatchNorm, EvalModeUsesRunningStats) {
  BatchNormStats stats(1);
  stats.mean[0] = 2.0;
  stats.var[0] = 4.0;
  const Tensor gamma({1}, {3.0}), beta({1}, {1.0});
  const Tensor y = batch_norm(Tensor({1, 1, 1, 1}, {6.0}), gamma, beta, stats, false);
  EXPECT_NEAR(y.item(), 3.0 * (4.0 / std::sqrt(4.0 + 1e-5)) + 1.0, 1e-12);
  EXPECT_EQ(stats.mean[0], 2.0);
}

TEST(BatchNorm, TrainModeNeedsTwoSamples) {
  BatchNormStats stats(1);
  EXPECT_THROW(batch_norm(Tensor::zeros({1, 1, 3, 3}), {}, {}, stats, true), ShapeError);
  EXPECT_THROW(batch_norm(Tensor::zeros({2, 2, 3, 3}), {}, {}, stats, true), ShapeError);
}

TEST(GradCheck, BatchNormTrainAndEval) {
  Rng rng(8);
  const auto x = random_tensor({3, 2, 2, 3}, rng);
  const auto gamma = random_tensor({2}, rng, 0.5, 1.5), beta = random_tensor({2}, rng);
  EXPECT_LT(gradcheck(
                [](const auto& in) {
                  BatchNormStats stats(2);
                  return batch_norm(in[0], in[1], in[2], stats, true);
                },
                {x, gamma, beta})
                .worst_relative_error,
            kGradTolerance);
  EXPECT_LT(gradcheck(
                [](const auto& in) {
                  BatchNormStats stats(2);
                  stats.mean = {0.1, -0.2};
                  stats.var = {0.5, 2.0};
                  return batch_norm(in[0], in[1], in[2], stats, false);
                },
                {x, gamma, beta})
                .worst_relative_error,
            kGradTolerance);
}

TEST(Dropout, EvalAndZeroRateAreIdentity) {
  Rng rng(9);
  const auto x = random_tensor({2, 3}, rng, -1, 1, false);
  EXPECT_EQ(values(dropout(x, 0.5, false, rng)), values(x));
  EXPECT_EQ(values(dropout(x, 0.0, true, rng)), values(x));
}

TEST(Dropout, RateOutsideRangeThrows) {
  Rng rng(9);
  const Tensor x = Tensor::zeros({2});
  EXPECT_THROW(dropout(x, 1.0, true, rng), std::invalid_argument);
  EXPECT_THROW(dropout(x, -0.1, true, rng), std::invalid_argument);
}

TEST(Dropout, KeptValuesAreRescaled) {
  Rng rng(10);
  const Tensor x = Tensor::full({20000}, 1.0);
  const Tensor y = dropout(x, 0.3, true, rng);
  std::size_t dropped = 0;
  for (double v : y.data()) {
    if (v == 0.0) {
      ++dropped;
    } else {
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.7);
    }
  }
  EXPECT_NEAR(static_cast<double>(dropped) / 20000.0, 0.3, 0.015);
}

TEST(GradCheck, DropoutWithFixedMask) {
  Rng rng(11);
  const auto x = random_tensor({2, 5}, rng);
  EXPECT_LT(gradcheck(
                [](const auto& in) {
                  Rng mask_rng(99);
                  return dropout(in[0], 0.4, true, mask_rng);
                },
                {x})
                .worst_relative_error,
            kGradTolerance);
}

TEST(Bce, MatchesDirectFormula) {
  const Tensor p({3}, {0.9, 0.2, 0.6});
  const Tensor y({3}, {1.0, 0.0, 0.0});
  const double expected = -(std::log(0.9) + std::log(0.8) + std::log(0.4)) / 3.0;
  EXPECT_NEAR(bce_loss(p, y).item(), expected, 1e-15);
}

TEST(Bce, ClampKeepsLossFinite) {
  const Tensor p({2}, {0.0, 1.0});
  const Tensor y({2}, {1.0, 0.0});
  EXPECT_NEAR(bce_loss(p, y).item(), -std::log(kBceEpsilon), 1e-9);
}

TEST(GradCheck, Bce) {
  Rng rng(12);
  const auto p = random_tensor({6}, rng, 0.05, 0.95);
  const Tensor y({6}, {1, 0, 1, 1, 0, 0});
  EXPECT_LT(gradcheck([&](const auto& in) { return bce_loss(in[0], y); }, {p}).worst_relative_error, kGradTolerance);
  // Through the sigmoid, as used in training.
  const auto z = random_tensor({6}, rng, -3, 3);
  EXPECT_LT(gradcheck([&](const auto& in) { return bce_loss(sigmoid(in[0]), y); }, {z}).worst_relative_error,
            kGradTolerance);
}
