#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace irismatch;

TEST(Tensor, ShapeMustMatchValueCount) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), ShapeError);
  EXPECT_NO_THROW(Tensor({2, 3}, std::vector<double>(6)));
}

TEST(Tensor, FactoriesFillValues) {
  const Tensor z = Tensor::zeros({2, 2});
  const Tensor f = Tensor::full({3}, 2.5);
  EXPECT_EQ(z.numel(), 4u);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
  for (double v : f.data()) EXPECT_EQ(v, 2.5);
  EXPECT_EQ(Tensor::scalar(4.0).item(), 4.0);
}

TEST(Tensor, ItemRejectsNonScalar) { EXPECT_THROW(Tensor::zeros({2}).item(), ShapeError); }

TEST(Autograd, ProductRuleOnSharedInput) {
  Tensor x({1}, {3.0}, true);
  backward(sum(mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Autograd, GradientsAccumulateAcrossBackwardCalls) {
  Tensor x({2}, {1.0, 2.0}, true);
  backward(sum(scale(x, 3.0)));
  backward(sum(scale(x, 3.0)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
}

TEST(Autograd, SecondBackwardOnSameGraphThrows) {
  Tensor x({1}, {1.0}, true);
  const Tensor loss = sum(mul(x, x));
  backward(loss);
  EXPECT_THROW(backward(loss), AutogradError);
}

TEST(Autograd, BackwardNeedsScalarTrackedLoss) {
  Tensor x({2}, {1.0, 2.0}, true);
  EXPECT_THROW(backward(mul(x, x)), AutogradError);
  const Tensor c({1}, {1.0});
  EXPECT_THROW(backward(c), AutogradError);
}

TEST(Autograd, NoGradGuardSuppressesRecording) {
  Tensor x({1}, {2.0}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = mul(x, x);
  }
  EXPECT_TRUE(y.is_leaf());
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autograd, UntrackedInputsReceiveNoGradient) {
  Tensor x({1}, {2.0}, true);
  Tensor c({1}, {5.0});
  backward(sum(mul(x, c)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 5.0);
  EXPECT_FALSE(c.has_grad());
}

TEST(Autograd, MutableDataOnlyForLeaves) {
  Tensor x({1}, {2.0}, true);
  Tensor y = scale(x, 2.0);
  EXPECT_NO_THROW(x.mutable_data());
  EXPECT_THROW(y.mutable_data(), AutogradError);
}

TEST(Autograd, DeepChainDoesNotOverflowStack) {
  Tensor x({1}, {1.0}, true);
  Tensor y = x;
  for (int i = 0; i < 20000; ++i) y = scale(y, 1.0);
  backward(sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(Autograd, DiamondGraphSumsBothPaths) {
  Tensor x({3}, {1.0, -2.0, 0.5}, true);
  const Tensor a = scale(x, 2.0);
  const Tensor b = mul(x, x);
  backward(sum(add(a, b)));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 + 2.0 * x.data()[i]);
}

TEST(Autograd, CloneAndDetachCopyStorage) {
  Tensor x({2}, {1.0, 2.0}, true);
  Tensor c = x.clone();
  Tensor d = x.detach();
  c.mutable_data()[0] = 9.0;
  EXPECT_EQ(x.data()[0], 1.0);
  EXPECT_TRUE(c.requires_grad());
  EXPECT_FALSE(d.requires_grad());
}
