#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace irismatch;
using irismatch::testing::gradcheck;
using irismatch::testing::random_tensor;
using irismatch::testing::tiny_architecture;

namespace {

// Independent count: conv weights + biases + batch-norm affine, per block,
// plus the 1x1 head and the bank filters.
std::size_t expected_parameter_count(const ArchitectureSpec& a) {
  std::size_t n = 0;
  for (const auto& k : a.bank_kernels) n += 2 * k.height * k.width + (a.bank_bias ? 2 : 0);
  std::size_t cin = 4 * a.bank_kernels.size();
  for (const auto& b : a.matcher.blocks) {
    n += b.kernel * b.kernel * cin * b.out_channels + b.out_channels;
    if (b.batch_norm) n += 2 * b.out_channels;
    cin = b.out_channels;
  }
  return n + cin + 1;
}

NormalizedIris random_iris(std::size_t h, std::size_t w, Rng& rng) {
  NormalizedIris img(h, w);
  for (double& v : img.pixels) v = rng.uniform();
  return img;
}

}  // namespace

TEST(ParameterCount, SingleConvWithBias) {
  const Tensor w = Tensor::zeros({2, 1, 3, 3}), b = Tensor::zeros({2});
  EXPECT_EQ(parameter_count({w, b}), 20u);
}

TEST(ParameterCount, DefaultArchitectureMatchesOracleAndSoftTarget) {
  const ArchitectureSpec a;
  const IrisMatchModel model(a, 1);
  EXPECT_EQ(model.parameter_count(), expected_parameter_count(a));
  EXPECT_EQ(model.parameter_count(), 378465u);
  EXPECT_GE(static_cast<double>(model.parameter_count()), 0.8 * 416930.0);
  EXPECT_LE(static_cast<double>(model.parameter_count()), 1.2 * 416930.0);
}

TEST(ParameterCount, ExtraBlockAddsConvAndAffineTerms) {
  ArchitectureSpec a = tiny_architecture();
  const std::size_t before = IrisMatchModel(a, 1).parameter_count();
  const std::size_t cin = a.matcher.blocks.back().out_channels;
  a.matcher.blocks.push_back({5, 3, 1, true, 0.0});
  const std::size_t after = IrisMatchModel(a, 1).parameter_count();
  // The head now reads 5 channels instead of cin.
  EXPECT_EQ(after - before, 9 * cin * 5 + 5 + 2 * 5 + 5 - cin);
}

TEST(MatcherSpec, RoundTripsThroughText) {
  const MatcherSpec d = MatcherSpec::defaults();
  EXPECT_EQ(MatcherSpec::parse(d.to_string()).to_string(), d.to_string());
  EXPECT_EQ(d.blocks.size(), 5u);
  EXPECT_EQ(d.blocks[0].out_channels, 32u);
  EXPECT_EQ(d.blocks[0].stride, 1u);
  EXPECT_EQ(d.blocks[1].stride, 2u);
  EXPECT_DOUBLE_EQ(d.blocks[2].dropout, 0.3);
  EXPECT_DOUBLE_EQ(d.blocks[3].dropout, 0.3);
  EXPECT_DOUBLE_EQ(d.blocks[4].dropout, 0.0);
}

TEST(MatcherSpec, RejectsMalformedText) {
  EXPECT_TRUE(MatcherSpec::parse("").blocks.empty());
  EXPECT_THROW(MatcherSpec::parse("8:3"), std::invalid_argument);
  EXPECT_THROW(MatcherSpec::parse("8:4:1:bn:0"), std::invalid_argument);
  EXPECT_THROW(MatcherSpec::parse("8:3:1:maybe:0"), std::invalid_argument);
  EXPECT_THROW(MatcherSpec::parse("8:3:1:bn:1.0"), std::invalid_argument);
}

TEST(ArchitectureSpec, RoundTripsAndRejectsUnknownKeys) {
  const ArchitectureSpec a = tiny_architecture();
  EXPECT_EQ(ArchitectureSpec::parse(a.to_string()), a);
  EXPECT_THROW(ArchitectureSpec::parse(a.to_string() + "colour=blue\n"), std::invalid_argument);
}

TEST(PairInput, ChannelLayoutAndSymmetry) {
  Rng rng(1);
  const auto bank = make_unit_circle_bank(default_bank_kernels(), true, rng);
  const auto q = random_iris(16, 40, rng), r = random_iris(16, 40, rng);
  const Tensor same = pair_input(q, q, bank);
  ASSERT_EQ(same.shape(), (Shape{1, 20, 16, 40}));
  const std::size_t half = 10 * 16 * 40;
  for (std::size_t i = 0; i < half; ++i) ASSERT_EQ(same.data()[i], same.data()[half + i]);

  const Tensor qr = pair_input(q, r, bank), rq = pair_input(r, q, bank);
  for (std::size_t i = 0; i < half; ++i) {
    ASSERT_EQ(qr.data()[i], rq.data()[half + i]);
    ASSERT_EQ(qr.data()[half + i], rq.data()[i]);
  }
  EXPECT_THROW(pair_input(q, random_iris(16, 41, rng), bank), ShapeError);
}

TEST(PairInput, BankIsSharedByBothImages) {
  Rng rng(2);
  auto bank = make_unit_circle_bank({{3, 3}}, true, rng);
  const auto q = random_iris(6, 10, rng), r = random_iris(6, 10, rng);
  const Tensor before = pair_input(q, r, bank);
  bank.filters[0].weight.mutable_data()[4] += 0.25;
  const Tensor after = pair_input(q, r, bank);
  const std::size_t half = 2 * 6 * 10;
  bool first = false, second = false;
  for (std::size_t i = 0; i < half; ++i) {
    first = first || before.data()[i] != after.data()[i];
    second = second || before.data()[half + i] != after.data()[half + i];
  }
  EXPECT_TRUE(first);
  EXPECT_TRUE(second);
}

TEST(IrisMatchModel, ZeroHeadGivesExactlyOneHalf) {
  IrisMatchModel model(tiny_architecture(), 3);
  for (double& v : model.matcher().head_weight().mutable_data()) v = 0.0;
  for (double& v : model.matcher().head_bias().mutable_data()) v = 0.0;
  Rng rng(3);
  EXPECT_EQ(model.match_probability(random_iris(12, 24, rng), random_iris(12, 24, rng)), 0.5);
}

TEST(IrisMatchModel, EvalModeIsDeterministicAndInRange) {
  IrisMatchModel model(tiny_architecture(), 4);
  Rng rng(4);
  const auto q = random_iris(12, 24, rng), r = random_iris(12, 24, rng);
  const double p = model.match_probability(q, r);
  EXPECT_EQ(p, model.match_probability(q, r));
  EXPECT_GT(p, 0.0);
  EXPECT_LT(p, 1.0);
}

TEST(IrisMatchModel, WrongGeometryThrows) {
  IrisMatchModel model(tiny_architecture(), 5);
  Rng rng(5);
  EXPECT_THROW(model.match_probability(random_iris(10, 24, rng), random_iris(10, 24, rng)), ShapeError);
}

TEST(IrisMatchModel, SameSeedSameWeights) {
  IrisMatchModel a(tiny_architecture(), 6), b(tiny_architecture(), 6), c(tiny_architecture(), 7);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t k = 0; k < pa[i].numel(); ++k) {
      ASSERT_EQ(pa[i].data()[k], pb[i].data()[k]);
      differs = differs || pa[i].data()[k] != pc[i].data()[k];
    }
  }
  EXPECT_TRUE(differs);
}

TEST(MatcherModel, FullyConvolutionalOverHeights) {
  Rng rng(8);
  MatcherModel m(8, MatcherSpec::parse("4:3:1:bn:0,6:3:2:bn:0"), rng);
  for (std::size_t h : {5u, 9u, 16u}) {
    const auto x = random_tensor({2, 8, h, 12}, rng, -1, 1, false);
    NoGradGuard g;
    const Tensor p = m.forward(x, false);
    EXPECT_EQ(p.shape(), (Shape{2}));
  }
}

TEST(IrisMatchModel, TrainModeUpdatesBatchNormStats) {
  IrisMatchModel model(tiny_architecture(), 9);
  Rng rng(9);
  const auto xq = random_tensor({2, 1, 12, 24}, rng, 0, 1, false), xr = random_tensor({2, 1, 12, 24}, rng, 0, 1, false);
  double before = 0.0;
  for (const auto& e : model.state()) {
    if (e.name.ends_with("running_mean")) before += e.values[0];
  }
  model.forward(xq, xr, true, &rng);
  double after = 0.0;
  for (const auto& e : model.state()) {
    if (e.name.ends_with("running_mean")) after += e.values[0];
  }
  EXPECT_NE(before, after);
}

TEST(GradCheck, FullModelEvalMode) {
  IrisMatchModel model(tiny_architecture(), 10);
  Rng rng(10);
  std::vector<Tensor> inputs{random_tensor({1, 1, 12, 24}, rng, 0, 1), random_tensor({1, 1, 12, 24}, rng, 0, 1)};
  for (const auto& p : model.parameters()) inputs.push_back(p);
  const auto report = gradcheck([&](const auto& in) { return model.forward(in[0], in[1], false); }, inputs);
  EXPECT_LT(report.worst_relative_error, 1e-4) << "input " << report.worst_input;
}

TEST(GradCheck, FullModelTrainModeWithFixedDropout) {
  IrisMatchModel model(tiny_architecture(), 11);
  Rng rng(11);
  std::vector<Tensor> inputs{random_tensor({2, 1, 12, 24}, rng, 0, 1), random_tensor({2, 1, 12, 24}, rng, 0, 1)};
  for (const auto& p : model.parameters()) inputs.push_back(p);
  const auto report = gradcheck(
      [&](const auto& in) {
        Rng drop(5);
        return model.forward(in[0], in[1], true, &drop);
      },
      inputs);
  EXPECT_LT(report.worst_relative_error, 1e-4) << "input " << report.worst_input;
}
