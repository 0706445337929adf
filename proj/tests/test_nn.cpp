#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "spvnas/errors.hpp"
#include "spvnas/nn.hpp"

using namespace spvnas;
using namespace spvnas::nn;

namespace {

LinearLayer random_linear(Rng& rng, std::size_t in, std::size_t out) {
  LinearLayer l(in, out);
  for (auto& w : l.weight) w = static_cast<float>(rng.uniform(-1, 1));
  for (auto& b : l.bias) b = static_cast<float>(rng.uniform(-1, 1));
  return l;
}

}  // namespace

TEST(Linear, IdentityAndHandArithmetic) {
  LinearLayer id(2, 2);
  id.weight = {1, 0, 0, 1};
  const FeatureMatrix x(1, 2, {3, 4});
  EXPECT_EQ(linear_forward(id, x).data, (std::vector<float>{3, 4}));

  LinearLayer l(2, 1);
  l.weight = {2, 0};
  l.bias = {1};
  EXPECT_EQ(linear_forward(l, x).data, (std::vector<float>{7}));
}

TEST(Linear, MatchesTripleLoop) {
  Rng rng(1);
  auto l = random_linear(rng, 4, 3);
  const auto x = oracle::random_matrix(rng, 5, 4);
  const auto y = linear_forward(l, x);
  ASSERT_EQ(y.rows, 5u);
  ASSERT_EQ(y.cols, 3u);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t o = 0; o < 3; ++o) {
      double s = l.bias[o];
      for (std::size_t i = 0; i < 4; ++i) s += double(l.weight[o * 4 + i]) * x(r, i);
      EXPECT_NEAR(y(r, o), s, 1e-6);
    }
}

TEST(Linear, ChannelMismatchNamesBothDims) {
  LinearLayer l(3, 2);
  try {
    linear_forward(l, FeatureMatrix(2, 4));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('4'), std::string::npos);
    EXPECT_NE(msg.find('3'), std::string::npos);
  }
}

TEST(Linear, LeadingSliceReadsSubBlock) {
  Rng rng(2);
  auto big = random_linear(rng, 6, 5);
  LinearLayer small(4, 3);
  for (std::size_t o = 0; o < 3; ++o) {
    small.bias[o] = big.bias[o];
    for (std::size_t i = 0; i < 4; ++i) small.weight[o * 4 + i] = big.weight[o * 6 + i];
  }
  const auto x = oracle::random_matrix(rng, 7, 4);
  EXPECT_EQ(linear_forward(big, x, 3).data, linear_forward(small, x).data);
}

TEST(Linear, BackwardSimpleCases) {
  LinearLayer id(2, 2);
  id.weight = {1, 0, 0, 1};
  const FeatureMatrix x(1, 2, {3, 4});
  const auto g = linear_backward(id, x, FeatureMatrix(1, 2, {1, 2}));
  EXPECT_EQ(g.data, (std::vector<float>{1, 2}));

  LinearLayer z(2, 2);
  z.weight = {1, 2, 3, 4};
  const auto gz = linear_backward(z, x, FeatureMatrix(1, 2));
  for (float v : gz.data) EXPECT_EQ(v, 0.0f);
  for (float v : z.grad_weight) EXPECT_EQ(v, 0.0f);
  for (float v : z.grad_bias) EXPECT_EQ(v, 0.0f);
}

TEST(Linear, BackwardDoesNotMutateInput) {
  Rng rng(3);
  auto l = random_linear(rng, 4, 3);
  const auto x = oracle::random_matrix(rng, 5, 4);
  const auto copy = x;
  linear_forward(l, x);
  linear_backward(l, x, oracle::random_matrix(rng, 5, 3));
  EXPECT_EQ(x, copy);
}

TEST(Linear, FiniteDifferences) {
  for (int trial = 0; trial < 5; ++trial) {
    Rng rng(100 + trial);
    auto l = random_linear(rng, 5, 4);
    auto x = oracle::random_matrix(rng, 6, 5);
    const auto w = oracle::random_matrix(rng, 6, 4);
    l.zero_grad();
    const auto gx = linear_backward(l, x, w);
    auto loss = [&] { return oracle::weighted_sum(linear_forward(l, x), w); };
    EXPECT_LT(oracle::relative_error(oracle::to_double(gx.data), oracle::numeric_grad(x.data, loss, 1e-3)), 1e-3);
    EXPECT_LT(oracle::relative_error(oracle::to_double(l.grad_weight), oracle::numeric_grad(l.weight, loss, 1e-3)),
              1e-3);
    EXPECT_LT(oracle::relative_error(oracle::to_double(l.grad_bias), oracle::numeric_grad(l.bias, loss, 1e-3)), 1e-3);
  }
}

TEST(BatchNorm, TwoPointBatch) {
  BatchNormLayer bn(1);
  const auto y = batchnorm_forward(bn, FeatureMatrix(2, 1, {1, 3}));
  const double k = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y(0, 0), -k, 1e-6);
  EXPECT_NEAR(y(1, 0), k, 1e-6);
}

TEST(BatchNorm, ScaleShiftStatistics) {
  Rng rng(4);
  BatchNormLayer bn(3);
  bn.gamma = {2, 2, 2};
  bn.beta = {5, 5, 5};
  const std::size_t n = 256;
  FeatureMatrix x(n, 3);
  for (auto& v : x.data) v = static_cast<float>(rng.normal());
  const auto y = batchnorm_forward(bn, x);
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0, s = 0;
    for (std::size_t r = 0; r < n; ++r) m += y(r, j);
    m /= n;
    for (std::size_t r = 0; r < n; ++r) s += (y(r, j) - m) * (y(r, j) - m);
    EXPECT_NEAR(m, 5.0, 1e-4);
    EXPECT_NEAR(std::sqrt(s / n), 2.0, 1e-3);
  }
}

TEST(BatchNorm, InferenceIdentityStats) {
  BatchNormLayer bn(2);
  bn.mode = BnMode::kInference;
  const FeatureMatrix x(3, 2, {1, -2, 0.5f, 7, -3, 0});
  const auto y = batchnorm_forward(bn, x);
  for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_NEAR(y.data[i], x.data[i], 1e-4);
}

TEST(BatchNorm, Errors) {
  BatchNormLayer bn(2);
  EXPECT_THROW(batchnorm_forward(bn, FeatureMatrix(1, 2)), ShapeError);
  bn.mode = BnMode::kInference;
  EXPECT_THROW(batchnorm_backward(bn, FeatureMatrix(3, 2), FeatureMatrix(3, 2)), std::logic_error);
}

TEST(BatchNorm, RunningStatsMomentum) {
  BatchNormLayer bn(1);
  batchnorm_forward(bn, FeatureMatrix(2, 1, {1, 3}));
  EXPECT_NEAR(bn.running_mean[0], 0.2, 1e-6);
  // unbiased variance of {1, 3} is 2
  EXPECT_NEAR(bn.running_var[0], 0.9 + 0.2, 1e-6);
}

TEST(BatchNorm, BackwardProperties) {
  Rng rng(5);
  BatchNormLayer bn(3);
  const auto x = oracle::random_matrix(rng, 10, 3);
  batchnorm_forward(bn, x);
  const auto g = batchnorm_backward(bn, x, FeatureMatrix(10, 3, 1.0f));
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0;
    for (std::size_t r = 0; r < 10; ++r) m += g(r, j);
    EXPECT_NEAR(m / 10, 0.0, 1e-6);
  }
  bn.zero_grad();
  const auto go = oracle::random_matrix(rng, 10, 3);
  batchnorm_backward(bn, x, go);
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0;
    for (std::size_t r = 0; r < 10; ++r) s += go(r, j);
    EXPECT_NEAR(bn.grad_beta[j], s, 1e-5);
  }
}

TEST(BatchNorm, FiniteDifferences) {
  for (int trial = 0; trial < 5; ++trial) {
    Rng rng(200 + trial);
    BatchNormLayer bn(4);
    for (auto& g : bn.gamma) g = static_cast<float>(rng.uniform(0.5, 1.5));
    for (auto& b : bn.beta) b = static_cast<float>(rng.uniform(-1, 1));
    auto x = oracle::random_matrix(rng, 8, 4);
    const auto w = oracle::random_matrix(rng, 8, 4);
    batchnorm_forward(bn, x);
    bn.zero_grad();
    const auto gx = batchnorm_backward(bn, x, w);
    auto loss = [&] { return oracle::weighted_sum(batchnorm_forward(bn, x), w); };
    EXPECT_LT(oracle::relative_error(oracle::to_double(gx.data), oracle::numeric_grad(x.data, loss, 1e-3)), 1e-3);
    EXPECT_LT(oracle::relative_error(oracle::to_double(bn.grad_gamma), oracle::numeric_grad(bn.gamma, loss, 1e-3)),
              1e-3);
    EXPECT_LT(oracle::relative_error(oracle::to_double(bn.grad_beta), oracle::numeric_grad(bn.beta, loss, 1e-3)),
              1e-3);
  }
}

TEST(Relu, ForwardBackward) {
  EXPECT_EQ(relu_forward(FeatureMatrix(1, 3, {-1, 0, 2})).data, (std::vector<float>{0, 0, 2}));
  EXPECT_EQ(relu_backward(FeatureMatrix(1, 2, {-1, 2}), FeatureMatrix(1, 2, {5, 5})).data,
            (std::vector<float>{0, 5}));
}

TEST(Relu, FiniteDifferencesAwayFromKink) {
  for (int trial = 0; trial < 5; ++trial) {
    Rng rng(300 + trial);
    auto x = oracle::random_matrix(rng, 6, 5);
    for (auto& v : x.data) {
      if (std::abs(v) < 1e-2f) v = v < 0 ? -0.5f : 0.5f;
    }
    const auto w = oracle::random_matrix(rng, 6, 5);
    const auto gx = relu_backward(x, w);
    auto loss = [&] { return oracle::weighted_sum(relu_forward(x), w); };
    EXPECT_LT(oracle::relative_error(oracle::to_double(gx.data), oracle::numeric_grad(x.data, loss, 1e-3)), 1e-3);
  }
}

TEST(CrossEntropy, SimpleCases) {
  const std::vector<std::int32_t> zero{0};
  EXPECT_NEAR(cross_entropy(FeatureMatrix(1, 2), zero).loss, std::numbers::ln2, 1e-6);
  const auto sat = cross_entropy(FeatureMatrix(1, 2, {1000, 0}), zero);
  EXPECT_TRUE(std::isfinite(sat.loss));
  EXPECT_NEAR(sat.loss, 0.0, 1e-6);
}

TEST(CrossEntropy, MatchesExplicitSoftmax) {
  Rng rng(6);
  const auto z = oracle::random_matrix(rng, 6, 4, 3.0);
  const std::vector<std::int32_t> labels{0, 3, 1, -1, 2, 2};
  const auto res = cross_entropy(z, labels, -1);
  EXPECT_EQ(res.counted_rows, 5u);
  double loss = 0;
  for (std::size_t r = 0; r < 6; ++r) {
    double den = 0;
    for (std::size_t j = 0; j < 4; ++j) den += std::exp(double(z(r, j)));
    for (std::size_t j = 0; j < 4; ++j) {
      const double p = std::exp(double(z(r, j))) / den;
      const double expect = labels[r] < 0 ? 0.0 : (p - (labels[r] == int(j) ? 1.0 : 0.0)) / 5.0;
      EXPECT_NEAR(res.grad_logits(r, j), expect, 1e-5);
    }
    if (labels[r] >= 0) loss -= std::log(std::exp(double(z(r, labels[r]))) / den);
  }
  EXPECT_NEAR(res.loss, loss / 5.0, 1e-5);
}

TEST(CrossEntropy, AllIgnoredThrows) {
  const std::vector<std::int32_t> labels{7, 7};
  EXPECT_THROW(cross_entropy(FeatureMatrix(2, 3), labels, 7), NumericError);
}

TEST(CrossEntropy, FiniteDifferences) {
  for (int trial = 0; trial < 5; ++trial) {
    Rng rng(400 + trial);
    auto z = oracle::random_matrix(rng, 6, 4, 2.0);
    std::vector<std::int32_t> labels(6);
    for (auto& l : labels) l = static_cast<std::int32_t>(rng.index(4));
    const auto g = cross_entropy(z, labels).grad_logits;
    auto loss = [&] { return cross_entropy(z, labels).loss; };
    EXPECT_LT(oracle::relative_error(oracle::to_double(g.data), oracle::numeric_grad(z.data, loss, 1e-3)), 1e-3);
  }
}

TEST(Sgd, Steps) {
  std::vector<float> p{1.0f}, g{1.0f};
  std::vector<ParamRef> refs{{"p", p, g}};
  SgdState plain(0.1, 0.0);
  sgd_step(plain, refs);
  EXPECT_NEAR(p[0], 0.9, 1e-7);

  p[0] = 1.0f;
  SgdState mom(0.1, 0.9);
  sgd_step(mom, refs);
  EXPECT_NEAR(p[0], 0.9, 1e-7);
  sgd_step(mom, refs);
  EXPECT_NEAR(p[0], 0.71, 1e-6);

  p[0] = 1.0f;
  g[0] = 0.0f;
  SgdState zero(0.1, 0.9);
  sgd_step(zero, refs);
  EXPECT_EQ(p[0], 1.0f);
}

TEST(Sgd, NonFiniteGradientLeavesParamsUntouched) {
  std::vector<float> a{1.0f}, ga{1.0f}, b{2.0f}, gb{NAN};
  std::vector<ParamRef> refs{{"a", a, ga}, {"b", b, gb}};
  SgdState s(0.1, 0.9);
  EXPECT_THROW(sgd_step(s, refs), NumericError);
  EXPECT_EQ(a[0], 1.0f);
  EXPECT_EQ(b[0], 2.0f);
}

TEST(CosineLr, Schedule) {
  EXPECT_DOUBLE_EQ(cosine_lr(0.24, 0, 100), 0.24);
  EXPECT_NEAR(cosine_lr(0.24, 50, 100), 0.12, 1e-12);
  EXPECT_NEAR(cosine_lr(0.24, 100, 100), 0.0, 1e-12);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  Rng rng(7);
  auto l = random_linear(rng, 8, 8);
  BatchNormLayer bn1(8), bn2(8);
  const auto x = oracle::random_matrix(rng, 32, 8);
  const auto a = batchnorm_forward(bn1, linear_forward(l, x));
  const auto b = batchnorm_forward(bn2, linear_forward(l, x));
  EXPECT_EQ(a, b);
}
