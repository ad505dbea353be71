#include "fpfl/nn.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "fpfl/losses.hpp"
#include "test_util.hpp"

namespace fpfl {
namespace {

using test::finite_difference_grad;
using test::near_rel;
using test::random_batch;
using test::random_small_mlp;

TEST(Forward, ZeroModelOutputsHalf) {
  Mlp m = Mlp::zeros({3, 4, 1});
  std::vector<double> x{0.7, -1.1, 2.5};
  EXPECT_DOUBLE_EQ(forward(m, x), 0.5);
}

TEST(Forward, SingleLinearLayerZeroLogit) {
  Mlp m = Mlp::zeros({2, 1});
  m.weights[0] = {1.0, 0.0};
  std::vector<double> x{0.0, 0.0};
  EXPECT_DOUBLE_EQ(forward(m, x), 0.5);
}

// Straight-line re-evaluation of the same arithmetic, written without any
// of the library's layer machinery.
TEST(Forward, MatchesIndependentReimplementation) {
  RngStream rng(42);
  Mlp m = Mlp::init({3, 4, 2, 1}, rng);
  std::vector<double> x{0.3, -0.8, 1.4};

  std::vector<double> h1(4), h2(2);
  for (int o = 0; o < 4; ++o) {
    double z = m.biases[0][o];
    for (int i = 0; i < 3; ++i) z += m.weights[0][o * 3 + i] * x[i];
    h1[o] = z > 0 ? z : 0.0;
  }
  for (int o = 0; o < 2; ++o) {
    double z = m.biases[1][o];
    for (int i = 0; i < 4; ++i) z += m.weights[1][o * 4 + i] * h1[i];
    h2[o] = z > 0 ? z : 0.0;
  }
  double z = m.biases[2][0];
  for (int i = 0; i < 2; ++i) z += m.weights[2][i] * h2[i];
  double expected = 1.0 / (1.0 + std::exp(-z));
  expected = std::min(std::max(expected, 1e-7), 1.0 - 1e-7);

  EXPECT_DOUBLE_EQ(forward(m, x), expected);
}

TEST(Forward, DimensionMismatchThrows) {
  Mlp m = Mlp::zeros({3, 1});
  std::vector<double> x{1.0, 2.0};
  EXPECT_THROW(forward(m, x), std::invalid_argument);
}

TEST(Forward, OutputStaysWithinClamp) {
  Mlp m = Mlp::zeros({1, 1});
  m.weights[0] = {1000.0};
  EXPECT_DOUBLE_EQ(forward(m, std::vector<double>{100.0}), 1.0 - 1e-7);
  EXPECT_DOUBLE_EQ(forward(m, std::vector<double>{-100.0}), 1e-7);
}

TEST(Forward, DeterministicAcrossCalls) {
  RngStream rng(7);
  Mlp m = random_small_mlp({4, 3, 1}, rng);
  FeatureMatrix X = random_batch(5, 4, rng);
  std::vector<double> a = forward_batch(m, X);
  std::vector<double> b = forward_batch(m, X);
  EXPECT_EQ(a, b);
}

TEST(Flatten, RoundTripIsIdentity) {
  RngStream rng(11);
  for (auto sizes : {std::vector<std::size_t>{2, 1},
                     std::vector<std::size_t>{5, 4, 3, 1},
                     std::vector<std::size_t>{1, 7, 1}}) {
    Mlp m = Mlp::init(sizes, rng);
    ParamVector v = flatten(m);
    EXPECT_EQ(v.size(), m.param_count());
    Mlp n = Mlp::zeros(sizes);
    unflatten(n, v);
    EXPECT_EQ(flatten(n), v);
    EXPECT_EQ(n.weights, m.weights);
    EXPECT_EQ(n.biases, m.biases);
  }
}

TEST(Flatten, NormFiniteNonnegative) {
  RngStream rng(13);
  Mlp m = Mlp::init({6, 5, 1}, rng);
  double n = l2_norm(flatten(m));
  EXPECT_GE(n, 0.0);
  EXPECT_TRUE(std::isfinite(n));
}

TEST(PerExampleGrads, StationaryWhenTargetEqualsPrediction) {
  RngStream rng(3);
  Mlp m = random_small_mlp({3, 3, 1}, rng);
  FeatureMatrix X = random_batch(6, 3, rng);
  std::vector<double> targets = forward_batch(m, X);
  GradBatch grads =
      per_example_grads(m, X, targets, PointLoss::kDistillation);
  for (const auto& g : grads)
    for (double v : g) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(PerExampleGrads, MatchesFiniteDifferences) {
  RngStream rng(5);
  for (int trial = 0; trial < 8; ++trial) {
    Mlp m = random_small_mlp({4, 3, 1}, rng);
    FeatureMatrix X = random_batch(3, 4, rng);
    std::vector<double> y(3);
    for (double& t : y) t = rng.next_double() < 0.5 ? 0.0 : 1.0;
    GradBatch grads =
        per_example_grads(m, X, y, PointLoss::kBinaryCrossEntropy);
    for (std::size_t i = 0; i < X.rows; ++i) {
      auto fd = finite_difference_grad(m, [&](const Mlp& model) {
        return bce_loss(forward(model, X.row(i)), static_cast<int>(y[i]));
      });
      ASSERT_EQ(fd.size(), grads[i].size());
      for (std::size_t j = 0; j < fd.size(); ++j)
        EXPECT_TRUE(near_rel(grads[i][j], fd[j], 1e-4))
            << "trial " << trial << " sample " << i << " param " << j << ": "
            << grads[i][j] << " vs " << fd[j];
    }
  }
}

TEST(PerExampleGrads, DuplicatedSamplesGetIdenticalGradients) {
  RngStream rng(9);
  Mlp m = random_small_mlp({3, 2, 1}, rng);
  FeatureMatrix X(4, 3);
  std::vector<double> row{0.5, -0.2, 1.0};
  for (int i = 0; i < 4; ++i)
    std::copy(row.begin(), row.end(), X.row(i).begin());
  std::vector<double> y(4, 1.0);
  GradBatch grads = per_example_grads(m, X, y, PointLoss::kBinaryCrossEntropy);
  for (int i = 1; i < 4; ++i) EXPECT_EQ(grads[i], grads[0]);
}

TEST(PerExampleGrads, EmptyBatchThrows) {
  Mlp m = Mlp::zeros({2, 1});
  FeatureMatrix X(0, 2);
  std::vector<double> y;
  EXPECT_THROW(per_example_grads(m, X, y, PointLoss::kBinaryCrossEntropy),
               std::invalid_argument);
}

TEST(SgdStep, ZeroGradientLeavesParams) {
  ParamVector p{1.0, -2.0, 3.0};
  ParamVector g{0.0, 0.0, 0.0};
  EXPECT_EQ(sgd_step(p, g, 0.7), p);
}

TEST(SgdStep, BasicArithmetic) {
  ParamVector p{1.0, 1.0};
  ParamVector g{1.0, -1.0};
  ParamVector next = sgd_step(p, g, 0.5);
  EXPECT_DOUBLE_EQ(next[0], 0.5);
  EXPECT_DOUBLE_EQ(next[1], 1.5);
}

TEST(SgdStep, ShapeMismatchThrows) {
  EXPECT_THROW(sgd_step({1.0, 2.0}, {1.0}, 0.1), std::invalid_argument);
}

// Quadratic f(x) = (x - 3)^2 / 2 has gradient x - 3 and minimizer 3.
TEST(SgdStep, ConvergesToQuadraticMinimizer) {
  ParamVector x{0.0};
  for (int i = 0; i < 200; ++i) x = sgd_step(x, {x[0] - 3.0}, 0.1);
  EXPECT_NEAR(x[0], 3.0, 1e-6);
}

TEST(AccumulateGrads, EqualsSumOfPerExampleGrads) {
  RngStream rng(17);
  Mlp m = random_small_mlp({3, 3, 1}, rng);
  FeatureMatrix X = random_batch(5, 3, rng);
  std::vector<double> y{1, 0, 1, 1, 0};
  GradBatch grads = per_example_grads(m, X, y, PointLoss::kBinaryCrossEntropy);
  std::vector<double> probs = forward_batch(m, X);
  std::vector<double> seeds(5);
  for (int i = 0; i < 5; ++i)
    seeds[i] = (probs[i] - y[i]) / (probs[i] * (1.0 - probs[i]));
  ParamVector acc = accumulate_example_grads(m, X, seeds);
  ParamVector expected(acc.size(), 0.0);
  for (const auto& g : grads)
    for (std::size_t j = 0; j < g.size(); ++j) expected[j] += g[j];
  for (std::size_t j = 0; j < acc.size(); ++j)
    EXPECT_NEAR(acc[j], expected[j], 1e-12);
}

TEST(Adam, DecreasesSimpleLoss) {
  RngStream rng(21);
  Mlp m = random_small_mlp({2, 4, 1}, rng);
  FeatureMatrix X = random_batch(32, 2, rng);
  std::vector<double> y(32);
  for (std::size_t i = 0; i < 32; ++i)
    y[i] = X.at(i, 0) + X.at(i, 1) > 0 ? 1.0 : 0.0;
  auto mean_loss = [&](const Mlp& model) {
    std::vector<double> p = forward_batch(model, X);
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
      s += bce_loss(p[i], static_cast<int>(y[i]));
    return s / static_cast<double>(p.size());
  };
  double before = mean_loss(m);
  AdamState adam(m.param_count());
  for (int step = 0; step < 100; ++step) {
    std::vector<double> p = forward_batch(m, X);
    std::vector<double> seeds(32);
    for (int i = 0; i < 32; ++i)
      seeds[i] = bce_grad_p(p[i], static_cast<int>(y[i])) / 32.0;
    ParamVector g = accumulate_example_grads(m, X, seeds);
    apply_adam_step(m, g, 0.01, adam);
  }
  EXPECT_LT(mean_loss(m), before * 0.8);
}

}  // namespace
}  // namespace fpfl
