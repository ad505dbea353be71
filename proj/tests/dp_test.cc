#include "fpfl/dp.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"

namespace fpfl {
namespace {

using test::random_batch;
using test::random_small_mlp;

TEST(Clip, WithinBoundIsUntouched) {
  ParamVector g{0.3, 0.4};  // norm 0.5
  EXPECT_EQ(clip_to_norm(g, 1.0), g);
}

TEST(Clip, ScalesDownToBound) {
  ParamVector g{3.0, 4.0};  // norm 5
  ParamVector c = clip_to_norm(g, 1.0);
  EXPECT_DOUBLE_EQ(c[0], 0.6);
  EXPECT_DOUBLE_EQ(c[1], 0.8);
}

TEST(Clip, NormNeverExceedsBound) {
  RngStream rng(101);
  for (int trial = 0; trial < 500; ++trial) {
    std::size_t n = 1 + static_cast<std::size_t>(rng.next_double() * 20);
    ParamVector g(n);
    for (double& x : g) x = rng.next_gaussian() * 10.0;
    double c = rng.next_uniform(0.01, 5.0);
    ParamVector clipped = clip_to_norm(g, c);
    EXPECT_LE(l2_norm(clipped), c + 1e-12);
    // Direction preserved: clipped is a nonnegative multiple of g.
    double norm = l2_norm(g);
    if (norm > 0) {
      double scale = norm > c ? c / norm : 1.0;
      for (std::size_t i = 0; i < n; ++i)
        EXPECT_NEAR(clipped[i], g[i] * scale, 1e-12);
    }
  }
}

TEST(Clip, NonFiniteRejected) {
  ParamVector g{1.0, kInf};
  EXPECT_THROW(clip_to_norm(g, 1.0), NumericError);
  EXPECT_THROW(clip_to_norm({1.0}, 0.0), std::invalid_argument);
}

TEST(NoisyAggregate, NoNoiseGivesScaledMeanOfClipped) {
  DpConfig cfg;
  cfg.clip_norm = 1.0;
  cfg.noise_multiplier = 0.0;
  cfg.batch_size = 4;
  cfg.sampling_prob = 0.5;
  GradBatch grads{{3.0, 4.0}, {0.1, 0.0}};  // realized 2 of configured 4
  RngStream rng(1);
  ParamVector out = noisy_aggregate(grads, cfg, rng);
  // clip([3,4]) = [0.6, 0.8]; sum = [0.7, 0.8]; divided by B = 4.
  EXPECT_DOUBLE_EQ(out[0], 0.7 / 4.0);
  EXPECT_DOUBLE_EQ(out[1], 0.8 / 4.0);
}

TEST(NoisyAggregate, SingleSmallGradientFullBatchIdentity) {
  DpConfig cfg;
  cfg.clip_norm = 10.0;
  cfg.noise_multiplier = 0.0;
  cfg.batch_size = 1;
  cfg.sampling_prob = 1.0;
  GradBatch grads{{0.5, -0.25}};
  RngStream rng(2);
  ParamVector out = noisy_aggregate(grads, cfg, rng);
  EXPECT_EQ(out, grads[0]);
}

TEST(NoisyAggregate, EmptyBatchRejected) {
  DpConfig cfg;
  RngStream rng(3);
  EXPECT_THROW(noisy_aggregate({}, cfg, rng), std::invalid_argument);
}

// Zero gradients isolate the injected noise: per-coordinate std must match
// sigma * C / B within 3 standard errors over 1e5 samples.
TEST(NoisyAggregate, NoiseStdMatchesConfiguration) {
  DpConfig cfg;
  cfg.clip_norm = 1.0;
  cfg.noise_multiplier = 1.0;
  cfg.batch_size = 500;
  cfg.sampling_prob = 0.5;
  const std::size_t dim = 100, draws = 1000;
  GradBatch zero{ParamVector(dim, 0.0)};
  RngStream rng(404);
  std::vector<double> samples;
  samples.reserve(dim * draws);
  for (std::size_t d = 0; d < draws; ++d) {
    ParamVector out = noisy_aggregate(zero, cfg, rng);
    samples.insert(samples.end(), out.begin(), out.end());
  }
  double n = static_cast<double>(samples.size());
  double mean = 0.0, var = 0.0;
  for (double x : samples) mean += x;
  mean /= n;
  for (double x : samples) var += (x - mean) * (x - mean);
  var /= n;
  double std_obs = std::sqrt(var);
  double std_expected = 1.0 / 500.0;  // sigma C / B
  double se = std_expected / std::sqrt(2.0 * n);
  EXPECT_NEAR(std_obs, std_expected, 3.0 * se);
}

// Moment test: the injected noise should look Gaussian.
TEST(NoisyAggregate, NoisePassesMomentTest) {
  DpConfig cfg;
  cfg.clip_norm = 2.0;
  cfg.noise_multiplier = 1.5;
  cfg.batch_size = 1;
  cfg.sampling_prob = 1.0;
  GradBatch zero{ParamVector(50, 0.0)};
  RngStream rng(505);
  std::vector<double> s;
  for (int d = 0; d < 2000; ++d) {
    ParamVector out = noisy_aggregate(zero, cfg, rng);
    s.insert(s.end(), out.begin(), out.end());
  }
  double n = static_cast<double>(s.size());
  double mean = 0.0;
  for (double x : s) mean += x;
  mean /= n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double x : s) {
    double d = x - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  double skew = m3 / std::pow(m2, 1.5);
  double kurt = m4 / (m2 * m2) - 3.0;
  EXPECT_NEAR(std::sqrt(m2), 3.0, 3.0 * 3.0 / std::sqrt(2.0 * n));
  EXPECT_NEAR(skew, 0.0, 3.0 * std::sqrt(6.0 / n));
  EXPECT_NEAR(kurt, 0.0, 3.0 * std::sqrt(24.0 / n));
}

// Adding or removing one example moves the pre-noise sum by at most C.
TEST(Sensitivity, NeighboringBatchesDifferByAtMostC) {
  RngStream rng(606);
  const double c = 1.5;
  for (int trial = 0; trial < 1000; ++trial) {
    std::size_t n = 1 + static_cast<std::size_t>(rng.next_double() * 8);
    std::size_t dim = 3 + static_cast<std::size_t>(rng.next_double() * 5);
    GradBatch batch(n, ParamVector(dim));
    for (auto& g : batch)
      for (double& x : g) x = rng.next_gaussian() * 4.0;
    ParamVector extra(dim);
    for (double& x : extra) x = rng.next_gaussian() * 4.0;

    ParamVector sum(dim, 0.0);
    for (const auto& g : batch) {
      ParamVector cg = clip_to_norm(g, c);
      for (std::size_t j = 0; j < dim; ++j) sum[j] += cg[j];
    }
    ParamVector sum2 = sum;
    ParamVector ce = clip_to_norm(extra, c);
    for (std::size_t j = 0; j < dim; ++j) sum2[j] += ce[j];
    ParamVector diff(dim);
    for (std::size_t j = 0; j < dim; ++j) diff[j] = sum2[j] - sum[j];
    EXPECT_LE(l2_norm(diff), c + 1e-12);
  }
}

TEST(PoissonSample, FullProbabilityKeepsEverything) {
  RngStream rng(707);
  auto idx = poisson_sample(100, 1.0, rng);
  ASSERT_EQ(idx.size(), 100u);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(idx[i], i);
}

TEST(PoissonSample, MeanSizeMatchesBinomial) {
  RngStream rng(808);
  const std::size_t n = 50000;
  const double q = 0.01;
  const int draws = 200;
  double total = 0.0;
  for (int d = 0; d < draws; ++d)
    total += static_cast<double>(poisson_sample(n, q, rng).size());
  double mean = total / draws;
  double se = std::sqrt(n * q * (1 - q) / draws);
  EXPECT_NEAR(mean, 500.0, 3.0 * se);
}

TEST(PoissonSample, DisjointSeedsAreIndependent) {
  RngStream rng_a(909), rng_b(910);
  const std::size_t n = 20000;
  const double q = 0.3;
  auto a = poisson_sample(n, q, rng_a);
  auto b = poisson_sample(n, q, rng_b);
  std::vector<bool> in_a(n, false), in_b(n, false);
  for (std::size_t i : a) in_a[i] = true;
  for (std::size_t i : b) in_b[i] = true;
  double tab[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < n; ++i) tab[in_a[i] ? 1 : 0][in_b[i] ? 1 : 0] += 1.0;
  double ra = tab[1][0] + tab[1][1], rb = tab[0][1] + tab[1][1];
  double chi2 = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      double e = (i ? ra : n - ra) * (j ? rb : n - rb) / n;
      double d = tab[i][j] - e;
      chi2 += d * d / e;
    }
  EXPECT_LT(chi2, 6.635);  // chi-square critical value, df=1, 1% level
}

TEST(PoissonSample, InvalidProbabilityRejected) {
  RngStream rng(1);
  EXPECT_THROW(poisson_sample(10, 0.0, rng), std::invalid_argument);
  EXPECT_THROW(poisson_sample(10, 1.5, rng), std::invalid_argument);
}

TEST(DpStep, FixedSeedReproducesTrajectory) {
  RngStream mrng(111);
  Mlp m = random_small_mlp({3, 4, 1}, mrng);
  FeatureMatrix X = random_batch(16, 3, mrng);
  std::vector<double> targets(16);
  for (double& t : targets) t = mrng.next_uniform(0.1, 0.9);

  DpConfig cfg;
  cfg.clip_norm = 1.0;
  cfg.noise_multiplier = 0.8;
  cfg.batch_size = 16;
  cfg.sampling_prob = 1.0;
  cfg.lr = 0.1;

  auto run = [&](std::uint64_t seed) {
    DpTrainState st(m, seed);
    for (int s = 0; s < 5; ++s)
      dp_step(st, X, targets, PointLoss::kDistillation, cfg);
    return flatten(st.model);
  };
  EXPECT_EQ(run(1234), run(1234));
  EXPECT_NE(run(1234), run(5678));
}

TEST(DpStep, CountsSteps) {
  RngStream mrng(112);
  Mlp m = random_small_mlp({2, 2, 1}, mrng);
  FeatureMatrix X = random_batch(4, 2, mrng);
  std::vector<double> targets(4, 0.5);
  DpConfig cfg;
  cfg.batch_size = 4;
  cfg.sampling_prob = 1.0;
  cfg.clip_norm = 1.0;
  cfg.lr = 0.05;
  DpTrainState st(m, 77);
  for (int s = 0; s < 7; ++s)
    dp_step(st, X, targets, PointLoss::kDistillation, cfg);
  EXPECT_EQ(st.step_count, 7u);
}

// With sigma = 0, C above every per-example norm, and the full shard as the
// batch, the DP step must be bit-identical to a vanilla minibatch SGD step
// on the mean gradient.
TEST(DpStep, DegeneratesToPlainSgdExactly) {
  RngStream mrng(113);
  Mlp m = random_small_mlp({4, 5, 1}, mrng);
  FeatureMatrix X = random_batch(32, 4, mrng);
  std::vector<double> targets(32);
  for (double& t : targets) t = mrng.next_uniform(0.05, 0.95);

  // Largest per-example gradient norm, to pick a non-binding C.
  GradBatch grads = per_example_grads(m, X, targets, PointLoss::kDistillation);
  double max_norm = 0.0;
  for (const auto& g : grads) max_norm = std::max(max_norm, l2_norm(g));

  DpConfig cfg;
  cfg.clip_norm = max_norm + 1.0;
  cfg.noise_multiplier = 0.0;
  cfg.batch_size = 32;  // realized == configured
  cfg.sampling_prob = 1.0;
  cfg.lr = 0.25;

  DpTrainState st(m, 999);
  dp_step(st, X, targets, PointLoss::kDistillation, cfg);

  // Vanilla path: mean gradient, same accumulation order, same division.
  Mlp plain = m;
  std::vector<double> probs = forward_batch(plain, X);
  std::vector<double> seeds(32);
  for (int i = 0; i < 32; ++i)
    seeds[i] = (probs[i] - targets[i]) / (probs[i] * (1.0 - probs[i]));
  ParamVector sum = accumulate_example_grads(plain, X, seeds, cfg.clip_norm);
  for (double& x : sum) x *= 1.0 / 32.0;
  apply_sgd_step(plain, sum, cfg.lr);

  EXPECT_EQ(flatten(st.model), flatten(plain));
}

}  // namespace
}  // namespace fpfl
