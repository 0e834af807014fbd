#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "ratspn/error.hpp"
#include "ratspn/leaves.hpp"
#include "support.hpp"

using namespace ratspn;

namespace {

const double kPi = 3.14159265358979323846;

// Direct univariate normal density, written out independently of the engine.
double normal_pdf(double x, double mean, double var) {
  return std::exp(-(x - mean) * (x - mean) / (2 * var)) / std::sqrt(2 * kPi * var);
}

}  // namespace

TEST(Leaves, GaussianAtMean) {
  GaussianLeaf leaf{{0}, {1.25}, {}};
  const double x[] = {1.25};
  EXPECT_NEAR(leaf_log_density(leaf, x), -0.5 * std::log(2 * kPi), 1e-15);
  EXPECT_NEAR(leaf_log_density(leaf, x), -0.9189385, 1e-7);
}

TEST(Leaves, AllMissingIsZero) {
  GaussianLeaf leaf{{0}, {0.3}, {}};
  const double x[] = {std::numeric_limits<double>::quiet_NaN()};
  const std::uint8_t missing[] = {1};
  EXPECT_EQ(leaf_log_density(leaf, x, missing), 0.0);
}

TEST(Leaves, FairCoins) {
  BernoulliLeaf leaf{{0, 1}, {0.0, 0.0}};
  const double x[] = {1.0, 0.0};
  EXPECT_NEAR(leaf_log_density(leaf, x), std::log(0.25), 1e-15);
}

TEST(Leaves, BernoulliNormalizes) {
  for (double logit : {-30.0, -2.0, 0.0, 0.7, 12.0}) {
    EXPECT_NEAR(std::exp(bernoulli_log_term(0.0, logit)) + std::exp(bernoulli_log_term(1.0, logit)), 1.0,
                1e-15);
  }
}

TEST(Leaves, NonFiniteObservedRejected) {
  GaussianLeaf leaf{{0, 1}, {0.0, 0.0}, {}};
  const double x[] = {0.0, std::numeric_limits<double>::infinity()};
  EXPECT_THROW(leaf_log_density(leaf, x), InvalidInput);
}

TEST(Leaves, VarianceAgainstClosedForm) {
  GaussianLeaf leaf{{0, 1}, {0.5, -1.0}, {2.0, 0.25}};
  const double x[] = {1.0, 0.0};
  const double expected = std::log(normal_pdf(1.0, 0.5, 2.0)) + std::log(normal_pdf(0.0, -1.0, 0.25));
  EXPECT_NEAR(leaf_log_density(leaf, x), expected, 1e-13);
  // below the floor the variance is held at 1e-4
  GaussianLeaf tiny{{0}, {0.0}, {1e-9}};
  const double y[] = {0.01};
  EXPECT_NEAR(leaf_log_density(tiny, y), std::log(normal_pdf(0.01, 0.0, 1e-4)), 1e-9);
}

TEST(Leaves, MarginalizationMatchesQuadrature) {
  // Integrating variable 1 out of a 2-variable leaf numerically must equal
  // the masked evaluation.
  GaussianLeaf leaf{{0, 1}, {0.2, -0.4}, {0.8, 1.3}};
  const double x0 = 0.9;
  const double lo = -0.4 - 12.0, hi = -0.4 + 12.0;
  const int steps = 20000;
  const double h = (hi - lo) / steps;
  double integral = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);  // Simpson
    const double x[] = {x0, lo + i * h};
    integral += w * std::exp(leaf_log_density(leaf, x));
  }
  integral *= h / 3;
  const double x[] = {x0, 0.0};
  const std::uint8_t mask[] = {0, 1};
  EXPECT_NEAR(std::exp(leaf_log_density(leaf, x, mask)), integral, 1e-6);
}

TEST(LeavesProperty, MaskDifferenceIsDroppedTerms) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    GaussianLeaf leaf;
    std::vector<double> x(n);
    std::vector<std::uint8_t> small(n), large(n);
    for (std::size_t j = 0; j < n; ++j) {
      leaf.scope.push_back(static_cast<std::uint32_t>(j));
      leaf.means.push_back(rng.normal());
      leaf.variances.push_back(0.1 + rng.uniform());
      x[j] = 2 * rng.normal();
      small[j] = rng.bernoulli(0.3);
      large[j] = small[j] || rng.bernoulli(0.5);
    }
    double dropped = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (large[j] && !small[j]) dropped += std::log(normal_pdf(x[j], leaf.means[j], leaf.variances[j]));
    }
    EXPECT_NEAR(leaf_log_density(leaf, x, small) - leaf_log_density(leaf, x, large), dropped, 1e-10);
  }
}

TEST(LeavesBatch, MatchesScalarAndMasks) {
  LeafBlock block{0, {1, 3}, 3};
  ParameterSet params;
  params.leaf_kind = LeafKind::Gaussian;
  params.leaf_params = {{0.1, 0.2, -0.3, 0.4, 0.5, -0.6}};
  params.leaf_log_vars = {{0.0, 0.3, -0.2, 0.1, -1.0, 0.5}};
  FeatureMatrix batch(3, 4);
  for (std::size_t c = 0; c < 4; ++c) {
    batch(0, c) = 0.3 * static_cast<double>(c);
    batch(1, c) = 0.3 * static_cast<double>(c);
    batch(2, c) = -1.0;
  }
  QueryMask mask(3, 4, 0);
  mask(2, 1) = mask(2, 3) = 1;
  const auto out = leaf_log_density_batch(block, leaf_block_params(params, 0), batch, mask);
  ASSERT_EQ(out.rows(), 3u);
  ASSERT_EQ(out.cols(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(out(0, i), out(1, i));
    EXPECT_EQ(out(2, i), 0.0);
    GaussianLeaf leaf{{1, 3},
                      {params.leaf_params[0][2 * i], params.leaf_params[0][2 * i + 1]},
                      {std::exp(params.leaf_log_vars[0][2 * i]), std::exp(params.leaf_log_vars[0][2 * i + 1])}};
    const double x[] = {batch(0, 1), batch(0, 3)};
    EXPECT_NEAR(out(0, i), leaf_log_density(leaf, x), 1e-13);
  }
  QueryMask wrong(2, 4, 0);
  EXPECT_THROW(leaf_log_density_batch(block, leaf_block_params(params, 0), batch, wrong), InvalidInput);
}
