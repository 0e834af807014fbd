#pragma once

#include <cstdint>
#include <cmath>
#include <span>
#include <vector>

#include "ratspn/circuit.hpp"
#include "ratspn/table.hpp"

namespace ratspn {

/// Smallest variance a trainable Gaussian leaf may take.
inline constexpr double kMinVariance = 1e-4;
inline constexpr double kLogMinVariance = -9.210340371976182;  // log(kMinVariance)

struct GaussianLeaf {
  VariableScope scope;
  std::vector<double> means;
  std::vector<double> variances;  // empty means all 1
};

struct BernoulliLeaf {
  VariableScope scope;
  std::vector<double> success_logits;
};

/// log N(x | mean, exp(log_var)) with log_var clamped at log(kMinVariance).
inline double gaussian_log_term(double x, double mean, double log_var = 0.0) {
  constexpr double kHalfLog2Pi = 0.91893853320467274178;
  if (log_var == 0.0) {
    const double d = x - mean;
    return -kHalfLog2Pi - 0.5 * d * d;
  }
  const double lv = log_var < kLogMinVariance ? kLogMinVariance : log_var;
  const double d = x - mean;
  return -kHalfLog2Pi - 0.5 * lv - 0.5 * d * d * std::exp(-lv);
}

/// x * log(sigmoid(logit)) + (1 - x) * log(1 - sigmoid(logit)).
double bernoulli_log_term(double x, double logit);

/// Sum of univariate log-densities over the non-missing variables of the
/// leaf's scope; missing variables contribute 0. `x` and `missing` are indexed
/// by scope position. An empty `missing` means nothing is missing.
double leaf_log_density(const GaussianLeaf& leaf, std::span<const double> x,
                        std::span<const std::uint8_t> missing = {});
double leaf_log_density(const BernoulliLeaf& leaf, std::span<const double> x,
                        std::span<const std::uint8_t> missing = {});

/// Parameters of one leaf block, width x |scope| row-major.
struct LeafBlockParams {
  LeafKind kind = LeafKind::Gaussian;
  std::span<const double> values;
  std::span<const double> log_vars;  // empty: unit variance
};

LeafBlockParams leaf_block_params(const ParameterSet& params, std::size_t block);

/// Batched leaf evaluation. `batch` holds all variables (samples x num_vars);
/// the block reads its scope columns. `missing` is samples x num_vars or
/// empty. Returns samples x width log-densities.
LogTable leaf_log_density_batch(const LeafBlock& block, const LeafBlockParams& params,
                                const FeatureMatrix& batch, const QueryMask& missing);

}  // namespace ratspn
