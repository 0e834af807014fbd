#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ratspn/circuit.hpp"
#include "ratspn/dataset.hpp"
#include "ratspn/inference.hpp"
#include "ratspn/table.hpp"

namespace ratspn {

class Rng;

struct TrainConfig {
  double lambda = 1.0;
  std::size_t epochs = 10;
  std::size_t batch_size = 100;
  /// Probability that an input feature is kept (not marginalized).
  double keep_input = 1.0;
  /// Probability that a product feeding a region's sums is kept.
  double keep_sum = 1.0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  /// Throws InvalidInput on out-of-range fields.
  void validate() const;
};

struct ObjectiveParts {
  double objective = 0.0;
  double cross_entropy = 0.0;
  double nll = 0.0;
};

/// -(1/N) sum_n [root(n, y_n) - logsumexp_c root(n, c)].
double cross_entropy(const LogTable& roots, std::span<const int> labels);

/// -(1/(N * num_vars)) sum_n root(n, y_n). No class prior enters.
double neg_log_likelihood(const LogTable& roots, std::span<const int> labels,
                          std::size_t num_vars);

/// lambda * CE + (1 - lambda) * nLL.
double hybrid_objective(const LogTable& roots, std::span<const int> labels,
                        std::size_t num_vars, double lambda);

ObjectiveParts objective_parts(const LogTable& roots, std::span<const int> labels,
                               std::size_t num_vars, double lambda);

struct GradientResult {
  GradientSet gradients;
  ObjectiveParts objective;
};

/// Exact gradient of the hybrid objective on one batch by a reverse sweep
/// over the forward trace. Masked leaves and dropped products receive zero
/// gradient. Throws NumericError naming the first block that went
/// non-finite if the objective is not finite.
GradientResult backward_gradients(const Circuit& circuit, const ParameterSet& params,
                                  const FeatureMatrix& batch, std::span<const int> labels,
                                  double lambda, const QueryMask& missing = {},
                                  const SumDropoutMask& dropout = {});

/// Keep each (sample, variable) with probability keep_input; the rest are
/// marked missing. No 1/p rescaling.
QueryMask sample_input_dropout_mask(std::size_t num_vars, std::size_t batch_size,
                                    double keep_input, Rng& rng);

/// Per sample and sum block, drop each input product with probability
/// 1 - keep_sum. A draw that drops every product is redrawn.
SumDropoutMask sample_sum_dropout_mask(const Circuit& circuit, double keep_sum,
                                       std::size_t batch_size, Rng& rng);

struct AdamState {
  GradientSet first_moment;
  GradientSet second_moment;
  std::uint64_t step = 0;
};

AdamState make_adam_state(const ParameterSet& params);

/// Bias-corrected Adam update. Trainable log-variances are clamped at
/// log(kMinVariance) afterwards. Throws NumericError on a non-finite gradient.
void adam_step(ParameterSet& params, const GradientSet& grads, AdamState& state,
               const TrainConfig& config);

struct EvalMetrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double cross_entropy = 0.0;
  double nll = 0.0;
  double objective = 0.0;
  /// Mean log p(x) under the given class prior.
  double mean_log_px = 0.0;
};

/// Dropout-free evaluation in chunks. Label-dependent fields stay 0 for an
/// unlabeled set.
EvalMetrics evaluate_dataset(const Circuit& circuit, const ParameterSet& params,
                             const Dataset& data, std::span<const double> log_prior,
                             double lambda, const QueryMask& missing = {},
                             std::size_t chunk = 512);

struct EpochMetrics {
  std::size_t epoch = 0;
  /// Mean mini-batch objective under dropout.
  double batch_objective = 0.0;
  EvalMetrics train;
  EvalMetrics valid;  // count == 0 when no validation set
};

struct TrainResult {
  ParameterSet params;
  std::vector<EpochMetrics> history;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch Adam on the hybrid objective with fresh dropout masks per
/// batch. Starting from `params` makes warm starts (post-training with a
/// different lambda) the same call. Deterministic in config.seed.
TrainResult train(const Circuit& circuit, ParameterSet params, const Dataset& train_data,
                  const Dataset* valid_data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Flatten / unflatten in a fixed order: sum logits, leaf params, log-vars.
std::vector<double> flatten(const ParameterSet& params);
void unflatten(std::span<const double> values, ParameterSet& params);

}  // namespace ratspn
