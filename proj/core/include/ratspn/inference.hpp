#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ratspn/circuit.hpp"
#include "ratspn/table.hpp"

namespace ratspn {

/// Product columns forced off per sample and sum block. `dropped[s]` is
/// samples x sum_blocks[s].input_width with nonzero meaning "dropped"
/// (log-value -inf). An empty mask drops nothing.
struct SumDropoutMask {
  std::vector<Table<std::uint8_t>> dropped;

  bool empty() const { return dropped.empty(); }
};

/// All intermediate tables of one forward pass, indexed like the circuit's
/// block vectors.
struct ForwardTrace {
  std::vector<LogTable> leaf;
  std::vector<LogTable> product;
  std::vector<LogTable> sum;

  const LogTable& roots(const Circuit& c) const { return sum[c.root_block]; }
  const LogTable& table(BlockRef ref) const;
};

/// Root log-values, samples x C. `missing` is samples x num_vars (or empty);
/// missing variables are marginalized at the leaves. Intermediate tables are
/// released as soon as their consumers have run.
LogTable forward_log(const Circuit& circuit, const ParameterSet& params,
                     const FeatureMatrix& batch, const QueryMask& missing = {},
                     const SumDropoutMask& dropout = {});

/// Same evaluation, retaining every block's table.
ForwardTrace forward_trace(const Circuit& circuit, const ParameterSet& params,
                           const FeatureMatrix& batch, const QueryMask& missing = {},
                           const SumDropoutMask& dropout = {});

/// log-sum-exp with max shift; -inf if every term is -inf, 0 terms give -inf.
double log_sum_exp(std::span<const double> values);

/// Sum-block kernel: out[s] = logsumexp_k(log_weights[s, k] + inputs[k]).
/// `weights` holds exp(log_weights). Exposed for testing.
void log_sum_block(std::span<const double> inputs, std::span<const double> log_weights,
                   std::span<const double> weights, std::span<double> out,
                   std::vector<double>& scratch);

std::vector<double> uniform_log_prior(std::size_t num_classes);

/// Class log-frequencies; classes with zero count get -inf.
std::vector<double> empirical_log_prior(std::span<const int> labels, std::size_t num_classes);

/// Throws InvalidInput unless sum(exp(log_prior)) == 1 within 1e-9.
void check_log_prior(std::span<const double> log_prior, std::size_t num_classes);

/// roots + log_prior per row: log p(x, c).
LogTable add_log_prior(const LogTable& roots, std::span<const double> log_prior);

LogTable log_joint(const Circuit& circuit, const ParameterSet& params,
                   const FeatureMatrix& batch, std::span<const double> log_prior,
                   const QueryMask& missing = {});

/// Row-wise argmax; ties go to the lowest class index.
std::vector<std::size_t> argmax_rows(const LogTable& table);

std::vector<std::size_t> classify(const Circuit& circuit, const ParameterSet& params,
                                  const FeatureMatrix& batch, std::span<const double> log_prior,
                                  const QueryMask& missing = {});

/// log p(x) = logsumexp_c(root_c + log_prior_c), per sample.
std::vector<double> log_marginal_input(const Circuit& circuit, const ParameterSet& params,
                                       const FeatureMatrix& batch,
                                       std::span<const double> log_prior,
                                       const QueryMask& missing = {});

std::vector<double> log_marginal_from_roots(const LogTable& roots,
                                            std::span<const double> log_prior);

/// log p(x_query | x_evidence). Both masks are samples x num_vars with
/// nonzero marking membership; variables in neither set are marginalized.
/// Overlapping sets throw InvalidInput.
std::vector<double> conditional_log(const Circuit& circuit, const ParameterSet& params,
                                    const FeatureMatrix& batch, const QueryMask& query,
                                    const QueryMask& evidence,
                                    std::span<const double> log_prior);

}  // namespace ratspn
