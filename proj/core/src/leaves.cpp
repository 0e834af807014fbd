#include "ratspn/leaves.hpp"

#include <cmath>
#include <string>

#include "ratspn/error.hpp"

namespace ratspn {

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

void check_observed(double x, std::size_t position) {
  if (!std::isfinite(x)) {
    throw InvalidInput("non-finite observed value at scope position " + std::to_string(position));
  }
}

}  // namespace

double bernoulli_log_term(double x, double logit) {
  // log sigmoid(l) = -softplus(-l), log(1 - sigmoid(l)) = -softplus(l)
  return -x * softplus(-logit) - (1.0 - x) * softplus(logit);
}

double leaf_log_density(const GaussianLeaf& leaf, std::span<const double> x,
                        std::span<const std::uint8_t> missing) {
  const std::size_t n = leaf.scope.size();
  if (x.size() != n || leaf.means.size() != n || (!missing.empty() && missing.size() != n) ||
      (!leaf.variances.empty() && leaf.variances.size() != n)) {
    throw InvalidInput("leaf_log_density: size mismatch with leaf scope");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (!missing.empty() && missing[j]) continue;
    check_observed(x[j], j);
    double log_var = 0.0;
    if (!leaf.variances.empty()) {
      if (!(leaf.variances[j] > 0.0)) throw InvalidInput("leaf variance must be positive");
      log_var = std::log(leaf.variances[j]);
    }
    total += gaussian_log_term(x[j], leaf.means[j], log_var);
  }
  return total;
}

double leaf_log_density(const BernoulliLeaf& leaf, std::span<const double> x,
                        std::span<const std::uint8_t> missing) {
  const std::size_t n = leaf.scope.size();
  if (x.size() != n || leaf.success_logits.size() != n ||
      (!missing.empty() && missing.size() != n)) {
    throw InvalidInput("leaf_log_density: size mismatch with leaf scope");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (!missing.empty() && missing[j]) continue;
    check_observed(x[j], j);
    total += bernoulli_log_term(x[j], leaf.success_logits[j]);
  }
  return total;
}

LeafBlockParams leaf_block_params(const ParameterSet& params, std::size_t block) {
  LeafBlockParams view;
  view.kind = params.leaf_kind;
  view.values = params.leaf_params.at(block);
  if (params.trains_variance()) view.log_vars = params.leaf_log_vars.at(block);
  return view;
}

LogTable leaf_log_density_batch(const LeafBlock& block, const LeafBlockParams& params,
                                const FeatureMatrix& batch, const QueryMask& missing) {
  const std::size_t k = block.scope.size();
  if (params.values.size() != block.width * k ||
      (!params.log_vars.empty() && params.log_vars.size() != block.width * k)) {
    throw InvalidInput("leaf_log_density_batch: parameter shape mismatch");
  }
  if (!missing.empty() && (missing.rows() != batch.rows() || missing.cols() != batch.cols())) {
    throw InvalidInput("leaf_log_density_batch: mask shape does not match batch");
  }
  for (auto v : block.scope) {
    if (v >= batch.cols()) throw InvalidInput("leaf_log_density_batch: batch has too few columns");
  }

  LogTable out(batch.rows(), block.width, 0.0);
  std::vector<double> x(k);
  std::vector<std::uint8_t> observed(k);
  for (std::size_t b = 0; b < batch.rows(); ++b) {
    for (std::size_t j = 0; j < k; ++j) {
      const auto v = block.scope[j];
      observed[j] = missing.empty() || !missing(b, v);
      x[j] = batch(b, v);
      if (observed[j]) check_observed(x[j], j);
    }
    auto row = out.row(b);
    for (std::size_t i = 0; i < block.width; ++i) {
      const double* values = params.values.data() + i * k;
      double total = 0.0;
      if (params.kind == LeafKind::Bernoulli) {
        for (std::size_t j = 0; j < k; ++j) {
          if (observed[j]) total += bernoulli_log_term(x[j], values[j]);
        }
      } else if (params.log_vars.empty()) {
        for (std::size_t j = 0; j < k; ++j) {
          if (observed[j]) total += gaussian_log_term(x[j], values[j]);
        }
      } else {
        const double* log_vars = params.log_vars.data() + i * k;
        for (std::size_t j = 0; j < k; ++j) {
          if (observed[j]) total += gaussian_log_term(x[j], values[j], log_vars[j]);
        }
      }
      row[i] = total;
    }
  }
  return out;
}

}  // namespace ratspn
