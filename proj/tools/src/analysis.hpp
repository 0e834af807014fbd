#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace ratspn::cli {

/// Area under the ROC curve when `positive` scores should rank above
/// `negative` ones: P(pos > neg) + P(pos == neg) / 2, via one sort.
double roc_auc(std::span<const double> positive, std::span<const double> negative);

struct Histogram {
  std::vector<double> edges;  // bins + 1 entries
  std::vector<std::vector<std::size_t>> counts;  // one vector per input set
};

/// Shared equal-width bins spanning the finite values of all sets.
/// Non-finite scores are clamped into the outermost bins.
Histogram histogram(const std::vector<std::vector<double>>& sets, std::size_t bins);

/// Linear-interpolated percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

}  // namespace ratspn::cli
