#include "analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace ratspn::cli {

double roc_auc(std::span<const double> positive, std::span<const double> negative) {
  if (positive.empty() || negative.empty()) throw std::invalid_argument("roc_auc: empty score set");
  std::vector<std::pair<double, int>> all;
  all.reserve(positive.size() + negative.size());
  for (double v : positive) all.emplace_back(v, 1);
  for (double v : negative) all.emplace_back(v, 0);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  // Mann-Whitney U from average ranks
  double positive_rank_sum = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].second) positive_rank_sum += rank;
    }
    i = j;
  }
  const double np = static_cast<double>(positive.size());
  const double nn = static_cast<double>(negative.size());
  return (positive_rank_sum - np * (np + 1) / 2) / (np * nn);
}

Histogram histogram(const std::vector<std::vector<double>>& sets, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("histogram: need at least one bin");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& s : sets) {
    for (double v : s) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!std::isfinite(lo)) lo = hi = 0.0;
  if (hi == lo) hi = lo + 1.0;
  Histogram h;
  for (std::size_t b = 0; b <= bins; ++b) {
    h.edges.push_back(lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins));
  }
  h.edges.back() = hi;
  for (const auto& s : sets) {
    std::vector<std::size_t> counts(bins, 0);
    for (double v : s) {
      std::size_t b = 0;
      if (v >= hi) {
        b = bins - 1;
      } else if (v > lo) {
        b = std::min(bins - 1, static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins)));
      }
      ++counts[b];
    }
    h.counts.push_back(std::move(counts));
  }
  return h;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto below = static_cast<std::size_t>(std::floor(pos));
  const auto above = std::min(values.size() - 1, below + 1);
  const double frac = pos - static_cast<double>(below);
  if (frac == 0.0) return values[below];
  return values[below] + frac * (values[above] - values[below]);
}

}  // namespace ratspn::cli
