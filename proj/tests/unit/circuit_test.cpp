#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "ratspn/circuit.hpp"
#include "ratspn/error.hpp"
#include "support.hpp"

using namespace ratspn;

namespace {

bool has_violation(const ValidationReport& r, const std::string& needle) {
  return std::any_of(r.violations.begin(), r.violations.end(),
                     [&](const std::string& v) { return v.find(needle) != std::string::npos; });
}

}  // namespace

TEST(Circuit, SevenVariableExampleWidths) {
  const auto g = random_region_graph(7, 2, 2, 1);
  const auto c = construct_circuit(g, 3, 2, 2);
  ASSERT_TRUE(validate_circuit(c).ok()) << validate_circuit(c).to_string();
  EXPECT_EQ(c.sum_blocks[c.root_block].width, 3u);
  for (std::size_t s = 0; s < c.sum_blocks.size(); ++s) {
    if (s != c.root_block) EXPECT_EQ(c.sum_blocks[s].width, 2u);
  }
  for (const auto& l : c.leaf_blocks) EXPECT_EQ(l.width, 2u);
  EXPECT_EQ(c.stack_depth(), 4u);
}

TEST(Circuit, TwoVariablesCrossProduct) {
  const auto g = random_region_graph(2, 1, 1, 0);
  const auto c = construct_circuit(g, 1, 1, 2);
  ASSERT_EQ(c.product_blocks.size(), 1u);
  EXPECT_EQ(c.product_blocks[0].width, 4u);
  EXPECT_EQ(c.sum_blocks[c.root_block].input_width, 4u);
  EXPECT_EQ(count_parameters(c, false).num_sum_logits, 4u);
}

TEST(Circuit, ParameterCounts) {
  const auto g = random_region_graph(4, 1, 1, 0);
  const auto c = construct_circuit(g, 1, 1, 2);
  const auto fixed = count_parameters(c, false);
  EXPECT_EQ(fixed.num_sum_logits, 4u);
  EXPECT_EQ(fixed.num_leaf_params, 8u);
  EXPECT_EQ(fixed.total, 12u);
  EXPECT_EQ(count_parameters(c, true).total, 20u);
}

TEST(Circuit, SingleVariableMixture) {
  const auto g = random_region_graph(1, 2, 3, 0);
  const auto c = construct_circuit(g, 2, 4, 3);
  ASSERT_TRUE(validate_circuit(c).ok()) << validate_circuit(c).to_string();
  EXPECT_EQ(c.sum_blocks.size(), 1u);
  EXPECT_EQ(c.sum_blocks[0].input_width, 3u);
  EXPECT_EQ(count_parameters(c, false).total, 2u * 3u + 3u);
}

TEST(Circuit, RejectsZeroWidthsAndBadGraphs) {
  const auto g = random_region_graph(4, 1, 1, 0);
  EXPECT_THROW(construct_circuit(g, 0, 1, 1), InvalidInput);
  auto bad = g;
  bad.regions.push_back(bad.regions[1]);
  EXPECT_THROW(construct_circuit(bad, 1, 1, 1), StructuralError);
}

TEST(Circuit, DetectsDecomposabilityViolation) {
  auto c = construct_circuit(random_region_graph(6, 1, 1, 4), 1, 2, 2);
  // make the product's right input share a variable with the left
  auto& right = c.leaf_blocks[c.product_blocks[0].right.index].scope;
  right.push_back(c.leaf_blocks[c.product_blocks[0].left.index].scope.front());
  std::sort(right.begin(), right.end());
  const auto report = validate_circuit(c);
  EXPECT_TRUE(has_violation(report, "decomposability violated at product")) << report.to_string();
}

TEST(Circuit, DetectsCompletenessViolation) {
  auto c = construct_circuit(random_region_graph(8, 2, 2, 4), 1, 2, 2);
  // feed the root sum a product over a smaller scope
  const auto inner = std::find_if(c.product_blocks.begin(), c.product_blocks.end(),
                                  [&](const ProductBlock& p) { return p.scope.size() < 8; });
  ASSERT_NE(inner, c.product_blocks.end());
  auto& root = c.sum_blocks[c.root_block];
  root.inputs.push_back({BlockKind::Product, static_cast<std::size_t>(inner - c.product_blocks.begin())});
  root.input_width += inner->width;
  const auto report = validate_circuit(c);
  EXPECT_TRUE(has_violation(report, "completeness violated at sum")) << report.to_string();
}

TEST(Circuit, DetectsWiringWidthMismatch) {
  auto c = construct_circuit(random_region_graph(4, 1, 1, 4), 1, 2, 2);
  c.sum_blocks[c.root_block].input_width += 1;
  EXPECT_TRUE(has_violation(validate_circuit(c), "wiring width"));
}

TEST(Circuit, LogNormalizedWeightsSumToOne) {
  Rng rng(3);
  std::vector<double> logits(5 * 7);
  for (auto& v : logits) v = 10 * rng.normal();
  const auto lw = log_normalized_weights(logits, 5, 7);
  for (std::size_t r = 0; r < 5; ++r) {
    double total = 0.0;
    for (std::size_t k = 0; k < 7; ++k) total += std::exp(lw[r * 7 + k]);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Circuit, InitializationLayout) {
  const auto c = construct_circuit(random_region_graph(9, 2, 3, 8), 3, 4, 5);
  Rng rng(1);
  InitOptions opts;
  opts.train_variance = true;
  const auto p = init_parameters(c, opts, rng);
  EXPECT_NO_THROW(check_parameter_layout(c, p));
  for (const auto& block : p.sum_logits) {
    for (double v : block) EXPECT_LT(std::abs(v), 0.1);  // spread 1e-2
  }
  EXPECT_TRUE(p.trains_variance());
  opts.leaf_kind = LeafKind::Bernoulli;
  EXPECT_THROW(init_parameters(c, opts, rng), InvalidInput);
}

// Properties over random configurations.

TEST(CircuitProperty, SoundByConstruction) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = support::random_spec(rng);
    const auto c = support::build_circuit(s);
    const auto report = validate_circuit(c);
    ASSERT_TRUE(report.ok()) << s.describe() << "\n" << report.to_string();
    for (const auto& sum : c.sum_blocks) {
      std::size_t total = 0;
      for (const auto& in : sum.inputs) {
        EXPECT_EQ(c.scope(in), sum.scope);
        total += c.width(in);
      }
      EXPECT_EQ(total, sum.input_width);
    }
    for (const auto& p : c.product_blocks) {
      EXPECT_EQ(p.width, c.width(p.left) * c.width(p.right));
    }
    if (s.num_vars >= (1u << s.depth)) EXPECT_EQ(c.stack_depth(), 2 * s.depth) << s.describe();
  }
}

// Merging coincident regions across repetitions changes the count, so the
// seed invariance holds for graphs in which no merge happened.
TEST(CircuitProperty, ParameterCountSeedInvariant) {
  Rng rng(4);
  auto unmerged = [](const Circuit& c, const support::Spec& s) {
    const std::size_t per_rep = (std::size_t{1} << s.depth) - 1;
    return c.graph.partitions.size() == s.repetitions * per_rep &&
           c.graph.regions.size() == 1 + 2 * s.repetitions * per_rep;
  };
  int compared = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto s = support::random_spec(rng);
    s.num_vars = std::max(s.num_vars, 1u << s.depth);
    const auto ca = support::build_circuit(s);
    const auto a = count_parameters(ca, false);
    EXPECT_EQ(a.total, a.num_sum_logits + a.num_leaf_params);
    s.seed += 1;
    const auto cb = support::build_circuit(s);
    if (!unmerged(ca, s) || !unmerged(cb, s)) continue;
    EXPECT_EQ(a, count_parameters(cb, false)) << s.describe();
    ++compared;
  }
  EXPECT_GT(compared, 100);
}
