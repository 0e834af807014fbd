#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ratspn/region_graph.hpp"

namespace ratspn {

class Rng;

enum class LeafKind { Gaussian, Bernoulli };

enum class BlockKind : std::uint8_t { Leaf, Product, Sum };

struct BlockRef {
  BlockKind kind = BlockKind::Leaf;
  std::size_t index = 0;

  friend bool operator==(const BlockRef&, const BlockRef&) = default;
};

/// I input distributions over one leaf region.
struct LeafBlock {
  std::size_t region = 0;
  VariableScope scope;
  std::size_t width = 0;
};

/// Full cross product of two region blocks. Node (a, b) sits at column
/// a * width(right) + b.
struct ProductBlock {
  std::size_t partition = 0;
  BlockRef left;
  BlockRef right;
  VariableScope scope;
  std::size_t width = 0;
};

/// Sum nodes of one region (C at the root, S elsewhere). Every sum node
/// mixes all columns of all `inputs`, concatenated in order.
struct SumBlock {
  std::size_t region = 0;
  VariableScope scope;
  std::size_t width = 0;
  std::vector<BlockRef> inputs;
  std::size_t input_width = 0;
};

/// Product blocks of one layer are evaluated before its sum blocks.
struct CircuitLayer {
  std::vector<std::size_t> products;
  std::vector<std::size_t> sums;
};

/// Tensorized SPN over a region graph. Like RegionGraph this is a plain
/// aggregate; validate_circuit() checks an instance for soundness.
struct Circuit {
  RegionGraph graph;
  std::size_t num_classes = 0;
  std::size_t num_sums = 0;
  std::size_t num_leaves = 0;

  std::vector<LeafBlock> leaf_blocks;
  std::vector<ProductBlock> product_blocks;
  std::vector<SumBlock> sum_blocks;

  /// Block holding each region's nodes (leaf block or sum block).
  std::vector<BlockRef> region_blocks;
  std::vector<CircuitLayer> layers;
  std::size_t root_block = 0;  // index into sum_blocks

  std::size_t num_vars() const { return graph.num_vars; }
  std::size_t width(BlockRef ref) const;
  const VariableScope& scope(BlockRef ref) const;

  /// Number of non-empty product and sum layers above the leaves.
  std::size_t stack_depth() const;
};

/// Populate a region graph with node blocks. Leaf regions receive
/// `num_leaves` distributions, the root `num_classes` sums and every other
/// region `num_sums` sums. A single-variable graph has no partitions; its
/// root then mixes a leaf block over that variable directly.
///
/// Throws StructuralError if the graph fails validation and InvalidInput if
/// any width is zero.
Circuit construct_circuit(const RegionGraph& graph, std::size_t num_classes,
                          std::size_t num_sums, std::size_t num_leaves);

/// Completeness, decomposability, scope bookkeeping, wiring widths and
/// evaluation order.
ValidationReport validate_circuit(const Circuit& circuit);

/// Unnormalized parameters. Sum weights are the row-wise softmax of
/// `sum_logits`.
struct ParameterSet {
  LeafKind leaf_kind = LeafKind::Gaussian;
  /// Per sum block: width x input_width, row-major.
  std::vector<std::vector<double>> sum_logits;
  /// Per leaf block: width x |scope|, row-major. Means for Gaussian leaves,
  /// success logits for Bernoulli leaves.
  std::vector<std::vector<double>> leaf_params;
  /// Per leaf block, same layout as leaf_params. Empty unless Gaussian
  /// variances are trained.
  std::vector<std::vector<double>> leaf_log_vars;

  bool trains_variance() const { return !leaf_log_vars.empty(); }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;
};

/// Gradients share the parameter layout.
using GradientSet = ParameterSet;

struct ParameterCount {
  std::size_t num_sum_logits = 0;
  std::size_t num_leaf_params = 0;
  std::size_t total = 0;

  friend bool operator==(const ParameterCount&, const ParameterCount&) = default;
};

ParameterCount count_parameters(const Circuit& circuit, bool train_variance);

struct InitOptions {
  LeafKind leaf_kind = LeafKind::Gaussian;
  bool train_variance = false;
  double logit_spread = 1e-2;
  /// Optional per-variable location/spread of the training data. When given,
  /// Gaussian means start at mean + spread * z instead of z ~ N(0, 1).
  std::span<const double> feature_mean;
  std::span<const double> feature_spread;
};

ParameterSet init_parameters(const Circuit& circuit, const InitOptions& options, Rng& rng);

/// Zero-valued set with the layout of `like`.
ParameterSet zeros_like(const ParameterSet& like);

/// Throws InvalidInput if `params` does not match the circuit's layout.
void check_parameter_layout(const Circuit& circuit, const ParameterSet& params);

/// Row-wise log-softmax of a rows x cols logit matrix.
std::vector<double> log_normalized_weights(std::span<const double> logits,
                                           std::size_t rows, std::size_t cols);

}  // namespace ratspn
