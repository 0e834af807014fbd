#include "ratspn/circuit.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <string>

#include "ratspn/error.hpp"
#include "ratspn/random.hpp"

namespace ratspn {

std::size_t Circuit::width(BlockRef ref) const {
  switch (ref.kind) {
    case BlockKind::Leaf: return leaf_blocks.at(ref.index).width;
    case BlockKind::Product: return product_blocks.at(ref.index).width;
    case BlockKind::Sum: return sum_blocks.at(ref.index).width;
  }
  return 0;
}

const VariableScope& Circuit::scope(BlockRef ref) const {
  switch (ref.kind) {
    case BlockKind::Leaf: return leaf_blocks.at(ref.index).scope;
    case BlockKind::Product: return product_blocks.at(ref.index).scope;
    case BlockKind::Sum: break;
  }
  return sum_blocks.at(ref.index).scope;
}

std::size_t Circuit::stack_depth() const {
  std::size_t depth = 0;
  for (const auto& layer : layers) {
    depth += layer.products.empty() ? 0 : 1;
    depth += layer.sums.empty() ? 0 : 1;
  }
  return depth;
}

Circuit construct_circuit(const RegionGraph& graph, std::size_t num_classes,
                          std::size_t num_sums, std::size_t num_leaves) {
  if (num_classes == 0 || num_sums == 0 || num_leaves == 0) {
    throw InvalidInput("construct_circuit: C, S and I must all be positive");
  }
  if (auto report = validate_region_graph(graph); !report.ok()) {
    throw StructuralError("construct_circuit: invalid region graph: " + report.to_string());
  }

  Circuit c;
  c.graph = graph;
  c.num_classes = num_classes;
  c.num_sums = num_sums;
  c.num_leaves = num_leaves;
  c.region_blocks.resize(graph.regions.size());

  const auto heights = graph.heights();
  const std::size_t top = heights[graph.root()];

  if (graph.partitions.empty()) {
    // Single region: C sums over I leaves of the full scope.
    const auto& scope = graph.regions[0].scope;
    c.leaf_blocks.push_back({0, scope, num_leaves});
    c.sum_blocks.push_back({0, scope, num_classes, {{BlockKind::Leaf, 0}}, num_leaves});
    c.region_blocks[0] = {BlockKind::Sum, 0};
    c.layers.push_back({{}, {0}});
    c.root_block = 0;
    return c;
  }

  // Region blocks first so products can reference them.
  for (std::size_t r = 0; r < graph.regions.size(); ++r) {
    const auto& scope = graph.regions[r].scope;
    if (heights[r] == 0) {
      c.region_blocks[r] = {BlockKind::Leaf, c.leaf_blocks.size()};
      c.leaf_blocks.push_back({r, scope, num_leaves});
    } else {
      const std::size_t width = r == graph.root() ? num_classes : num_sums;
      c.region_blocks[r] = {BlockKind::Sum, c.sum_blocks.size()};
      c.sum_blocks.push_back({r, scope, width, {}, 0});
    }
  }
  c.root_block = c.region_blocks[graph.root()].index;

  c.layers.resize(top);
  for (std::size_t p = 0; p < graph.partitions.size(); ++p) {
    const auto& part = graph.partitions[p];
    ProductBlock block;
    block.partition = p;
    block.left = c.region_blocks[part.first];
    block.right = c.region_blocks[part.second];
    block.scope = graph.regions[part.parent].scope;
    block.width = c.width(block.left) * c.width(block.right);
    const std::size_t index = c.product_blocks.size();
    c.product_blocks.push_back(std::move(block));

    auto& sum = c.sum_blocks[c.region_blocks[part.parent].index];
    sum.inputs.push_back({BlockKind::Product, index});
    sum.input_width += c.product_blocks.back().width;
    c.layers[heights[part.parent] - 1].products.push_back(index);
  }
  for (std::size_t s = 0; s < c.sum_blocks.size(); ++s) {
    c.layers[heights[c.sum_blocks[s].region] - 1].sums.push_back(s);
  }
  return c;
}

ValidationReport validate_circuit(const Circuit& c) {
  ValidationReport report = validate_region_graph(c.graph);
  auto flag = [&](std::string msg) { report.violations.push_back(std::move(msg)); };
  if (!report.ok()) return report;

  auto valid_ref = [&](BlockRef ref) {
    switch (ref.kind) {
      case BlockKind::Leaf: return ref.index < c.leaf_blocks.size();
      case BlockKind::Product: return ref.index < c.product_blocks.size();
      case BlockKind::Sum: return ref.index < c.sum_blocks.size();
    }
    return false;
  };

  if (c.region_blocks.size() != c.graph.regions.size()) {
    flag("region block table has " + std::to_string(c.region_blocks.size()) +
         " entries for " + std::to_string(c.graph.regions.size()) + " regions");
    return report;
  }
  for (std::size_t r = 0; r < c.region_blocks.size(); ++r) {
    if (!valid_ref(c.region_blocks[r])) {
      flag("region " + std::to_string(r) + " references a missing block");
    }
  }
  if (c.root_block >= c.sum_blocks.size()) {
    flag("root block index out of range");
    return report;
  }

  for (std::size_t i = 0; i < c.leaf_blocks.size(); ++i) {
    const auto& b = c.leaf_blocks[i];
    const std::string id = "leaf block " + std::to_string(i);
    if (b.width != c.num_leaves) flag(id + ": width " + std::to_string(b.width) + " != I");
    if (b.region >= c.graph.regions.size() || b.scope != c.graph.regions[b.region].scope) {
      flag(id + ": scope does not match its region");
    }
  }

  for (std::size_t i = 0; i < c.product_blocks.size(); ++i) {
    const auto& b = c.product_blocks[i];
    const std::string id = "product " + std::to_string(i);
    if (!valid_ref(b.left) || !valid_ref(b.right) || b.left.kind == BlockKind::Product ||
        b.right.kind == BlockKind::Product) {
      flag(id + ": invalid input reference");
      continue;
    }
    const auto& a = c.scope(b.left);
    const auto& z = c.scope(b.right);
    VariableScope overlap;
    std::set_intersection(a.begin(), a.end(), z.begin(), z.end(), std::back_inserter(overlap));
    if (!overlap.empty()) {
      flag("decomposability violated at product " + std::to_string(i) + ": inputs share " +
           std::to_string(overlap.size()) + " variable(s), first X" +
           std::to_string(overlap.front()));
    }
    VariableScope joined;
    std::set_union(a.begin(), a.end(), z.begin(), z.end(), std::back_inserter(joined));
    if (joined != b.scope) flag(id + ": scope is not the union of its input scopes");
    if (b.width != c.width(b.left) * c.width(b.right)) {
      flag(id + ": width " + std::to_string(b.width) + " is not the product of input widths");
    }
  }

  for (std::size_t i = 0; i < c.sum_blocks.size(); ++i) {
    const auto& b = c.sum_blocks[i];
    const std::string id = "sum " + std::to_string(i);
    const std::size_t expected = i == c.root_block ? c.num_classes : c.num_sums;
    if (b.width != expected) flag(id + ": width " + std::to_string(b.width) + " != expected");
    if (b.inputs.empty()) flag(id + ": no inputs");
    if (b.region >= c.graph.regions.size() || b.scope != c.graph.regions[b.region].scope) {
      flag(id + ": scope does not match its region");
    }
    std::size_t total = 0;
    bool complete = true;
    for (const auto& in : b.inputs) {
      if (!valid_ref(in) || in.kind == BlockKind::Sum) {
        flag(id + ": invalid input reference");
        complete = false;
        continue;
      }
      total += c.width(in);
      if (c.scope(in) != b.scope) complete = false;
    }
    if (!complete) {
      flag("completeness violated at sum " + std::to_string(i) +
           ": inputs do not all share the sum's scope");
    }
    if (total != b.input_width) {
      flag(id + ": wiring width " + std::to_string(b.input_width) + " but inputs provide " +
           std::to_string(total));
    }
  }

  // Every input must be produced before it is consumed.
  std::vector<bool> product_done(c.product_blocks.size(), false);
  std::vector<bool> sum_done(c.sum_blocks.size(), false);
  auto ready = [&](BlockRef ref) -> bool {
    if (!valid_ref(ref)) return false;
    if (ref.kind == BlockKind::Leaf) return true;
    return ref.kind == BlockKind::Product ? product_done[ref.index] : sum_done[ref.index];
  };
  for (std::size_t l = 0; l < c.layers.size(); ++l) {
    for (std::size_t p : c.layers[l].products) {
      if (p >= c.product_blocks.size()) {
        flag("layer " + std::to_string(l) + " lists unknown product " + std::to_string(p));
        continue;
      }
      if (!ready(c.product_blocks[p].left) || !ready(c.product_blocks[p].right)) {
        flag("product " + std::to_string(p) + " evaluated before its inputs");
      }
      product_done[p] = true;
    }
    for (std::size_t s : c.layers[l].sums) {
      if (s >= c.sum_blocks.size()) {
        flag("layer " + std::to_string(l) + " lists unknown sum " + std::to_string(s));
        continue;
      }
      for (const auto& in : c.sum_blocks[s].inputs) {
        if (!ready(in)) flag("sum " + std::to_string(s) + " evaluated before its inputs");
      }
      sum_done[s] = true;
    }
  }
  if (std::find(product_done.begin(), product_done.end(), false) != product_done.end() ||
      std::find(sum_done.begin(), sum_done.end(), false) != sum_done.end()) {
    flag("layer order does not schedule every block");
  }
  return report;
}

ParameterCount count_parameters(const Circuit& c, bool train_variance) {
  ParameterCount count;
  for (const auto& s : c.sum_blocks) count.num_sum_logits += s.width * s.input_width;
  for (const auto& l : c.leaf_blocks) count.num_leaf_params += l.width * l.scope.size();
  if (train_variance) count.num_leaf_params *= 2;
  count.total = count.num_sum_logits + count.num_leaf_params;
  return count;
}

ParameterSet init_parameters(const Circuit& c, const InitOptions& options, Rng& rng) {
  if (options.train_variance && options.leaf_kind != LeafKind::Gaussian) {
    throw InvalidInput("init_parameters: variance training requires Gaussian leaves");
  }
  const bool use_stats = !options.feature_mean.empty();
  if (use_stats && (options.feature_mean.size() != c.num_vars() ||
                    options.feature_spread.size() != c.num_vars())) {
    throw InvalidInput("init_parameters: feature statistics do not match num_vars");
  }

  ParameterSet params;
  params.leaf_kind = options.leaf_kind;
  for (const auto& s : c.sum_blocks) {
    std::vector<double> logits(s.width * s.input_width);
    for (auto& v : logits) v = options.logit_spread * rng.normal();
    params.sum_logits.push_back(std::move(logits));
  }
  for (const auto& l : c.leaf_blocks) {
    std::vector<double> values(l.width * l.scope.size());
    for (std::size_t i = 0; i < l.width; ++i) {
      for (std::size_t j = 0; j < l.scope.size(); ++j) {
        const double z = rng.normal();
        const auto v = l.scope[j];
        values[i * l.scope.size() + j] =
            use_stats && options.leaf_kind == LeafKind::Gaussian
                ? options.feature_mean[v] + options.feature_spread[v] * z
                : z;
      }
    }
    params.leaf_params.push_back(std::move(values));
    if (options.train_variance) {
      params.leaf_log_vars.emplace_back(l.width * l.scope.size(), 0.0);
    }
  }
  return params;
}

ParameterSet zeros_like(const ParameterSet& like) {
  ParameterSet out = like;
  for (auto* group : {&out.sum_logits, &out.leaf_params, &out.leaf_log_vars}) {
    for (auto& v : *group) std::fill(v.begin(), v.end(), 0.0);
  }
  return out;
}

void check_parameter_layout(const Circuit& c, const ParameterSet& params) {
  if (params.sum_logits.size() != c.sum_blocks.size() ||
      params.leaf_params.size() != c.leaf_blocks.size()) {
    throw InvalidInput("parameter set does not match circuit block counts");
  }
  for (std::size_t s = 0; s < c.sum_blocks.size(); ++s) {
    if (params.sum_logits[s].size() != c.sum_blocks[s].width * c.sum_blocks[s].input_width) {
      throw InvalidInput("sum block " + std::to_string(s) + ": logit count mismatch");
    }
  }
  for (std::size_t l = 0; l < c.leaf_blocks.size(); ++l) {
    const std::size_t n = c.leaf_blocks[l].width * c.leaf_blocks[l].scope.size();
    if (params.leaf_params[l].size() != n) {
      throw InvalidInput("leaf block " + std::to_string(l) + ": parameter count mismatch");
    }
    if (params.trains_variance() && params.leaf_log_vars.at(l).size() != n) {
      throw InvalidInput("leaf block " + std::to_string(l) + ": log-variance count mismatch");
    }
  }
  if (params.trains_variance() &&
      (params.leaf_log_vars.size() != c.leaf_blocks.size() ||
       params.leaf_kind != LeafKind::Gaussian)) {
    throw InvalidInput("log-variances require one Gaussian entry per leaf block");
  }
}

std::vector<double> log_normalized_weights(std::span<const double> logits, std::size_t rows,
                                           std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = logits.subspan(r * cols, cols);
    const double top = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - top);
    const double log_z = top + std::log(total);
    for (std::size_t k = 0; k < cols; ++k) out[r * cols + k] = row[k] - log_z;
  }
  return out;
}

}  // namespace ratspn
