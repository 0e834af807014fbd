#include "ratspn/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ratspn/error.hpp"
#include "ratspn/leaves.hpp"

namespace ratspn {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
// Below this the shifted mixture sum is recomputed term by term.
constexpr double kMinShiftedSum = 1e-250;

void check_inputs(const Circuit& c, const ParameterSet& params, const FeatureMatrix& batch,
                  const QueryMask& missing, const SumDropoutMask& dropout) {
  check_parameter_layout(c, params);
  if (batch.cols() != c.num_vars()) {
    throw InvalidInput("batch has " + std::to_string(batch.cols()) + " features, circuit expects " +
                       std::to_string(c.num_vars()));
  }
  if (!missing.empty() && (missing.rows() != batch.rows() || missing.cols() != batch.cols())) {
    throw InvalidInput("missing-value mask shape does not match the batch");
  }
  if (!dropout.empty()) {
    if (dropout.dropped.size() != c.sum_blocks.size()) {
      throw InvalidInput("sum dropout mask does not match the circuit's sum blocks");
    }
    for (std::size_t s = 0; s < c.sum_blocks.size(); ++s) {
      const auto& m = dropout.dropped[s];
      if (m.rows() != batch.rows() || m.cols() != c.sum_blocks[s].input_width) {
        throw InvalidInput("sum dropout mask for block " + std::to_string(s) + " has wrong shape");
      }
    }
  }
}

LogTable& table_of(ForwardTrace& t, BlockRef ref) {
  switch (ref.kind) {
    case BlockKind::Leaf: return t.leaf[ref.index];
    case BlockKind::Product: return t.product[ref.index];
    case BlockKind::Sum: break;
  }
  return t.sum[ref.index];
}

ForwardTrace evaluate(const Circuit& c, const ParameterSet& params, const FeatureMatrix& batch,
                      const QueryMask& missing, const SumDropoutMask& dropout, bool keep_all) {
  check_inputs(c, params, batch, missing, dropout);
  const std::size_t rows = batch.rows();

  ForwardTrace t;
  t.leaf.resize(c.leaf_blocks.size());
  t.product.resize(c.product_blocks.size());
  t.sum.resize(c.sum_blocks.size());

  // Remaining consumers per block, so streamed evaluation can free tables.
  std::vector<int> leaf_uses(c.leaf_blocks.size(), 0);
  std::vector<int> product_uses(c.product_blocks.size(), 0);
  std::vector<int> sum_uses(c.sum_blocks.size(), 0);
  auto uses = [&](BlockRef ref) -> int& {
    switch (ref.kind) {
      case BlockKind::Leaf: return leaf_uses[ref.index];
      case BlockKind::Product: return product_uses[ref.index];
      case BlockKind::Sum: break;
    }
    return sum_uses[ref.index];
  };
  for (const auto& p : c.product_blocks) {
    ++uses(p.left);
    ++uses(p.right);
  }
  for (const auto& s : c.sum_blocks) {
    for (const auto& in : s.inputs) ++uses(in);
  }
  auto release = [&](BlockRef ref) {
    if (!keep_all && --uses(ref) == 0) table_of(t, ref) = LogTable();
  };

  for (std::size_t l = 0; l < c.leaf_blocks.size(); ++l) {
    t.leaf[l] = leaf_log_density_batch(c.leaf_blocks[l], leaf_block_params(params, l), batch,
                                       missing);
  }

  std::vector<double> inputs, scratch;
  for (const auto& layer : c.layers) {
    for (std::size_t p : layer.products) {
      const auto& block = c.product_blocks[p];
      const LogTable& left = table_of(t, block.left);
      const LogTable& right = table_of(t, block.right);
      LogTable out(rows, block.width);
      for (std::size_t b = 0; b < rows; ++b) {
        auto dst = out.row(b);
        const auto r = right.row(b);
        std::size_t col = 0;
        for (double a : left.row(b)) {
          for (double z : r) dst[col++] = a + z;
        }
      }
      t.product[p] = std::move(out);
      release(block.left);
      release(block.right);
    }
    for (std::size_t s : layer.sums) {
      const auto& block = c.sum_blocks[s];
      const auto log_w = log_normalized_weights(params.sum_logits[s], block.width, block.input_width);
      std::vector<double> w(log_w.size());
      std::transform(log_w.begin(), log_w.end(), w.begin(), [](double v) { return std::exp(v); });
      LogTable out(rows, block.width);
      inputs.resize(block.input_width);
      for (std::size_t b = 0; b < rows; ++b) {
        std::size_t offset = 0;
        for (const auto& in : block.inputs) {
          const auto src = table_of(t, in).row(b);
          std::copy(src.begin(), src.end(), inputs.begin() + offset);
          offset += src.size();
        }
        if (!dropout.empty()) {
          const auto drop = dropout.dropped[s].row(b);
          for (std::size_t k = 0; k < inputs.size(); ++k) {
            if (drop[k]) inputs[k] = kNegInf;
          }
        }
        log_sum_block(inputs, log_w, w, out.row(b), scratch);
      }
      t.sum[s] = std::move(out);
      for (const auto& in : block.inputs) release(in);
    }
  }
  return t;
}

}  // namespace

const LogTable& ForwardTrace::table(BlockRef ref) const {
  switch (ref.kind) {
    case BlockKind::Leaf: return leaf.at(ref.index);
    case BlockKind::Product: return product.at(ref.index);
    case BlockKind::Sum: break;
  }
  return sum.at(ref.index);
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return kNegInf;
  const double top = *std::max_element(values.begin(), values.end());
  if (top == kNegInf) return kNegInf;
  double total = 0.0;
  for (double v : values) total += std::exp(v - top);
  return top + std::log(total);
}

void log_sum_block(std::span<const double> inputs, std::span<const double> log_weights,
                   std::span<const double> weights, std::span<double> out,
                   std::vector<double>& scratch) {
  const std::size_t n = inputs.size();
  const double top = n ? *std::max_element(inputs.begin(), inputs.end()) : kNegInf;
  if (top == kNegInf) {
    std::fill(out.begin(), out.end(), kNegInf);
    return;
  }
  scratch.resize(n);
  for (std::size_t k = 0; k < n; ++k) scratch[k] = std::exp(inputs[k] - top);
  for (std::size_t s = 0; s < out.size(); ++s) {
    const double* w = weights.data() + s * n;
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) z += w[k] * scratch[k];
    if (z >= kMinShiftedSum) {
      out[s] = top + std::log(z);
      continue;
    }
    // Heavily skewed weights: fall back to a per-node max shift.
    const double* lw = log_weights.data() + s * n;
    double best = kNegInf;
    for (std::size_t k = 0; k < n; ++k) best = std::max(best, lw[k] + inputs[k]);
    if (best == kNegInf) {
      out[s] = kNegInf;
      continue;
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) acc += std::exp(lw[k] + inputs[k] - best);
    out[s] = best + std::log(acc);
  }
}

LogTable forward_log(const Circuit& circuit, const ParameterSet& params,
                     const FeatureMatrix& batch, const QueryMask& missing,
                     const SumDropoutMask& dropout) {
  auto trace = evaluate(circuit, params, batch, missing, dropout, false);
  return std::move(trace.sum[circuit.root_block]);
}

ForwardTrace forward_trace(const Circuit& circuit, const ParameterSet& params,
                           const FeatureMatrix& batch, const QueryMask& missing,
                           const SumDropoutMask& dropout) {
  return evaluate(circuit, params, batch, missing, dropout, true);
}

std::vector<double> uniform_log_prior(std::size_t num_classes) {
  return std::vector<double>(num_classes, -std::log(static_cast<double>(num_classes)));
}

std::vector<double> empirical_log_prior(std::span<const int> labels, std::size_t num_classes) {
  std::vector<double> counts(num_classes, 0.0);
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw InvalidInput("label " + std::to_string(y) + " outside [0, C)");
    }
    counts[y] += 1.0;
  }
  if (labels.empty()) throw InvalidInput("empirical prior needs at least one label");
  const double n = static_cast<double>(labels.size());
  for (auto& v : counts) v = v > 0.0 ? std::log(v / n) : kNegInf;
  return counts;
}

void check_log_prior(std::span<const double> log_prior, std::size_t num_classes) {
  if (log_prior.size() != num_classes) {
    throw InvalidInput("prior has " + std::to_string(log_prior.size()) + " entries, expected " +
                       std::to_string(num_classes));
  }
  double mass = 0.0;
  for (double v : log_prior) {
    if (std::isnan(v) || v > 0.0) throw InvalidInput("prior log-probabilities must be <= 0");
    mass += std::exp(v);
  }
  if (std::abs(mass - 1.0) > 1e-9) throw InvalidInput("class prior is not normalized");
}

LogTable add_log_prior(const LogTable& roots, std::span<const double> log_prior) {
  check_log_prior(log_prior, roots.cols());
  LogTable out = roots;
  for (std::size_t b = 0; b < out.rows(); ++b) {
    auto row = out.row(b);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += log_prior[c];
  }
  return out;
}

LogTable log_joint(const Circuit& circuit, const ParameterSet& params, const FeatureMatrix& batch,
                   std::span<const double> log_prior, const QueryMask& missing) {
  check_log_prior(log_prior, circuit.num_classes);
  return add_log_prior(forward_log(circuit, params, batch, missing), log_prior);
}

std::vector<std::size_t> argmax_rows(const LogTable& table) {
  std::vector<std::size_t> out(table.rows(), 0);
  for (std::size_t b = 0; b < table.rows(); ++b) {
    const auto row = table.row(b);
    // max_element returns the first maximum, which is the tie rule.
    out[b] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

std::vector<std::size_t> classify(const Circuit& circuit, const ParameterSet& params,
                                  const FeatureMatrix& batch, std::span<const double> log_prior,
                                  const QueryMask& missing) {
  return argmax_rows(log_joint(circuit, params, batch, log_prior, missing));
}

std::vector<double> log_marginal_from_roots(const LogTable& roots,
                                            std::span<const double> log_prior) {
  const LogTable joint = add_log_prior(roots, log_prior);
  std::vector<double> out(joint.rows());
  for (std::size_t b = 0; b < joint.rows(); ++b) out[b] = log_sum_exp(joint.row(b));
  return out;
}

std::vector<double> log_marginal_input(const Circuit& circuit, const ParameterSet& params,
                                       const FeatureMatrix& batch,
                                       std::span<const double> log_prior,
                                       const QueryMask& missing) {
  check_log_prior(log_prior, circuit.num_classes);
  return log_marginal_from_roots(forward_log(circuit, params, batch, missing), log_prior);
}

std::vector<double> conditional_log(const Circuit& circuit, const ParameterSet& params,
                                    const FeatureMatrix& batch, const QueryMask& query,
                                    const QueryMask& evidence,
                                    std::span<const double> log_prior) {
  const std::size_t rows = batch.rows(), cols = batch.cols();
  auto shape_ok = [&](const QueryMask& m) { return m.rows() == rows && m.cols() == cols; };
  if (!shape_ok(query) || !shape_ok(evidence)) {
    throw InvalidInput("conditional_log: query/evidence masks must match the batch shape");
  }
  QueryMask joint_missing(rows, cols, 1), evidence_missing(rows, cols, 1);
  for (std::size_t b = 0; b < rows; ++b) {
    for (std::size_t v = 0; v < cols; ++v) {
      if (query(b, v) && evidence(b, v)) {
        throw InvalidInput("conditional_log: variable " + std::to_string(v) +
                           " is both query and evidence in sample " + std::to_string(b));
      }
      joint_missing(b, v) = !(query(b, v) || evidence(b, v));
      evidence_missing(b, v) = !evidence(b, v);
    }
  }
  const auto numerator = log_marginal_input(circuit, params, batch, log_prior, joint_missing);
  const auto denominator = log_marginal_input(circuit, params, batch, log_prior, evidence_missing);
  std::vector<double> out(rows);
  for (std::size_t b = 0; b < rows; ++b) out[b] = numerator[b] - denominator[b];
  return out;
}

}  // namespace ratspn
