#include "ratspn/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ratspn/error.hpp"
#include "ratspn/leaves.hpp"
#include "ratspn/random.hpp"

namespace ratspn {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kMinShiftedSum = 1e-250;

void check_labels(const LogTable& roots, std::span<const int> labels) {
  if (labels.size() != roots.rows()) {
    throw InvalidInput("got " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(roots.rows()) + " samples");
  }
  if (roots.rows() == 0) throw InvalidInput("objective of an empty batch is undefined");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= roots.cols()) {
      throw InvalidInput("label " + std::to_string(y) + " outside [0, " +
                         std::to_string(roots.cols()) + ")");
    }
  }
}

template <class Fn>
void for_each_group(ParameterSet& params, Fn&& fn) {
  for (auto* group : {&params.sum_logits, &params.leaf_params, &params.leaf_log_vars}) {
    for (auto& v : *group) fn(v);
  }
}

std::string first_nonfinite_block(const Circuit& c, const ForwardTrace& t) {
  auto bad = [](const LogTable& table) {
    return std::any_of(table.values().begin(), table.values().end(),
                       [](double v) { return !std::isfinite(v); });
  };
  for (std::size_t l = 0; l < t.leaf.size(); ++l) {
    if (bad(t.leaf[l])) return "leaf block " + std::to_string(l) + " (region " +
                               std::to_string(c.leaf_blocks[l].region) + ")";
  }
  for (const auto& layer : c.layers) {
    for (auto p : layer.products) {
      if (bad(t.product[p])) return "product block " + std::to_string(p) + " (partition " +
                                    std::to_string(c.product_blocks[p].partition) + ")";
    }
    for (auto s : layer.sums) {
      if (bad(t.sum[s])) return "sum block " + std::to_string(s) + " (region " +
                                std::to_string(c.sum_blocks[s].region) + ")";
    }
  }
  return "no block (labels select a -inf root)";
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidInput("lambda must lie in [0, 1]");
  if (batch_size == 0) throw InvalidInput("batch size must be >= 1");
  if (!(keep_input > 0.0 && keep_input <= 1.0)) throw InvalidInput("keep-input rate must lie in (0, 1]");
  if (!(keep_sum > 0.0 && keep_sum <= 1.0)) throw InvalidInput("keep-sum rate must lie in (0, 1]");
  if (!(learning_rate > 0.0)) throw InvalidInput("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidInput("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw InvalidInput("Adam epsilon must be positive");
}

double cross_entropy(const LogTable& roots, std::span<const int> labels) {
  check_labels(roots, labels);
  double total = 0.0;
  for (std::size_t b = 0; b < roots.rows(); ++b) {
    total += log_sum_exp(roots.row(b)) - roots(b, labels[b]);
  }
  return total / static_cast<double>(roots.rows());
}

double neg_log_likelihood(const LogTable& roots, std::span<const int> labels,
                          std::size_t num_vars) {
  check_labels(roots, labels);
  if (num_vars == 0) throw InvalidInput("num_vars must be positive");
  double total = 0.0;
  for (std::size_t b = 0; b < roots.rows(); ++b) total -= roots(b, labels[b]);
  return total / (static_cast<double>(roots.rows()) * static_cast<double>(num_vars));
}

ObjectiveParts objective_parts(const LogTable& roots, std::span<const int> labels,
                               std::size_t num_vars, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidInput("lambda must lie in [0, 1]");
  ObjectiveParts parts;
  parts.cross_entropy = cross_entropy(roots, labels);
  parts.nll = neg_log_likelihood(roots, labels, num_vars);
  parts.objective = lambda * parts.cross_entropy + (1.0 - lambda) * parts.nll;
  return parts;
}

double hybrid_objective(const LogTable& roots, std::span<const int> labels,
                        std::size_t num_vars, double lambda) {
  return objective_parts(roots, labels, num_vars, lambda).objective;
}

GradientResult backward_gradients(const Circuit& c, const ParameterSet& params,
                                  const FeatureMatrix& batch, std::span<const int> labels,
                                  double lambda, const QueryMask& missing,
                                  const SumDropoutMask& dropout) {
  const ForwardTrace trace = forward_trace(c, params, batch, missing, dropout);
  const LogTable& roots = trace.roots(c);

  GradientResult result;
  result.objective = objective_parts(roots, labels, c.num_vars(), lambda);
  if (!std::isfinite(result.objective.objective)) {
    throw NumericError("objective is not finite; first non-finite table: " +
                       first_nonfinite_block(c, trace));
  }
  result.gradients = zeros_like(params);
  GradientSet& grads = result.gradients;

  const std::size_t rows = batch.rows();
  const double n = static_cast<double>(rows);
  const double nll_scale = 1.0 / (n * static_cast<double>(c.num_vars()));

  // Adjoint tables, same shapes as the forward tables.
  std::vector<LogTable> d_leaf(c.leaf_blocks.size()), d_product(c.product_blocks.size()),
      d_sum(c.sum_blocks.size());
  for (std::size_t i = 0; i < d_leaf.size(); ++i) d_leaf[i] = LogTable(rows, c.leaf_blocks[i].width);
  for (std::size_t i = 0; i < d_product.size(); ++i) {
    d_product[i] = LogTable(rows, c.product_blocks[i].width);
  }
  for (std::size_t i = 0; i < d_sum.size(); ++i) d_sum[i] = LogTable(rows, c.sum_blocks[i].width);
  auto adjoint = [&](BlockRef ref) -> LogTable& {
    switch (ref.kind) {
      case BlockKind::Leaf: return d_leaf[ref.index];
      case BlockKind::Product: return d_product[ref.index];
      case BlockKind::Sum: break;
    }
    return d_sum[ref.index];
  };

  // dO/droot(b, k) = lambda * (softmax_k - [k == y]) / N - (1 - lambda) [k == y] / (N |X|)
  {
    LogTable& d_root = d_sum[c.root_block];
    for (std::size_t b = 0; b < rows; ++b) {
      const auto row = roots.row(b);
      const double lse = log_sum_exp(row);
      for (std::size_t k = 0; k < row.size(); ++k) {
        const double hit = static_cast<std::size_t>(labels[b]) == k ? 1.0 : 0.0;
        d_root(b, k) = lambda * (std::exp(row[k] - lse) - hit) / n - (1.0 - lambda) * hit * nll_scale;
      }
    }
  }

  std::vector<double> inputs, shifted, d_inputs;
  for (auto layer = c.layers.rbegin(); layer != c.layers.rend(); ++layer) {
    for (std::size_t s : layer->sums) {
      const auto& block = c.sum_blocks[s];
      const std::size_t width = block.width, fan_in = block.input_width;
      const auto log_w = log_normalized_weights(params.sum_logits[s], width, fan_in);
      std::vector<double> w(log_w.size());
      std::transform(log_w.begin(), log_w.end(), w.begin(), [](double v) { return std::exp(v); });
      auto& d_logits = grads.sum_logits[s];
      const LogTable& out = trace.sum[s];
      const LogTable& d_out = d_sum[s];

      inputs.resize(fan_in);
      shifted.resize(fan_in);
      d_inputs.resize(fan_in);
      for (std::size_t b = 0; b < rows; ++b) {
        const auto g = d_out.row(b);
        if (std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; })) continue;

        std::size_t offset = 0;
        for (const auto& in : block.inputs) {
          const auto src = trace.table(in).row(b);
          std::copy(src.begin(), src.end(), inputs.begin() + offset);
          offset += src.size();
        }
        if (!dropout.empty()) {
          const auto drop = dropout.dropped[s].row(b);
          for (std::size_t k = 0; k < fan_in; ++k) {
            if (drop[k]) inputs[k] = kNegInf;
          }
        }
        const double top = *std::max_element(inputs.begin(), inputs.end());
        if (top == kNegInf) continue;
        for (std::size_t k = 0; k < fan_in; ++k) shifted[k] = std::exp(inputs[k] - top);
        std::fill(d_inputs.begin(), d_inputs.end(), 0.0);

        for (std::size_t j = 0; j < width; ++j) {
          const double gj = g[j];
          const double value = out(b, j);
          if (gj == 0.0 || value == kNegInf) continue;
          // responsibility r_k = w_k exp(in_k - out_j)
          const double denom = std::exp(value - top);
          const double* wj = w.data() + j * fan_in;
          const double* lwj = log_w.data() + j * fan_in;
          double* dl = d_logits.data() + j * fan_in;
          if (denom >= kMinShiftedSum) {
            const double inv = 1.0 / denom;
            for (std::size_t k = 0; k < fan_in; ++k) {
              const double r = wj[k] * shifted[k] * inv;
              d_inputs[k] += gj * r;
              dl[k] += gj * (r - wj[k]);
            }
          } else {
            for (std::size_t k = 0; k < fan_in; ++k) {
              const double r = inputs[k] == kNegInf ? 0.0 : std::exp(lwj[k] + inputs[k] - value);
              d_inputs[k] += gj * r;
              dl[k] += gj * (r - wj[k]);
            }
          }
        }

        offset = 0;
        for (const auto& in : block.inputs) {
          auto dst = adjoint(in).row(b);
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += d_inputs[offset + k];
          offset += dst.size();
        }
      }
    }
    for (std::size_t p : layer->products) {
      const auto& block = c.product_blocks[p];
      const LogTable& d_out = d_product[p];
      LogTable& d_left = adjoint(block.left);
      LogTable& d_right = adjoint(block.right);
      const std::size_t right_width = c.width(block.right);
      for (std::size_t b = 0; b < rows; ++b) {
        const auto g = d_out.row(b);
        auto dl = d_left.row(b);
        auto dr = d_right.row(b);
        for (std::size_t a = 0; a < dl.size(); ++a) {
          const double* ga = g.data() + a * right_width;
          double acc = 0.0;
          for (std::size_t z = 0; z < right_width; ++z) {
            acc += ga[z];
            dr[z] += ga[z];
          }
          dl[a] += acc;
        }
      }
    }
  }

  for (std::size_t l = 0; l < c.leaf_blocks.size(); ++l) {
    const auto& block = c.leaf_blocks[l];
    const std::size_t k = block.scope.size();
    const auto& values = params.leaf_params[l];
    auto& d_values = grads.leaf_params[l];
    const bool variance = params.trains_variance();
    const double* log_vars = variance ? params.leaf_log_vars[l].data() : nullptr;
    double* d_log_vars = variance ? grads.leaf_log_vars[l].data() : nullptr;
    const LogTable& g = d_leaf[l];
    for (std::size_t b = 0; b < rows; ++b) {
      for (std::size_t i = 0; i < block.width; ++i) {
        const double gi = g(b, i);
        if (gi == 0.0) continue;
        for (std::size_t j = 0; j < k; ++j) {
          const auto v = block.scope[j];
          if (!missing.empty() && missing(b, v)) continue;
          const double x = batch(b, v);
          const std::size_t at = i * k + j;
          if (params.leaf_kind == LeafKind::Bernoulli) {
            d_values[at] += gi * (x - 1.0 / (1.0 + std::exp(-values[at])));
          } else if (!variance) {
            d_values[at] += gi * (x - values[at]);
          } else {
            const double lv = std::max(log_vars[at], kLogMinVariance);
            const double precision = std::exp(-lv);
            const double d = x - values[at];
            d_values[at] += gi * d * precision;
            if (log_vars[at] > kLogMinVariance) {
              d_log_vars[at] += gi * 0.5 * (d * d * precision - 1.0);
            }
          }
        }
      }
    }
  }
  return result;
}

QueryMask sample_input_dropout_mask(std::size_t num_vars, std::size_t batch_size,
                                    double keep_input, Rng& rng) {
  if (!(keep_input > 0.0 && keep_input <= 1.0)) {
    throw InvalidInput("keep-input rate must lie in (0, 1]");
  }
  QueryMask mask(batch_size, num_vars, 0);
  if (keep_input == 1.0) return mask;
  for (auto& m : mask.values()) m = !rng.bernoulli(keep_input);
  return mask;
}

SumDropoutMask sample_sum_dropout_mask(const Circuit& circuit, double keep_sum,
                                       std::size_t batch_size, Rng& rng) {
  if (!(keep_sum > 0.0 && keep_sum <= 1.0)) {
    throw InvalidInput("keep-sum rate must lie in (0, 1]");
  }
  SumDropoutMask mask;
  for (const auto& block : circuit.sum_blocks) {
    Table<std::uint8_t> dropped(batch_size, block.input_width, 0);
    if (keep_sum < 1.0) {
      for (std::size_t b = 0; b < batch_size; ++b) {
        auto row = dropped.row(b);
        bool any_kept = false;
        while (!any_kept) {
          for (auto& d : row) {
            const bool keep = rng.bernoulli(keep_sum);
            d = !keep;
            any_kept = any_kept || keep;
          }
        }
      }
    }
    mask.dropped.push_back(std::move(dropped));
  }
  return mask;
}

AdamState make_adam_state(const ParameterSet& params) {
  return {zeros_like(params), zeros_like(params), 0};
}

void adam_step(ParameterSet& params, const GradientSet& grads, AdamState& state,
               const TrainConfig& config) {
  const auto p = flatten(params);
  const auto g = flatten(grads);
  auto m = flatten(state.first_moment);
  auto v = flatten(state.second_moment);
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    throw InvalidInput("adam_step: parameter, gradient and state shapes differ");
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) {
      throw NumericError("adam_step: non-finite gradient at flat index " + std::to_string(i));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  std::vector<double> updated(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    updated[i] = p[i] - config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
  unflatten(updated, params);
  unflatten(m, state.first_moment);
  unflatten(v, state.second_moment);
  for (auto& lv : params.leaf_log_vars) {
    for (auto& x : lv) x = std::max(x, kLogMinVariance);
  }
}

EvalMetrics evaluate_dataset(const Circuit& circuit, const ParameterSet& params,
                             const Dataset& data, std::span<const double> log_prior,
                             double lambda, const QueryMask& missing, std::size_t chunk) {
  check_log_prior(log_prior, circuit.num_classes);
  if (data.num_features() != circuit.num_vars()) {
    throw InvalidInput("dataset has " + std::to_string(data.num_features()) +
                       " features, model expects " + std::to_string(circuit.num_vars()));
  }
  if (data.size() == 0) throw InvalidInput("cannot evaluate an empty dataset");
  if (!missing.empty() && (missing.rows() != data.size() || missing.cols() != data.num_features())) {
    throw InvalidInput("missing-value mask shape does not match the dataset");
  }
  EvalMetrics m;
  m.count = data.size();
  double ce = 0.0, nll = 0.0, log_px = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    rows.resize(end - start);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = start + i;
    const FeatureMatrix x = gather_rows(data.features, rows);
    QueryMask mask;
    if (!missing.empty()) {
      mask = QueryMask(rows.size(), missing.cols());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto src = missing.row(rows[i]);
        std::copy(src.begin(), src.end(), mask.row(i).begin());
      }
    }
    const LogTable roots = forward_log(circuit, params, x, mask);
    const LogTable joint = add_log_prior(roots, log_prior);
    const auto predicted = argmax_rows(joint);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      log_px += log_sum_exp(joint.row(i));
      if (!data.labeled()) continue;
      const int y = data.labels[rows[i]];
      if (y < 0 || static_cast<std::size_t>(y) >= circuit.num_classes) {
        throw InvalidInput("label " + std::to_string(y) + " outside the model's classes");
      }
      correct += predicted[i] == static_cast<std::size_t>(y);
      ce += log_sum_exp(roots.row(i)) - roots(i, y);
      nll -= roots(i, y);
    }
  }
  const double n = static_cast<double>(data.size());
  m.mean_log_px = log_px / n;
  if (data.labeled()) {
    m.accuracy = static_cast<double>(correct) / n;
    m.cross_entropy = ce / n;
    m.nll = nll / (n * static_cast<double>(circuit.num_vars()));
    m.objective = lambda * m.cross_entropy + (1.0 - lambda) * m.nll;
  }
  return m;
}

TrainResult train(const Circuit& circuit, ParameterSet params, const Dataset& train_data,
                  const Dataset* valid_data, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  check_parameter_layout(circuit, params);
  if (train_data.num_features() != circuit.num_vars()) {
    throw InvalidInput("training data has " + std::to_string(train_data.num_features()) +
                       " features, circuit expects " + std::to_string(circuit.num_vars()));
  }
  if (!train_data.labeled() || train_data.size() == 0) {
    throw InvalidInput("training requires a non-empty labeled dataset");
  }
  if (train_data.num_classes() > circuit.num_classes) {
    throw InvalidInput("training labels exceed the model's class count");
  }

  TrainResult result;
  const auto prior = uniform_log_prior(circuit.num_classes);
  Rng rng(config.seed);
  Rng shuffle_rng = rng.fork(1);
  Rng dropout_rng = rng.fork(2);
  AdamState state = make_adam_state(params);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches = batch_iterator(train_data.size(), config.batch_size, shuffle_rng.next_u64());
    double objective_sum = 0.0;
    for (const auto& rows : batches) {
      const FeatureMatrix x = gather_rows(train_data.features, rows);
      std::vector<int> y(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) y[i] = train_data.labels[rows[i]];
      QueryMask missing;
      SumDropoutMask dropout;
      if (config.keep_input < 1.0) {
        missing = sample_input_dropout_mask(circuit.num_vars(), rows.size(), config.keep_input,
                                            dropout_rng);
      }
      if (config.keep_sum < 1.0) {
        dropout = sample_sum_dropout_mask(circuit, config.keep_sum, rows.size(), dropout_rng);
      }
      const auto step = backward_gradients(circuit, params, x, y, config.lambda, missing, dropout);
      adam_step(params, step.gradients, state, config);
      objective_sum += step.objective.objective * static_cast<double>(rows.size());
    }
    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.batch_objective = objective_sum / static_cast<double>(train_data.size());
    metrics.train = evaluate_dataset(circuit, params, train_data, prior, config.lambda);
    if (valid_data && valid_data->size() > 0) {
      metrics.valid = evaluate_dataset(circuit, params, *valid_data, prior, config.lambda);
    }
    if (on_epoch) on_epoch(metrics);
    result.history.push_back(metrics);
  }
  result.params = std::move(params);
  return result;
}

std::vector<double> flatten(const ParameterSet& params) {
  std::vector<double> out;
  for (const auto* group : {&params.sum_logits, &params.leaf_params, &params.leaf_log_vars}) {
    for (const auto& v : *group) out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

void unflatten(std::span<const double> values, ParameterSet& params) {
  std::size_t at = 0;
  for_each_group(params, [&](std::vector<double>& v) {
    if (at + v.size() > values.size()) throw InvalidInput("unflatten: too few values");
    std::copy(values.begin() + at, values.begin() + at + v.size(), v.begin());
    at += v.size();
  });
  if (at != values.size()) throw InvalidInput("unflatten: too many values");
}

}  // namespace ratspn
