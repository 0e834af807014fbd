#pragma once

// Hand-rolled generators shared by unit, property and acceptance tests.

#include <cstdint>
#include <string>
#include <vector>

#include "ratspn/circuit.hpp"
#include "ratspn/model_io.hpp"
#include "ratspn/random.hpp"
#include "ratspn/region_graph.hpp"
#include "ratspn/table.hpp"

namespace support {

struct Spec {
  std::uint32_t num_vars = 4;
  std::uint32_t depth = 1;
  std::uint32_t repetitions = 1;
  std::size_t classes = 1;
  std::size_t sums = 2;
  std::size_t leaves = 2;
  ratspn::LeafKind leaf_kind = ratspn::LeafKind::Gaussian;
  bool train_variance = false;
  std::uint64_t seed = 0;

  std::string describe() const {
    return "n=" + std::to_string(num_vars) + " D=" + std::to_string(depth) +
           " R=" + std::to_string(repetitions) + " C=" + std::to_string(classes) +
           " S=" + std::to_string(sums) + " I=" + std::to_string(leaves) +
           " seed=" + std::to_string(seed);
  }
};

inline std::uint32_t pick(ratspn::Rng& rng, std::uint32_t lo, std::uint32_t hi) {
  return lo + static_cast<std::uint32_t>(rng.below(hi - lo + 1));
}

/// Ranges are inclusive.
struct Limits {
  std::uint32_t vars_lo = 2, vars_hi = 64;
  std::uint32_t depth_lo = 1, depth_hi = 4;
  std::uint32_t reps_hi = 8;
  std::uint32_t width_hi = 8;
  std::uint32_t classes_hi = 5;
};

inline Spec random_spec(ratspn::Rng& rng, const Limits& lim = {}) {
  Spec s;
  s.num_vars = pick(rng, lim.vars_lo, lim.vars_hi);
  s.depth = pick(rng, lim.depth_lo, lim.depth_hi);
  s.repetitions = pick(rng, 1, lim.reps_hi);
  s.classes = pick(rng, 1, lim.classes_hi);
  s.sums = pick(rng, 1, lim.width_hi);
  s.leaves = pick(rng, 1, lim.width_hi);
  s.seed = rng.next_u64();
  return s;
}

inline ratspn::Circuit build_circuit(const Spec& s) {
  const auto g = ratspn::random_region_graph(s.num_vars, s.depth, s.repetitions, s.seed);
  return ratspn::construct_circuit(g, s.classes, s.sums, s.leaves);
}

/// Random circuit and parameters with weights far from uniform.
inline ratspn::Model build_model(const Spec& s, double logit_spread = 1.0) {
  ratspn::Model m;
  m.circuit = build_circuit(s);
  ratspn::InitOptions opts;
  opts.leaf_kind = s.leaf_kind;
  opts.train_variance = s.train_variance;
  opts.logit_spread = logit_spread;
  ratspn::Rng rng = ratspn::Rng(s.seed).fork(77);
  m.params = ratspn::init_parameters(m.circuit, opts, rng);
  if (s.train_variance) {
    for (auto& block : m.params.leaf_log_vars) {
      for (auto& v : block) v = 0.5 * rng.normal();
    }
  }
  return m;
}

inline ratspn::FeatureMatrix random_gaussian_batch(std::size_t rows, std::size_t cols, ratspn::Rng& rng) {
  ratspn::FeatureMatrix x(rows, cols);
  for (auto& v : x.values()) v = rng.normal();
  return x;
}

inline ratspn::FeatureMatrix random_binary_batch(std::size_t rows, std::size_t cols, ratspn::Rng& rng) {
  ratspn::FeatureMatrix x(rows, cols);
  for (auto& v : x.values()) v = static_cast<double>(rng.below(2));
  return x;
}

inline std::vector<double> row_vector(const ratspn::FeatureMatrix& x, std::size_t r) {
  auto row = x.row(r);
  return {row.begin(), row.end()};
}

inline std::vector<bool> row_mask(const ratspn::QueryMask& m, std::size_t r, std::size_t cols) {
  std::vector<bool> out(cols, false);
  if (m.empty()) return out;
  for (std::size_t c = 0; c < cols; ++c) out[c] = m(r, c) != 0;
  return out;
}

}  // namespace support
