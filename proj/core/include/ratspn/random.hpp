#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace ratspn {

// Seedable generator shared by structure sampling, initialization, dropout
// and data shuffling. The engine is std::mt19937_64, whose output sequence is
// fixed by the standard. The std:: distributions are not (their algorithms
// are implementation-defined), so the variates below are derived from raw
// engine output with fixed formulas and reproduce across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer on [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound);

  /// Standard normal via the Marsaglia polar method.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Derive an independent child stream; used to decouple e.g. structure
  /// sampling from parameter initialization under one user seed.
  Rng fork(std::uint64_t salt);

 private:
  std::mt19937_64 engine_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ratspn
