#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ratspn/dataset.hpp"

namespace ratspn {

// Small stroke-glyph image sets standing in for a digit corpus in tests,
// benchmarks and the `synth` command. Each class is a fixed set of line
// strokes derived from prototype_seed; samples add a shift, endpoint jitter,
// an intensity change and pixel noise.

struct GlyphOptions {
  std::uint32_t side = 12;
  std::uint32_t num_classes = 10;
  /// Class ids start here, so a set with first_class = 10 shares no class
  /// with the default one. Labels stay 0-based relative to first_class.
  std::uint32_t first_class = 0;
  std::uint32_t strokes = 3;
  std::uint64_t prototype_seed = 1;
  double jitter = 0.6;
  int max_shift = 1;
  double noise = 0.08;
};

struct GlyphSet {
  IdxImages images;
  std::vector<std::uint8_t> labels;
};

/// Labels cycle through the classes in random order, so every class gets
/// count / num_classes samples (the first count % num_classes get one more).
GlyphSet make_glyphs(std::size_t count, const GlyphOptions& options, std::uint64_t seed);

/// Independent uniform bytes, shape-matched to an image set.
IdxImages make_uniform_noise(std::size_t count, std::uint32_t rows, std::uint32_t cols,
                             std::uint64_t seed);

Dataset to_dataset(const IdxImages& images, const std::vector<std::uint8_t>& labels = {});
Dataset to_dataset(const GlyphSet& set);

}  // namespace ratspn
