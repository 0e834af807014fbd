#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ratspn/table.hpp"

namespace ratspn {

enum class ScalingMode { None, DivMax, ZScore };

std::string to_string(ScalingMode mode);
ScalingMode parse_scaling_mode(const std::string& text);

/// Affine feature map x' = (x - offset[v]) / scale[v], fitted on a training
/// split and stored with the model.
struct ScalingStats {
  ScalingMode mode = ScalingMode::None;
  std::vector<double> offset;
  std::vector<double> scale;

  FeatureMatrix apply(const FeatureMatrix& features) const;

  friend bool operator==(const ScalingStats&, const ScalingStats&) = default;
};

/// Labels are 0-based class indices; an empty label vector marks an
/// unlabeled set.
struct Dataset {
  FeatureMatrix features;
  std::vector<int> labels;
  ScalingStats scaling;
  /// Upper end of the raw value range when the file format fixes one
  /// (255 for IDX bytes).
  std::optional<double> nominal_max;

  std::size_t size() const { return features.rows(); }
  std::size_t num_features() const { return features.cols(); }
  bool labeled() const { return !labels.empty(); }
  /// 1 + the largest label, 0 when unlabeled.
  std::size_t num_classes() const;
};

// IDX (big-endian) ----------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

struct IdxImages {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major
};

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_idx_images(const IdxImages& images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// Pixels become features (row-major, rows * cols per sample). Label file is
/// optional; counts must agree.
Dataset load_idx(const std::filesystem::path& images,
                 const std::optional<std::filesystem::path>& labels);

// CSV -----------------------------------------------------------------------

/// Which column holds the label: none, the last one, or a 0-based index.
struct LabelColumn {
  enum class Kind { None, Last, Index } kind = Kind::Last;
  std::size_t index = 0;

  static LabelColumn none() { return {Kind::None, 0}; }
  static LabelColumn last() { return {Kind::Last, 0}; }
  static LabelColumn at(std::size_t i) { return {Kind::Index, i}; }
};

Dataset parse_csv(const std::string& text, LabelColumn label_column, bool has_header);
Dataset load_csv(const std::filesystem::path& path, LabelColumn label_column, bool has_header);

// Scaling, splits, batching, masks ------------------------------------------

/// DivMax divides by the nominal range maximum when known, else by the
/// largest absolute training value. ZScore standardizes each feature with a
/// standard-deviation floor of 1e-6.
ScalingStats fit_scaling(const Dataset& train, ScalingMode mode);
Dataset apply_scaling(const Dataset& data, const ScalingStats& stats);
/// fit_scaling on `data` followed by apply_scaling.
Dataset scale_features(const Dataset& data, ScalingMode mode);

Dataset subset(const Dataset& data, std::span<const std::size_t> rows);

/// Carve a validation split of round(fraction * N) samples. Returns
/// {train, valid}.
std::pair<Dataset, Dataset> split_validation(const Dataset& data, double fraction,
                                             std::uint64_t seed);

/// Shuffled row indices cut into batches of `batch_size`; the final batch
/// may be smaller.
std::vector<std::vector<std::size_t>> batch_iterator(std::size_t num_rows, std::size_t batch_size,
                                                     std::uint64_t shuffle_seed);

FeatureMatrix gather_rows(const FeatureMatrix& features, std::span<const std::size_t> rows);

/// Each entry missing independently with probability p. Masks drawn with the
/// same seed are nested in p.
QueryMask random_missing_mask(std::size_t rows, std::size_t cols, double p, std::uint64_t seed);
QueryMask random_missing_mask(const Dataset& data, double p, std::uint64_t seed);

/// Per-feature mean and standard deviation (population).
std::pair<std::vector<double>, std::vector<double>> feature_moments(const FeatureMatrix& features);

/// 64-bit FNV-1a content hash.
std::uint64_t fingerprint(std::span<const std::uint8_t> bytes);

}  // namespace ratspn
