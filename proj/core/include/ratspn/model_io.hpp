#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ratspn/circuit.hpp"
#include "ratspn/dataset.hpp"

namespace ratspn {

inline constexpr int kModelFormatVersion = 1;

enum class ParamEncoding { Text, Raw };

struct Provenance {
  double lambda = 1.0;
  std::size_t epochs = 0;
  std::uint64_t train_seed = 0;
  double keep_input = 1.0;
  double keep_sum = 1.0;
  std::string warm_start;  // path of the model training resumed from, if any

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct ModelMeta {
  ScalingStats scaling;
  /// Training-set class counts; drives the empirical class prior.
  std::vector<std::size_t> class_counts;
  Provenance provenance;

  friend bool operator==(const ModelMeta&, const ModelMeta&) = default;
};

struct Model {
  Circuit circuit;
  ParameterSet params;
  ModelMeta meta;
};

/// Self-contained model file; see docs/model-format.md for the layout.
std::string serialize_model(const Model& model, ParamEncoding encoding);

/// Parses and validates: the circuit is rebuilt from the stored region
/// graph and must pass validate_circuit, and every parameter block must
/// match its wiring width. Throws VersionError, FormatError or
/// StructuralError.
Model parse_model(std::string_view bytes);

void save_model(const Model& model, const std::filesystem::path& path, ParamEncoding encoding);
Model load_model(const std::filesystem::path& path);

/// Parameter count recorded in a model file's header, without building the
/// circuit.
ParameterCount recorded_parameter_count(std::string_view bytes);

}  // namespace ratspn
