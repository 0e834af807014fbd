#include "ratspn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "ratspn/error.hpp"
#include "ratspn/random.hpp"

namespace ratspn {

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) {
    throw FormatError("IDX: truncated header at byte offset " + std::to_string(offset));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string to_string(ScalingMode mode) {
  switch (mode) {
    case ScalingMode::None: return "none";
    case ScalingMode::DivMax: return "divmax";
    case ScalingMode::ZScore: return "zscore";
  }
  return "none";
}

ScalingMode parse_scaling_mode(const std::string& text) {
  if (text == "none") return ScalingMode::None;
  if (text == "divmax") return ScalingMode::DivMax;
  if (text == "zscore") return ScalingMode::ZScore;
  throw InvalidInput("unknown scaling mode '" + text + "'");
}

std::size_t Dataset::num_classes() const {
  if (labels.empty()) return 0;
  return static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
}

FeatureMatrix ScalingStats::apply(const FeatureMatrix& features) const {
  if (mode == ScalingMode::None) return features;
  if (offset.size() != features.cols() || scale.size() != features.cols()) {
    throw InvalidInput("scaling statistics cover " + std::to_string(offset.size()) +
                       " features, data has " + std::to_string(features.cols()));
  }
  FeatureMatrix out = features;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t v = 0; v < row.size(); ++v) row[v] = (row[v] - offset[v]) / scale[v];
  }
  return out;
}

// IDX ------------------------------------------------------------------------

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxImageMagic) {
    throw FormatError("IDX images: bad magic " + std::to_string(magic) + " at byte offset 0 (expected 2051)");
  }
  IdxImages images;
  images.count = read_be32(bytes, 4);
  images.rows = read_be32(bytes, 8);
  images.cols = read_be32(bytes, 12);
  const std::size_t payload =
      std::size_t{images.count} * std::size_t{images.rows} * std::size_t{images.cols};
  if (bytes.size() < 16 + payload) {
    throw FormatError("IDX images: payload truncated at byte offset " + std::to_string(bytes.size()) +
                      " (expected " + std::to_string(16 + payload) + " bytes)");
  }
  if (bytes.size() > 16 + payload) {
    throw FormatError("IDX images: trailing data at byte offset " + std::to_string(16 + payload));
  }
  images.pixels.assign(bytes.begin() + 16, bytes.end());
  return images;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxLabelMagic) {
    throw FormatError("IDX labels: bad magic " + std::to_string(magic) + " at byte offset 0 (expected 2049)");
  }
  const std::size_t count = read_be32(bytes, 4);
  if (bytes.size() != 8 + count) {
    throw FormatError("IDX labels: payload size mismatch at byte offset " +
                      std::to_string(std::min(bytes.size(), 8 + count)) + " (expected " +
                      std::to_string(8 + count) + " bytes, file has " +
                      std::to_string(bytes.size()) + ")");
  }
  return {bytes.begin() + 8, bytes.end()};
}

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + images.pixels.size());
  write_be32(out, kIdxImageMagic);
  write_be32(out, images.count);
  write_be32(out, images.rows);
  write_be32(out, images.cols);
  out.insert(out.end(), images.pixels.begin(), images.pixels.end());
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  write_be32(out, kIdxLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Dataset load_idx(const std::filesystem::path& images_path,
                 const std::optional<std::filesystem::path>& labels_path) {
  const IdxImages images = parse_idx_images(read_file_bytes(images_path));
  const std::size_t features = std::size_t{images.rows} * images.cols;
  Dataset d;
  d.features = FeatureMatrix(images.count, features);
  std::transform(images.pixels.begin(), images.pixels.end(), d.features.values().begin(),
                 [](std::uint8_t p) { return static_cast<double>(p); });
  d.nominal_max = 255.0;
  if (labels_path) {
    const auto labels = parse_idx_labels(read_file_bytes(*labels_path));
    if (labels.size() != images.count) {
      throw FormatError("IDX: " + std::to_string(images.count) + " images but " +
                        std::to_string(labels.size()) + " labels");
    }
    d.labels.assign(labels.begin(), labels.end());
  }
  return d;
}

// CSV ------------------------------------------------------------------------

Dataset parse_csv(const std::string& text, LabelColumn label_column, bool has_header) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  bool skipped_header = !has_header;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (!skipped_header) {
      skipped_header = true;
      continue;
    }
    std::vector<double> values;
    std::string_view rest(line);
    std::size_t col = 0;
    while (true) {
      const auto comma = rest.find(',');
      const auto cell = trim(rest.substr(0, comma));
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw FormatError("CSV row " + std::to_string(line_no) + ", column " +
                          std::to_string(col + 1) + ": '" + std::string(cell) +
                          "' is not a finite number");
      }
      values.push_back(v);
      ++col;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (rows.empty()) {
      width = values.size();
    } else if (values.size() != width) {
      throw FormatError("CSV row " + std::to_string(line_no) + ": expected " +
                        std::to_string(width) + " columns, found " + std::to_string(values.size()));
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw FormatError("CSV: no data rows");

  std::optional<std::size_t> label_at;
  if (label_column.kind == LabelColumn::Kind::Last) label_at = width - 1;
  if (label_column.kind == LabelColumn::Kind::Index) {
    if (label_column.index >= width) {
      throw FormatError("CSV: label column " + std::to_string(label_column.index) +
                        " out of range for " + std::to_string(width) + " columns");
    }
    label_at = label_column.index;
  }
  const std::size_t features = width - (label_at ? 1 : 0);
  if (features == 0) throw FormatError("CSV: no feature columns");

  Dataset d;
  d.features = FeatureMatrix(rows.size(), features);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::size_t out = 0;
    for (std::size_t c = 0; c < width; ++c) {
      if (label_at && c == *label_at) {
        const double y = rows[r][c];
        if (y < 0 || y != std::floor(y) || y > 1e6) {
          throw FormatError("CSV row " + std::to_string(r + 1) + ": label " +
                            std::to_string(y) + " is not a non-negative integer");
        }
        d.labels.push_back(static_cast<int>(y));
      } else {
        d.features(r, out++) = rows[r][c];
      }
    }
  }
  return d;
}

Dataset load_csv(const std::filesystem::path& path, LabelColumn label_column, bool has_header) {
  const auto bytes = read_file_bytes(path);
  return parse_csv(std::string(bytes.begin(), bytes.end()), label_column, has_header);
}

// Scaling ----------------------------------------------------------------------

std::pair<std::vector<double>, std::vector<double>> feature_moments(const FeatureMatrix& features) {
  const std::size_t n = features.rows(), k = features.cols();
  std::vector<double> mean(k, 0.0), sd(k, 0.0);
  if (n == 0) return {mean, sd};
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t v = 0; v < k; ++v) mean[v] += features(r, v);
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t v = 0; v < k; ++v) {
      const double d = features(r, v) - mean[v];
      sd[v] += d * d;
    }
  }
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(n));
  return {mean, sd};
}

ScalingStats fit_scaling(const Dataset& train, ScalingMode mode) {
  ScalingStats stats;
  stats.mode = mode;
  const std::size_t k = train.num_features();
  switch (mode) {
    case ScalingMode::None: break;
    case ScalingMode::DivMax: {
      double top = train.nominal_max.value_or(0.0);
      if (!train.nominal_max) {
        for (double v : train.features.values()) top = std::max(top, std::abs(v));
      }
      if (top <= 0.0) top = 1.0;
      stats.offset.assign(k, 0.0);
      stats.scale.assign(k, top);
      break;
    }
    case ScalingMode::ZScore: {
      auto [mean, sd] = feature_moments(train.features);
      for (auto& s : sd) s = std::max(s, 1e-6);
      stats.offset = std::move(mean);
      stats.scale = std::move(sd);
      break;
    }
  }
  return stats;
}

Dataset apply_scaling(const Dataset& data, const ScalingStats& stats) {
  Dataset out = data;
  out.features = stats.apply(data.features);
  out.scaling = stats;
  return out;
}

Dataset scale_features(const Dataset& data, ScalingMode mode) {
  return apply_scaling(data, fit_scaling(data, mode));
}

// Splits and batches -------------------------------------------------------------

FeatureMatrix gather_rows(const FeatureMatrix& features, std::span<const std::size_t> rows) {
  FeatureMatrix out(rows.size(), features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto src = features.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Dataset subset(const Dataset& data, std::span<const std::size_t> rows) {
  Dataset out;
  out.features = gather_rows(data.features, rows);
  if (data.labeled()) {
    for (auto r : rows) out.labels.push_back(data.labels.at(r));
  }
  out.scaling = data.scaling;
  out.nominal_max = data.nominal_max;
  return out;
}

std::pair<Dataset, Dataset> split_validation(const Dataset& data, double fraction,
                                             std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw InvalidInput("validation fraction must lie in [0, 1)");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_valid = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  std::vector<std::size_t> valid(order.begin(), order.begin() + n_valid);
  std::vector<std::size_t> train(order.begin() + n_valid, order.end());
  std::sort(valid.begin(), valid.end());
  std::sort(train.begin(), train.end());
  return {subset(data, train), subset(data, valid)};
}

std::vector<std::vector<std::size_t>> batch_iterator(std::size_t num_rows, std::size_t batch_size,
                                                     std::uint64_t shuffle_seed) {
  if (batch_size == 0) throw InvalidInput("batch size must be >= 1");
  std::vector<std::size_t> order(num_rows);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(shuffle_seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < num_rows; start += batch_size) {
    const std::size_t end = std::min(num_rows, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

QueryMask random_missing_mask(std::size_t rows, std::size_t cols, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidInput("missing fraction must lie in [0, 1]");
  QueryMask mask(rows, cols, 0);
  Rng rng(seed);
  for (auto& m : mask.values()) m = rng.uniform() < p;
  return mask;
}

QueryMask random_missing_mask(const Dataset& data, double p, std::uint64_t seed) {
  return random_missing_mask(data.size(), data.num_features(), p, seed);
}

std::uint64_t fingerprint(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace ratspn
