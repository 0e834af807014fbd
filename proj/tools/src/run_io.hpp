#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ratspn/dataset.hpp"

namespace ratspn::cli {

/// `idx:images[,labels]` or `csv:path`.
struct DataSpec {
  enum class Kind { Idx, Csv } kind = Kind::Idx;
  std::filesystem::path primary;
  std::filesystem::path labels;  // empty when absent

  std::vector<std::filesystem::path> files() const;
};

struct CsvOptions {
  bool header = false;
  LabelColumn label = LabelColumn::last();
};

/// Throws UsageError on a malformed spec.
DataSpec parse_data_spec(const std::string& text);
/// `last`, `none` or a 0-based column index. Throws UsageError.
LabelColumn parse_label_column(const std::string& text);
Dataset load_data(const DataSpec& spec, const CsvOptions& csv);

/// Shortest representation that parses back to the same double.
std::string format_double(double value);

/// Comma-separated table with a header row.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header);
  void add(const std::vector<std::string>& row);
  std::string str() const;
  std::size_t rows() const { return rows_; }

 private:
  std::size_t columns_;
  std::size_t rows_ = 0;
  std::string text_;
};

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
/// FNV-1a of the file contents as 16 hex digits.
std::string file_fingerprint(const std::filesystem::path& path);

/// Collects what a run read and wrote, then writes the manifest JSON.
class RunRecord {
 public:
  RunRecord(std::string command, std::vector<std::string> argv);

  nlohmann::json& config() { return config_; }
  nlohmann::json& seeds() { return seeds_; }
  void input(const std::filesystem::path& path);
  void inputs(const DataSpec& spec);
  void output(const std::filesystem::path& path);
  void write(const std::filesystem::path& manifest_path) const;

 private:
  std::string command_;
  std::vector<std::string> argv_;
  nlohmann::json config_ = nlohmann::json::object();
  nlohmann::json seeds_ = nlohmann::json::object();
  std::vector<std::filesystem::path> inputs_;
  std::vector<std::filesystem::path> outputs_;
  std::chrono::steady_clock::time_point start_;
  std::chrono::system_clock::time_point started_at_;
};

}  // namespace ratspn::cli
