#include "run_io.hpp"

#include <charconv>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "ratspn/error.hpp"

namespace ratspn::cli {

namespace fs = std::filesystem;

std::vector<fs::path> DataSpec::files() const {
  std::vector<fs::path> out{primary};
  if (!labels.empty()) out.push_back(labels);
  return out;
}

DataSpec parse_data_spec(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) {
    throw UsageError("data spec '" + text + "' needs an idx: or csv: prefix");
  }
  const std::string kind = text.substr(0, colon);
  const std::string rest = text.substr(colon + 1);
  DataSpec spec;
  if (kind == "idx") {
    spec.kind = DataSpec::Kind::Idx;
    const auto comma = rest.find(',');
    spec.primary = rest.substr(0, comma);
    if (comma != std::string::npos) {
      spec.labels = rest.substr(comma + 1);
      if (spec.labels.empty()) throw UsageError("data spec '" + text + "' has an empty label path");
    }
  } else if (kind == "csv") {
    spec.kind = DataSpec::Kind::Csv;
    spec.primary = rest;
  } else {
    throw UsageError("unknown data kind '" + kind + "' (expected idx or csv)");
  }
  if (spec.primary.empty()) throw UsageError("data spec '" + text + "' has an empty path");
  return spec;
}

LabelColumn parse_label_column(const std::string& text) {
  if (text == "last") return LabelColumn::last();
  if (text == "none") return LabelColumn::none();
  std::size_t index = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), index);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw UsageError("--csv-label expects last, none or a column index, got '" + text + "'");
  }
  return LabelColumn::at(index);
}

Dataset load_data(const DataSpec& spec, const CsvOptions& csv) {
  if (spec.kind == DataSpec::Kind::Csv) return load_csv(spec.primary, csv.label, csv.header);
  std::optional<fs::path> labels;
  if (!spec.labels.empty()) labels = spec.labels;
  return load_idx(spec.primary, labels);
}

std::string format_double(double value) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

CsvTable::CsvTable(std::vector<std::string> header) : columns_(header.size()) {
  for (std::size_t i = 0; i < header.size(); ++i) text_ += (i ? "," : "") + header[i];
  text_ += '\n';
}

void CsvTable::add(const std::vector<std::string>& row) {
  if (row.size() != columns_) throw std::logic_error("csv row width mismatch");
  for (std::size_t i = 0; i < row.size(); ++i) text_ += (i ? "," : "") + row[i];
  text_ += '\n';
  ++rows_;
}

std::string CsvTable::str() const { return text_; }

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

std::string read_text(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

std::string file_fingerprint(const fs::path& path) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fingerprint(read_file_bytes(path))));
  return buf;
}

RunRecord::RunRecord(std::string command, std::vector<std::string> argv)
    : command_(std::move(command)),
      argv_(std::move(argv)),
      start_(std::chrono::steady_clock::now()),
      started_at_(std::chrono::system_clock::now()) {}

void RunRecord::input(const fs::path& path) { inputs_.push_back(path); }

void RunRecord::inputs(const DataSpec& spec) {
  for (const auto& p : spec.files()) input(p);
}

void RunRecord::output(const fs::path& path) { outputs_.push_back(path); }

void RunRecord::write(const fs::path& manifest_path) const {
  using nlohmann::json;
  auto files = [](const std::vector<fs::path>& paths) {
    json list = json::array();
    for (const auto& p : paths) list.push_back({{"path", p.string()}, {"fnv1a64", file_fingerprint(p)}});
    return list;
  };
  const std::time_t t = std::chrono::system_clock::to_time_t(started_at_);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();

  json m;
  m["manifest_version"] = 1;
  m["command"] = command_;
  m["argv"] = argv_;
  m["working_directory"] = fs::current_path().string();
  m["config"] = config_;
  m["seeds"] = seeds_;
  m["inputs"] = files(inputs_);
  m["outputs"] = files(outputs_);
  m["started_at"] = stamp;
  m["wall_clock_seconds"] = seconds;
  write_text(manifest_path, m.dump(2) + "\n");
}

}  // namespace ratspn::cli
