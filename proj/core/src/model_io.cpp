#include "ratspn/model_io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ratspn/error.hpp"

namespace ratspn {

namespace {

using json = nlohmann::json;

constexpr std::string_view kMagic = "ratspn-model";

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_double(std::string_view token, const std::string& where) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc() || ptr != token.data() + token.size()) {
    throw FormatError(where + ": '" + std::string(token) + "' is not a number");
  }
  return v;
}

void append_le64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xff));
    bits >>= 8;
  }
}

double read_le64(std::string_view bytes, std::size_t at) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) {
    bits = (bits << 8) | static_cast<unsigned char>(bytes[at + static_cast<std::size_t>(i)]);
  }
  return std::bit_cast<double>(bits);
}

std::string_view next_line(std::string_view bytes, std::size_t& pos) {
  if (pos >= bytes.size()) throw FormatError("model file ends unexpectedly");
  const auto end = bytes.find('\n', pos);
  if (end == std::string_view::npos) throw FormatError("model file ends without newline");
  auto line = bytes.substr(pos, end - pos);
  pos = end + 1;
  return line;
}

std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    const auto start = i;
    while (i < line.size() && line[i] != ' ') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

json header_json(const Model& m) {
  const auto& g = m.circuit.graph;
  json regions = json::array();
  for (const auto& r : g.regions) regions.push_back(r.scope);
  json partitions = json::array();
  for (const auto& p : g.partitions) partitions.push_back({p.parent, p.first, p.second});
  const auto count = count_parameters(m.circuit, m.params.trains_variance());

  json h;
  h["structure"] = {{"num_vars", g.num_vars},
                    {"depth", g.depth},
                    {"repetitions", g.repetitions},
                    {"seed", g.seed},
                    {"classes", m.circuit.num_classes},
                    {"sums", m.circuit.num_sums},
                    {"leaves", m.circuit.num_leaves}};
  h["leaf_kind"] = m.params.leaf_kind == LeafKind::Gaussian ? "gaussian" : "bernoulli";
  h["train_variance"] = m.params.trains_variance();
  h["regions"] = std::move(regions);
  h["partitions"] = std::move(partitions);
  h["parameter_count"] = {{"sum_logits", count.num_sum_logits},
                          {"leaf_params", count.num_leaf_params},
                          {"total", count.total}};
  h["scaling"] = {{"mode", to_string(m.meta.scaling.mode)},
                  {"offset", m.meta.scaling.offset},
                  {"scale", m.meta.scaling.scale}};
  h["class_counts"] = m.meta.class_counts;
  const auto& p = m.meta.provenance;
  h["provenance"] = {{"lambda", p.lambda},
                     {"epochs", p.epochs},
                     {"train_seed", p.train_seed},
                     {"keep_input", p.keep_input},
                     {"keep_sum", p.keep_sum},
                     {"warm_start", p.warm_start}};
  return h;
}

struct Header {
  int version = 0;
  ParamEncoding encoding = ParamEncoding::Text;
  json body;
};

Header read_header(std::string_view bytes, std::size_t& pos) {
  const auto first = split_spaces(next_line(bytes, pos));
  if (first.size() != 3 || first[0] != kMagic) {
    throw FormatError("not a ratspn model file (bad first line)");
  }
  Header h;
  const auto [ptr, ec] = std::from_chars(first[1].data(), first[1].data() + first[1].size(), h.version);
  if (ec != std::errc() || ptr != first[1].data() + first[1].size() || h.version < 1) {
    throw FormatError("model file: bad version field '" + std::string(first[1]) + "'");
  }
  if (h.version != kModelFormatVersion) {
    throw VersionError("unsupported model format version " + std::to_string(h.version) +
                       " (this reader supports " + std::to_string(kModelFormatVersion) + ")");
  }
  if (first[2] == "text") {
    h.encoding = ParamEncoding::Text;
  } else if (first[2] == "raw") {
    h.encoding = ParamEncoding::Raw;
  } else {
    throw FormatError("model file: unknown parameter encoding '" + std::string(first[2]) + "'");
  }
  try {
    h.body = json::parse(next_line(bytes, pos));
  } catch (const json::exception& e) {
    throw FormatError(std::string("model header is not valid JSON: ") + e.what());
  }
  return h;
}

/// Parameter tensors in file order, with their expected shapes.
struct Slot {
  std::string kind;  // "sum", "leaf", "logvar"
  std::size_t block;
  std::size_t rows;
  std::size_t cols;
  std::vector<double>* target;
};

std::vector<Slot> slots_for(const Circuit& c, ParameterSet& params) {
  std::vector<Slot> out;
  for (std::size_t s = 0; s < c.sum_blocks.size(); ++s) {
    out.push_back({"sum", s, c.sum_blocks[s].width, c.sum_blocks[s].input_width, &params.sum_logits[s]});
  }
  for (std::size_t l = 0; l < c.leaf_blocks.size(); ++l) {
    out.push_back({"leaf", l, c.leaf_blocks[l].width, c.leaf_blocks[l].scope.size(), &params.leaf_params[l]});
  }
  for (std::size_t l = 0; l < params.leaf_log_vars.size(); ++l) {
    out.push_back({"logvar", l, c.leaf_blocks[l].width, c.leaf_blocks[l].scope.size(),
                   &params.leaf_log_vars[l]});
  }
  return out;
}

template <class T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("model header lacks '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("model header field '") + key + "': " + e.what());
  }
}

}  // namespace

std::string serialize_model(const Model& model, ParamEncoding encoding) {
  check_parameter_layout(model.circuit, model.params);
  std::string out;
  out += std::string(kMagic) + " " + std::to_string(kModelFormatVersion) + " " +
         (encoding == ParamEncoding::Text ? "text" : "raw") + "\n";
  out += header_json(model).dump() + "\n";

  ParameterSet copy = model.params;
  const auto slots = slots_for(model.circuit, copy);
  if (encoding == ParamEncoding::Raw) {
    std::size_t total = 0;
    for (const auto& s : slots) total += s.target->size();
    out += "payload " + std::to_string(total) + "\n";
    for (const auto& s : slots) {
      for (double v : *s.target) append_le64(out, v);
    }
    out += "\nend\n";
    return out;
  }
  for (const auto& s : slots) {
    out += s.kind + " " + std::to_string(s.block) + " " + std::to_string(s.rows) + " " +
           std::to_string(s.cols) + "\n";
    for (std::size_t r = 0; r < s.rows; ++r) {
      for (std::size_t k = 0; k < s.cols; ++k) {
        if (k) out += ' ';
        out += format_double((*s.target)[r * s.cols + k]);
      }
      out += '\n';
    }
  }
  out += "end\n";
  return out;
}

Model parse_model(std::string_view bytes) {
  std::size_t pos = 0;
  const Header header = read_header(bytes, pos);
  const json& h = header.body;

  Model m;
  RegionGraph g;
  const json structure = field<json>(h, "structure");
  g.num_vars = field<std::uint32_t>(structure, "num_vars");
  g.depth = field<std::uint32_t>(structure, "depth");
  g.repetitions = field<std::uint32_t>(structure, "repetitions");
  g.seed = field<std::uint64_t>(structure, "seed");
  for (auto& scope : field<std::vector<VariableScope>>(h, "regions")) g.regions.push_back({scope});
  for (const auto& p : field<std::vector<std::vector<std::size_t>>>(h, "partitions")) {
    if (p.size() != 3) throw FormatError("model header: partition entries need 3 indices");
    g.partitions.push_back({p[0], p[1], p[2]});
  }
  if (auto report = validate_region_graph(g); !report.ok()) {
    throw StructuralError("stored region graph is invalid: " + report.to_string());
  }
  m.circuit = construct_circuit(g, field<std::size_t>(structure, "classes"),
                                field<std::size_t>(structure, "sums"),
                                field<std::size_t>(structure, "leaves"));
  if (auto report = validate_circuit(m.circuit); !report.ok()) {
    throw StructuralError("stored circuit is invalid: " + report.to_string());
  }

  const auto leaf_kind = field<std::string>(h, "leaf_kind");
  if (leaf_kind != "gaussian" && leaf_kind != "bernoulli") {
    throw FormatError("model header: unknown leaf kind '" + leaf_kind + "'");
  }
  m.params.leaf_kind = leaf_kind == "gaussian" ? LeafKind::Gaussian : LeafKind::Bernoulli;
  const bool train_variance = field<bool>(h, "train_variance");
  for (const auto& s : m.circuit.sum_blocks) m.params.sum_logits.emplace_back(s.width * s.input_width);
  for (const auto& l : m.circuit.leaf_blocks) {
    m.params.leaf_params.emplace_back(l.width * l.scope.size());
    if (train_variance) m.params.leaf_log_vars.emplace_back(l.width * l.scope.size());
  }

  const auto recorded = field<json>(h, "parameter_count");
  const auto count = count_parameters(m.circuit, train_variance);
  if (field<std::size_t>(recorded, "total") != count.total ||
      field<std::size_t>(recorded, "sum_logits") != count.num_sum_logits) {
    throw FormatError("recorded parameter count " + recorded.dump() +
                      " does not match the stored structure (" + std::to_string(count.total) + ")");
  }

  const auto slots = slots_for(m.circuit, m.params);
  if (header.encoding == ParamEncoding::Raw) {
    const auto tokens = split_spaces(next_line(bytes, pos));
    if (tokens.size() != 2 || tokens[0] != "payload") throw FormatError("raw model: missing payload line");
    const auto n = static_cast<std::size_t>(parse_double(tokens[1], "raw payload count"));
    if (n != count.total) {
      throw FormatError("raw payload holds " + std::to_string(n) + " values, wiring widths need " +
                        std::to_string(count.total));
    }
    if (bytes.size() < pos + 8 * n) throw FormatError("raw payload truncated");
    std::size_t at = pos;
    for (const auto& s : slots) {
      for (auto& v : *s.target) {
        v = read_le64(bytes, at);
        at += 8;
      }
    }
    pos = at;
    if (bytes.substr(pos) != "\nend\n") throw FormatError("raw payload: trailing bytes or missing end marker");
  } else {
    for (const auto& s : slots) {
      const std::string where = s.kind + " block " + std::to_string(s.block);
      const auto head = split_spaces(next_line(bytes, pos));
      if (head.size() != 4 || head[0] != s.kind ||
          static_cast<std::size_t>(parse_double(head[1], where)) != s.block) {
        throw FormatError(where + ": section header missing or out of order");
      }
      const auto rows = static_cast<std::size_t>(parse_double(head[2], where));
      const auto cols = static_cast<std::size_t>(parse_double(head[3], where));
      if (rows != s.rows || cols != s.cols) {
        throw FormatError(where + ": declared " + std::to_string(rows) + "x" + std::to_string(cols) +
                          ", wiring width requires " + std::to_string(s.rows) + "x" +
                          std::to_string(s.cols));
      }
      for (std::size_t r = 0; r < rows; ++r) {
        const auto line = next_line(bytes, pos);
        const auto tokens = split_spaces(line);
        if (tokens.size() != cols) {
          throw FormatError(where + ": row " + std::to_string(r) + " has " +
                            std::to_string(tokens.size()) + " values; wiring width is " +
                            std::to_string(cols) + " (rows expected: " + std::to_string(rows) + ")");
        }
        for (std::size_t k = 0; k < cols; ++k) {
          (*s.target)[r * cols + k] = parse_double(tokens[k], where);
        }
      }
    }
    if (next_line(bytes, pos) != "end" || pos != bytes.size()) {
      throw FormatError("text model: trailing content or missing end marker");
    }
  }

  for (const auto& s : slots) {
    for (double v : *s.target) {
      if (!std::isfinite(v)) throw FormatError(s.kind + " block " + std::to_string(s.block) + ": non-finite parameter");
    }
  }

  const json scaling = field<json>(h, "scaling");
  m.meta.scaling.mode = parse_scaling_mode(field<std::string>(scaling, "mode"));
  m.meta.scaling.offset = field<std::vector<double>>(scaling, "offset");
  m.meta.scaling.scale = field<std::vector<double>>(scaling, "scale");
  if (m.meta.scaling.mode != ScalingMode::None &&
      (m.meta.scaling.offset.size() != g.num_vars || m.meta.scaling.scale.size() != g.num_vars)) {
    throw FormatError("scaling statistics do not match num_vars");
  }
  m.meta.class_counts = field<std::vector<std::size_t>>(h, "class_counts");
  const json prov = field<json>(h, "provenance");
  m.meta.provenance.lambda = field<double>(prov, "lambda");
  m.meta.provenance.epochs = field<std::size_t>(prov, "epochs");
  m.meta.provenance.train_seed = field<std::uint64_t>(prov, "train_seed");
  m.meta.provenance.keep_input = field<double>(prov, "keep_input");
  m.meta.provenance.keep_sum = field<double>(prov, "keep_sum");
  m.meta.provenance.warm_start = field<std::string>(prov, "warm_start");
  return m;
}

void save_model(const Model& model, const std::filesystem::path& path, ParamEncoding encoding) {
  const std::string bytes = serialize_model(model, encoding);
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

Model load_model(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_model(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

ParameterCount recorded_parameter_count(std::string_view bytes) {
  std::size_t pos = 0;
  const Header header = read_header(bytes, pos);
  const json recorded = field<json>(header.body, "parameter_count");
  return {field<std::size_t>(recorded, "sum_logits"), field<std::size_t>(recorded, "leaf_params"),
          field<std::size_t>(recorded, "total")};
}

}  // namespace ratspn
