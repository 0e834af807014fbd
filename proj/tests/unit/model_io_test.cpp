#include <filesystem>
#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "oracle.hpp"
#include "ratspn/error.hpp"
#include "ratspn/inference.hpp"
#include "ratspn/model_io.hpp"
#include "ratspn/training.hpp"
#include "support.hpp"

using namespace ratspn;

namespace {

Model sample_model(bool train_variance = true, LeafKind kind = LeafKind::Gaussian) {
  support::Spec s;
  s.num_vars = 10;
  s.depth = 2;
  s.repetitions = 3;
  s.classes = 3;
  s.sums = 3;
  s.leaves = 4;
  s.seed = 1234;
  s.leaf_kind = kind;
  s.train_variance = train_variance;
  auto m = support::build_model(s);
  m.meta.scaling.mode = ScalingMode::ZScore;
  m.meta.scaling.offset.assign(10, 0.1);
  m.meta.scaling.scale.assign(10, 3.0);
  m.meta.class_counts = {5, 6, 7};
  m.meta.provenance.lambda = 0.2;
  m.meta.provenance.epochs = 20;
  m.meta.provenance.train_seed = 99;
  return m;
}

std::string replace_first(std::string s, const std::string& from, const std::string& to) {
  const auto at = s.find(from);
  EXPECT_NE(at, std::string::npos) << from;
  if (at != std::string::npos) s.replace(at, from.size(), to);
  return s;
}

}  // namespace

TEST(ModelIo, RoundTripBothEncodings) {
  const auto m = sample_model();
  for (auto enc : {ParamEncoding::Raw, ParamEncoding::Text}) {
    const auto bytes = serialize_model(m, enc);
    const auto back = parse_model(bytes);
    EXPECT_EQ(back.params, m.params);
    EXPECT_EQ(back.meta, m.meta);
    EXPECT_EQ(back.circuit.graph, m.circuit.graph);
    EXPECT_TRUE(validate_circuit(back.circuit).ok());
    EXPECT_EQ(serialize_model(back, enc), bytes);
  }
}

TEST(ModelIo, ForwardBitIdenticalAfterFileRoundTrip) {
  const auto m = sample_model();
  const auto path = std::filesystem::temp_directory_path() / "ratspn_model_io_test.rat";
  save_model(m, path, ParamEncoding::Raw);
  const auto back = load_model(path);
  Rng rng(5);
  const auto x = support::random_gaussian_batch(16, 10, rng);
  EXPECT_EQ(forward_log(m.circuit, m.params, x), forward_log(back.circuit, back.params, x));
  std::filesystem::remove(path);
}

TEST(ModelIo, RawIsLittleEndian) {
  auto m = sample_model(false);
  m.params.sum_logits[0][0] = 1.0;  // 0x3FF0000000000000
  const auto bytes = serialize_model(m, ParamEncoding::Raw);
  const auto at = bytes.find("\npayload ");
  ASSERT_NE(at, std::string::npos);
  const auto start = bytes.find('\n', at + 1) + 1;
  const std::string expected = std::string(6, '\0') + "\xf0\x3f";
  EXPECT_EQ(bytes.substr(start, 8), expected);
}

TEST(ModelIo, CountMatchesRecorded) {
  const auto m = sample_model();
  const auto bytes = serialize_model(m, ParamEncoding::Text);
  EXPECT_EQ(recorded_parameter_count(bytes), count_parameters(parse_model(bytes).circuit, true));
}

TEST(ModelIo, VersionGate) {
  const auto bytes = serialize_model(sample_model(), ParamEncoding::Text);
  EXPECT_NO_THROW(parse_model(bytes));
  EXPECT_THROW(parse_model(replace_first(bytes, "ratspn-model 1", "ratspn-model 2")), VersionError);
  EXPECT_THROW(parse_model(replace_first(bytes, "ratspn-model", "other-model")), FormatError);
}

TEST(ModelIo, DeletedWeightRowIsWiringError) {
  const auto bytes = serialize_model(sample_model(), ParamEncoding::Text);
  const auto header = bytes.find("\nsum 1 ");
  ASSERT_NE(header, std::string::npos);
  const auto row_start = bytes.find('\n', header + 1) + 1;
  const auto row_end = bytes.find('\n', row_start) + 1;
  const std::string tampered = bytes.substr(0, row_start) + bytes.substr(row_end);
  try {
    parse_model(tampered);
    FAIL() << "tampered file loaded";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("wiring width"), std::string::npos) << e.what();
  }
}

TEST(ModelIo, TamperedRawPayloadRejected) {
  const auto bytes = serialize_model(sample_model(), ParamEncoding::Raw);
  EXPECT_THROW(parse_model(bytes.substr(0, bytes.size() - 13)), FormatError);
  EXPECT_THROW(parse_model(bytes + "x"), FormatError);
}

TEST(ModelIo, InvalidStoredStructureRejected) {
  const auto bytes = serialize_model(sample_model(), ParamEncoding::Text);
  const auto first_nl = bytes.find('\n');
  const auto second_nl = bytes.find('\n', first_nl + 1);
  auto header = nlohmann::json::parse(bytes.substr(first_nl + 1, second_nl - first_nl - 1));
  auto rebuild = [&](const nlohmann::json& h) {
    return bytes.substr(0, first_nl + 1) + h.dump() + bytes.substr(second_nl);
  };
  // a partition whose second child overlaps its first
  auto overlap = header;
  overlap["partitions"][0][2] = overlap["partitions"][0][1];
  EXPECT_THROW(parse_model(rebuild(overlap)), StructuralError);
  // a recorded parameter count that disagrees with the structure
  auto count = header;
  count["parameter_count"]["total"] = 1;
  EXPECT_THROW(parse_model(rebuild(count)), FormatError);
  // missing field
  auto missing = header;
  missing.erase("leaf_kind");
  EXPECT_THROW(parse_model(rebuild(missing)), FormatError);
  EXPECT_NO_THROW(parse_model(rebuild(header)));
}

TEST(ModelIo, SeedReconstructsGraph) {
  const auto m = sample_model();
  const auto& g = parse_model(serialize_model(m, ParamEncoding::Text)).circuit.graph;
  const auto regenerated = random_region_graph(g.num_vars, g.depth, g.repetitions, g.seed);
  EXPECT_EQ(regenerated, g);
  // scope-level isomorphism, independent of index order
  std::set<VariableScope> a, b;
  for (const auto& r : g.regions) a.insert(r.scope);
  for (const auto& r : regenerated.regions) b.insert(r.scope);
  EXPECT_EQ(a, b);
}

TEST(ModelIo, OracleReadsSameFile) {
  for (auto kind : {LeafKind::Gaussian, LeafKind::Bernoulli}) {
    const auto m = sample_model(kind == LeafKind::Gaussian, kind);
    for (auto enc : {ParamEncoding::Raw, ParamEncoding::Text}) {
      const auto o = oracle::parse(serialize_model(m, enc));
      EXPECT_EQ(o.params, flatten(m.params));
      Rng rng(8);
      const auto x = kind == LeafKind::Gaussian ? support::random_gaussian_batch(4, 10, rng)
                                                : support::random_binary_batch(4, 10, rng);
      const auto roots = forward_log(m.circuit, m.params, x);
      for (std::size_t r = 0; r < 4; ++r) {
        const auto ref = oracle::log_root_values(o, support::row_vector(x, r), std::vector<bool>(10, false));
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(roots(r, c), ref[c], 1e-9);
      }
    }
  }
}

TEST(ModelIo, UnwritablePath) {
  EXPECT_THROW(save_model(sample_model(), "/nonexistent-dir/x.rat", ParamEncoding::Raw), IoError);
  EXPECT_THROW(load_model("/nonexistent-dir/x.rat"), IoError);
}
