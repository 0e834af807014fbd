#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ratspn/synthetic.hpp"
#include "ratspn/training.hpp"

namespace ratspn::cli {

/// What the command line looked like, for the run manifest.
struct Invocation {
  std::vector<std::string> argv;
  nlohmann::json config;
};

struct DataFlags {
  bool csv_header = false;
  std::string csv_label = "last";
};

struct TrainOptions {
  std::string data;
  std::string valid;
  double valid_fraction = 0.0;
  std::uint32_t depth = 2;
  std::uint32_t repetitions = 4;
  std::size_t sums = 5;
  std::size_t leaves = 5;
  std::size_t classes = 0;  // 0: one more than the largest label
  TrainConfig train;
  std::string scale = "divmax";
  std::string leaf = "gaussian";
  bool train_variance = false;
  std::string warm_start;
  std::string out;
  std::string metrics;
  std::string encoding = "raw";
  std::string manifest;
  DataFlags flags;
  /// Set when any structural flag was passed explicitly.
  std::vector<std::string> structure_flags_given;
};

struct EvalOptions {
  std::string model;
  std::string data;
  std::string prior = "uniform";
  std::string out;
  std::string manifest;
  DataFlags flags;
};

struct SweepMissingOptions {
  std::string model;
  std::string data;
  std::string prior = "uniform";
  std::vector<double> fractions{0.0, 0.25, 0.5, 0.8, 0.99};
  std::uint64_t seed = 0;
  std::string out;
  std::string manifest;
  DataFlags flags;
};

struct SweepLambdaOptions {
  std::string model;
  std::string data;
  std::string test;
  std::vector<double> lambdas;
  TrainConfig train;
  std::string encoding = "raw";
  std::string out;
  std::string manifest;
  DataFlags flags;
};

struct OodOptions {
  std::string model;
  std::string in_domain;
  std::string out_domain;
  std::size_t bins = 50;
  std::string prior = "uniform";
  double outlier_percentile = 5.0;
  std::string out;
  std::string manifest;
  DataFlags flags;
};

struct SynthOptions {
  std::string kind = "glyphs";
  std::size_t count = 1000;
  GlyphOptions glyphs;
  std::uint64_t seed = 0;
  std::string out;
  std::string manifest;
};

int cmd_train(const TrainOptions& o, const Invocation& inv, std::ostream& out);
int cmd_eval(const EvalOptions& o, const Invocation& inv, std::ostream& out);
int cmd_sweep_missing(const SweepMissingOptions& o, const Invocation& inv, std::ostream& out);
int cmd_sweep_lambda(const SweepLambdaOptions& o, const Invocation& inv, std::ostream& out);
int cmd_ood(const OodOptions& o, const Invocation& inv, std::ostream& out);
int cmd_synth(const SynthOptions& o, const Invocation& inv, std::ostream& out);
int cmd_info(const std::string& model_path, std::ostream& out);

}  // namespace ratspn::cli
