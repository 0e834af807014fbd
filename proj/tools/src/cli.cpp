#include "cli.hpp"

#include <filesystem>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "ratspn/error.hpp"
#include "run_io.hpp"

namespace ratspn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Rerun produced outputs that differ from the recorded fingerprints.
class ReplayMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void add_data_flags(CLI::App* cmd, DataFlags& flags) {
  cmd->add_flag("--csv-header", flags.csv_header, "CSV inputs start with a header row");
  cmd->add_option("--csv-label", flags.csv_label, "CSV label column: last, none or an index");
}

void add_optimizer_flags(CLI::App* cmd, TrainConfig& t) {
  cmd->add_option("--epochs", t.epochs, "Training epochs");
  cmd->add_option("--batch-size", t.batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
  cmd->add_option("--keep-input", t.keep_input, "Input dropout keep probability")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--keep-sum", t.keep_sum, "Sum dropout keep probability")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--lr", t.learning_rate, "Adam learning rate");
  cmd->add_option("--beta1", t.beta1, "Adam first-moment decay");
  cmd->add_option("--beta2", t.beta2, "Adam second-moment decay");
  cmd->add_option("--eps", t.epsilon, "Adam epsilon");
  cmd->add_option("--seed", t.seed, "Seed for structure, initialization and training");
}

/// Every option of the chosen subcommand with its effective value.
json collect_config(const CLI::App* cmd) {
  json config = json::object();
  for (const CLI::Option* opt : cmd->get_options()) {
    const std::string name = opt->get_name();
    if (name.empty() || name == "--help" || name == "-h") continue;
    if (opt->get_type_size() == 0) {
      config[name] = opt->count() > 0;
      continue;
    }
    if (opt->count() == 0) {
      config[name] = opt->get_default_str();
    } else {
      const auto& r = opt->results();
      config[name] = r.size() == 1 ? json(r.front()) : json(r);
    }
  }
  return config;
}

int replay(const std::string& manifest_path, std::ostream& out, std::ostream& err) {
  const std::string original = read_text(manifest_path);
  json m;
  try {
    m = json::parse(original);
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!m.contains("argv") || !m.contains("outputs") || !m.contains("working_directory")) {
    throw FormatError("manifest lacks argv, outputs or working_directory");
  }
  const auto argv = m.at("argv").get<std::vector<std::string>>();
  if (!argv.empty() && argv.front() == "replay") throw FormatError("manifest records a replay");

  const fs::path previous = fs::current_path();
  const fs::path manifest_abs = fs::absolute(manifest_path);
  fs::current_path(m.at("working_directory").get<std::string>());
  struct Restore {
    fs::path dir;
    ~Restore() {
      std::error_code ec;
      fs::current_path(dir, ec);
    }
  } restore{previous};

  for (const auto& f : m.value("inputs", json::array())) {
    const std::string path = f.at("path");
    if (file_fingerprint(path) != f.at("fnv1a64").get<std::string>()) {
      throw InvalidInput("input " + path + " changed since the recorded run");
    }
  }

  std::ostringstream sink;
  const int code = run_cli(argv, sink, err);
  // The rerun rewrites its manifest; keep the original record intact.
  write_text(manifest_abs, original);
  if (code != kOk) return code;

  std::size_t compared = 0;
  std::string mismatches;
  for (const auto& f : m.at("outputs")) {
    const std::string path = f.at("path");
    ++compared;
    if (file_fingerprint(path) != f.at("fnv1a64").get<std::string>()) mismatches += " " + path;
  }
  if (!mismatches.empty()) throw ReplayMismatch("replay outputs differ:" + mismatches);
  out << "replay identical: " << compared << " outputs match\n";
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Random tensorized sum-product networks: train, evaluate and analyse", "ratspn"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  TrainOptions train_o;
  auto* train = app.add_subcommand("train", "Train a model (or post-train one with --warm-start)");
  train->add_option("--data", train_o.data, "Training data: idx:images[,labels] or csv:path")->required();
  train->add_option("--valid", train_o.valid, "Validation data spec");
  train->add_option("--valid-fraction", train_o.valid_fraction, "Hold out this fraction of --data")
      ->check(CLI::Range(0.0, 1.0));
  std::vector<CLI::Option*> structure{
      train->add_option("--depth", train_o.depth, "Split depth D")->check(CLI::PositiveNumber),
      train->add_option("--repetitions", train_o.repetitions, "Repetitions R")->check(CLI::PositiveNumber),
      train->add_option("--sums", train_o.sums, "Sums per region S")->check(CLI::PositiveNumber),
      train->add_option("--leaves", train_o.leaves, "Leaf distributions per region I")
          ->check(CLI::PositiveNumber),
      train->add_option("--classes", train_o.classes, "Root sums C (default: from labels)")
          ->check(CLI::PositiveNumber),
      train->add_option("--scale", train_o.scale, "Feature scaling")
          ->check(CLI::IsMember({"none", "divmax", "zscore"})),
      train->add_option("--leaf", train_o.leaf, "Leaf family")
          ->check(CLI::IsMember({"gaussian", "bernoulli"})),
      train->add_flag("--train-variance", train_o.train_variance, "Learn Gaussian variances"),
  };
  train->add_option("--lambda", train_o.train.lambda, "Hybrid weight: 1 discriminative, 0 generative")
      ->check(CLI::Range(0.0, 1.0));
  add_optimizer_flags(train, train_o.train);
  train->add_option("--warm-start", train_o.warm_start, "Continue training this model file");
  train->add_option("--out", train_o.out, "Model file to write")->required();
  train->add_option("--metrics", train_o.metrics, "Per-epoch metrics CSV (default <out>.metrics.csv)");
  train->add_option("--encoding", train_o.encoding, "Parameter payload encoding")
      ->check(CLI::IsMember({"raw", "text"}));
  train->add_option("--manifest", train_o.manifest, "Run manifest (default <out>.manifest.json)");
  add_data_flags(train, train_o.flags);

  EvalOptions eval_o;
  auto* eval = app.add_subcommand("eval", "Accuracy, cross-entropy, nLL and mean log p(x)");
  eval->add_option("--model", eval_o.model, "Model file")->required();
  eval->add_option("--data", eval_o.data, "Data spec")->required();
  eval->add_option("--prior", eval_o.prior, "Class prior for log p(x)")
      ->check(CLI::IsMember({"uniform", "empirical"}));
  eval->add_option("--out", eval_o.out, "Metrics CSV to write")->required();
  eval->add_option("--manifest", eval_o.manifest, "Run manifest (default <out>.manifest.json)");
  add_data_flags(eval, eval_o.flags);

  SweepMissingOptions miss_o;
  auto* miss = app.add_subcommand("sweep-missing", "Accuracy with features missing at random");
  miss->add_option("--model", miss_o.model, "Model file")->required();
  miss->add_option("--data", miss_o.data, "Labelled data spec")->required();
  miss->add_option("--p", miss_o.fractions, "Missing fractions, comma separated")
      ->delimiter(',')
      ->check(CLI::Range(0.0, 1.0));
  miss->add_option("--seed", miss_o.seed, "Mask seed; masks are nested across p");
  miss->add_option("--prior", miss_o.prior, "Class prior")->check(CLI::IsMember({"uniform", "empirical"}));
  miss->add_option("--out", miss_o.out, "Result CSV")->required();
  miss->add_option("--manifest", miss_o.manifest, "Run manifest (default <out>.manifest.json)");
  add_data_flags(miss, miss_o.flags);

  SweepLambdaOptions lam_o;
  lam_o.train.epochs = 20;
  auto* lam = app.add_subcommand("sweep-lambda", "Post-train one model at several lambdas");
  lam->add_option("--model", lam_o.model, "Base model file")->required();
  lam->add_option("--data", lam_o.data, "Training data spec")->required();
  lam->add_option("--test", lam_o.test, "Test data spec")->required();
  lam->add_option("--lambdas", lam_o.lambdas, "Lambda values, comma separated")
      ->required()
      ->delimiter(',')
      ->check(CLI::Range(0.0, 1.0));
  add_optimizer_flags(lam, lam_o.train);
  lam->add_option("--encoding", lam_o.encoding, "Parameter payload encoding")
      ->check(CLI::IsMember({"raw", "text"}));
  lam->add_option("--out", lam_o.out, "Output directory")->required();
  lam->add_option("--manifest", lam_o.manifest, "Run manifest (default <out>/manifest.json)");
  add_data_flags(lam, lam_o.flags);

  OodOptions ood_o;
  auto* ood = app.add_subcommand("ood", "Compare log p(x) of in-domain and out-of-domain data");
  ood->add_option("--model", ood_o.model, "Model file")->required();
  ood->add_option("--in", ood_o.in_domain, "In-domain data spec")->required();
  ood->add_option("--out-domain", ood_o.out_domain, "Out-of-domain data spec")->required();
  ood->add_option("--bins", ood_o.bins, "Histogram bins")->check(CLI::PositiveNumber);
  ood->add_option("--prior", ood_o.prior, "Class prior")->check(CLI::IsMember({"uniform", "empirical"}));
  ood->add_option("--outlier-percentile", ood_o.outlier_percentile,
                  "Flag samples below this percentile of in-domain log p(x)")
      ->check(CLI::Range(0.0, 100.0));
  ood->add_option("--out", ood_o.out, "Output directory")->required();
  ood->add_option("--manifest", ood_o.manifest, "Run manifest (default <out>/manifest.json)");
  add_data_flags(ood, ood_o.flags);

  SynthOptions syn_o;
  auto* syn = app.add_subcommand("synth", "Write a synthetic glyph or noise image set as IDX");
  syn->add_option("--kind", syn_o.kind, "glyphs or noise")->check(CLI::IsMember({"glyphs", "noise"}));
  syn->add_option("--count", syn_o.count, "Number of images");
  syn->add_option("--side", syn_o.glyphs.side, "Image side length")->check(CLI::PositiveNumber);
  syn->add_option("--classes", syn_o.glyphs.num_classes, "Glyph classes")->check(CLI::PositiveNumber);
  syn->add_option("--first-class", syn_o.glyphs.first_class, "First glyph class id");
  syn->add_option("--prototype-seed", syn_o.glyphs.prototype_seed, "Seed of the class prototypes");
  syn->add_option("--seed", syn_o.seed, "Sampling seed");
  syn->add_option("--out", syn_o.out, "Output prefix")->required();
  syn->add_option("--manifest", syn_o.manifest, "Run manifest (default <out>.manifest.json)");

  std::string info_model;
  auto* info = app.add_subcommand("info", "Describe a model file");
  info->add_option("--model", info_model, "Model file")->required();

  std::string replay_manifest;
  auto* rep = app.add_subcommand("replay", "Rerun a recorded command and compare its outputs");
  rep->add_option("manifest", replay_manifest, "Manifest JSON")->required();

  std::vector<std::string> argv_store{"ratspn"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
      return app.exit(e, out, err) == 0 ? kOk : kUsage;
    }
    CLI::App* chosen = app.get_subcommands().front();
    const Invocation inv{args, collect_config(chosen)};
    if (chosen == train) {
      for (const CLI::Option* opt : structure) {
        if (opt->count() > 0) train_o.structure_flags_given.push_back(opt->get_name());
      }
      return cmd_train(train_o, inv, out);
    }
    if (chosen == eval) return cmd_eval(eval_o, inv, out);
    if (chosen == miss) return cmd_sweep_missing(miss_o, inv, out);
    if (chosen == lam) return cmd_sweep_lambda(lam_o, inv, out);
    if (chosen == ood) return cmd_ood(ood_o, inv, out);
    if (chosen == syn) return cmd_synth(syn_o, inv, out);
    if (chosen == info) return cmd_info(info_model, out);
    return replay(replay_manifest, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const ReplayMismatch& e) {
    err << "replay mismatch: " << e.what() << '\n';
    return kNumericError;
  } catch (const ratspn::Error& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace ratspn::cli
