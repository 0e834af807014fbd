#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "analysis.hpp"
#include "cli.hpp"
#include "ratspn/error.hpp"
#include "ratspn/inference.hpp"
#include "ratspn/model_io.hpp"
#include "ratspn/random.hpp"
#include "ratspn/region_graph.hpp"
#include "run_io.hpp"

namespace ratspn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

CsvOptions csv_options(const DataFlags& flags) {
  return {flags.csv_header, parse_label_column(flags.csv_label)};
}

ParamEncoding parse_encoding(const std::string& text) {
  if (text == "raw") return ParamEncoding::Raw;
  if (text == "text") return ParamEncoding::Text;
  throw UsageError("--encoding expects raw or text, got '" + text + "'");
}

std::string manifest_path(const std::string& given, const fs::path& fallback) {
  return given.empty() ? fallback.string() : given;
}

bool same_file(const fs::path& a, const fs::path& b) {
  return fs::weakly_canonical(a) == fs::weakly_canonical(b);
}

Dataset load_nonempty(const DataSpec& spec, const CsvOptions& csv, const std::string& what) {
  Dataset d = load_data(spec, csv);
  if (d.size() == 0) throw InvalidInput("empty dataset: " + what + " has no samples");
  return d;
}

/// Shape checks against a loaded model, then the model's feature scaling.
Dataset prepare_for_model(const Model& model, const Dataset& raw, const std::string& what,
                          bool require_labels) {
  if (raw.num_features() != model.circuit.num_vars()) {
    throw InvalidInput(what + " has " + std::to_string(raw.num_features()) +
                       " features; the model expects " +
                       std::to_string(model.circuit.num_vars()));
  }
  if (require_labels && !raw.labeled()) throw InvalidInput(what + " has no labels");
  if (raw.labeled() && raw.num_classes() > model.circuit.num_classes) {
    throw InvalidInput(what + " has label " + std::to_string(raw.num_classes() - 1) +
                       "; the model has " + std::to_string(model.circuit.num_classes) +
                       " classes");
  }
  return apply_scaling(raw, model.meta.scaling);
}

std::vector<double> class_prior(const Model& model, const std::string& prior) {
  const std::size_t c = model.circuit.num_classes;
  if (prior == "uniform") return uniform_log_prior(c);
  if (prior != "empirical") throw UsageError("--prior expects uniform or empirical");
  const auto& counts = model.meta.class_counts;
  std::size_t total = 0;
  for (auto n : counts) total += n;
  if (counts.size() != c || total == 0) {
    throw InvalidInput("model file records no class counts; the empirical prior is unavailable");
  }
  std::vector<double> out(c);
  for (std::size_t k = 0; k < c; ++k) {
    out[k] = counts[k] == 0 ? -std::numeric_limits<double>::infinity()
                            : std::log(static_cast<double>(counts[k]) / static_cast<double>(total));
  }
  check_log_prior(out, c);
  return out;
}

std::vector<std::size_t> count_classes(const Dataset& d, std::size_t classes) {
  std::vector<std::size_t> counts(classes, 0);
  for (int y : d.labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

std::vector<double> log_px_scores(const Model& model, const Dataset& data,
                                  std::span<const double> prior) {
  constexpr std::size_t kChunk = 512;
  std::vector<double> scores;
  scores.reserve(data.size());
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    rows.clear();
    for (std::size_t r = start; r < std::min(data.size(), start + kChunk); ++r) rows.push_back(r);
    const auto part =
        log_marginal_input(model.circuit, model.params, gather_rows(data.features, rows), prior);
    scores.insert(scores.end(), part.begin(), part.end());
  }
  return scores;
}

std::string opt_metric(const EvalMetrics& m, double value) {
  return m.count == 0 ? std::string() : format_double(value);
}

std::vector<std::string> eval_row(const EvalMetrics& m, bool labeled) {
  auto lab = [&](double v) { return labeled ? format_double(v) : std::string(); };
  return {std::to_string(m.count), lab(m.accuracy), lab(m.cross_entropy), lab(m.nll),
          format_double(m.mean_log_px)};
}

void check_train_config(const TrainConfig& cfg) {
  try {
    cfg.validate();
  } catch (const InvalidInput& e) {
    throw UsageError(e.what());
  }
}

}  // namespace

int cmd_train(const TrainOptions& o, const Invocation& inv, std::ostream& out) {
  // Flag-level conflicts first; no file is touched before these pass.
  check_train_config(o.train);
  const ParamEncoding encoding = parse_encoding(o.encoding);
  const CsvOptions csv = csv_options(o.flags);
  const DataSpec data_spec = parse_data_spec(o.data);
  std::optional<DataSpec> valid_spec;
  if (!o.valid.empty()) valid_spec = parse_data_spec(o.valid);
  if (valid_spec && o.valid_fraction > 0.0) {
    throw UsageError("--valid and --valid-fraction are mutually exclusive");
  }
  if (!o.warm_start.empty()) {
    if (!o.structure_flags_given.empty()) {
      throw UsageError(o.structure_flags_given.front() +
                       " cannot be combined with --warm-start; the structure comes from the model");
    }
    if (same_file(o.warm_start, o.out)) {
      throw UsageError("--out must differ from --warm-start; input models are never overwritten");
    }
  }
  const LeafKind leaf_kind = [&] {
    if (o.leaf == "gaussian") return LeafKind::Gaussian;
    if (o.leaf == "bernoulli") return LeafKind::Bernoulli;
    throw UsageError("--leaf expects gaussian or bernoulli");
  }();
  const ScalingMode scale_mode = [&] {
    try {
      return parse_scaling_mode(o.scale);
    } catch (const InvalidInput& e) {
      throw UsageError(e.what());
    }
  }();
  if (leaf_kind == LeafKind::Bernoulli && o.train_variance) {
    throw UsageError("--train-variance applies to gaussian leaves only");
  }

  RunRecord record("train", inv.argv);
  record.config() = inv.config;
  record.inputs(data_spec);
  if (valid_spec) record.inputs(*valid_spec);

  Dataset raw = load_nonempty(data_spec, csv, "training data");
  if (!raw.labeled()) throw InvalidInput("training data has no labels");
  Dataset raw_valid;
  bool has_valid = false;
  if (valid_spec) {
    raw_valid = load_nonempty(*valid_spec, csv, "validation data");
    has_valid = true;
  } else if (o.valid_fraction > 0.0) {
    std::tie(raw, raw_valid) = split_validation(raw, o.valid_fraction, o.train.seed);
    has_valid = raw_valid.size() > 0;
    if (raw.size() == 0) throw InvalidInput("--valid-fraction leaves no training samples");
  }

  Model model;
  if (!o.warm_start.empty()) {
    record.input(o.warm_start);
    model = load_model(o.warm_start);
    model.meta.provenance = {};
    model.meta.provenance.warm_start = o.warm_start;
  } else {
    const std::size_t classes = o.classes ? o.classes : raw.num_classes();
    const auto vars = static_cast<std::uint32_t>(raw.num_features());
    model.meta.scaling = fit_scaling(raw, scale_mode);
    const auto graph = random_region_graph(vars, o.depth, o.repetitions, o.train.seed);
    model.circuit = construct_circuit(graph, classes, o.sums, o.leaves);
    const Dataset scaled = apply_scaling(raw, model.meta.scaling);
    const auto [mean, spread] = feature_moments(scaled.features);
    InitOptions init;
    init.leaf_kind = leaf_kind;
    init.train_variance = o.train_variance;
    init.feature_mean = mean;
    init.feature_spread = spread;
    Rng rng = Rng(o.train.seed).fork(3);
    model.params = init_parameters(model.circuit, init, rng);
  }
  const Dataset train_data = prepare_for_model(model, raw, "training data", true);
  Dataset valid_data;
  if (has_valid) valid_data = prepare_for_model(model, raw_valid, "validation data", true);

  record.seeds() = {{"graph", o.warm_start.empty() ? json(o.train.seed) : json(nullptr)},
                    {"init", o.warm_start.empty() ? json(o.train.seed) : json(nullptr)},
                    {"init_fork", 3},
                    {"train", o.train.seed}};

  CsvTable metrics({"epoch", "batch_objective", "train_objective", "train_ce", "train_nll",
                    "train_accuracy", "valid_objective", "valid_ce", "valid_nll",
                    "valid_accuracy"});
  const auto result = train(
      model.circuit, model.params, train_data, has_valid ? &valid_data : nullptr, o.train,
      [&](const EpochMetrics& e) {
        metrics.add({std::to_string(e.epoch), format_double(e.batch_objective),
                     format_double(e.train.objective), format_double(e.train.cross_entropy),
                     format_double(e.train.nll), format_double(e.train.accuracy),
                     opt_metric(e.valid, e.valid.objective), opt_metric(e.valid, e.valid.cross_entropy),
                     opt_metric(e.valid, e.valid.nll), opt_metric(e.valid, e.valid.accuracy)});
        out << "epoch " << e.epoch << " objective " << e.train.objective << " train_acc "
            << e.train.accuracy;
        if (e.valid.count) out << " valid_acc " << e.valid.accuracy;
        out << '\n';
      });

  model.params = result.params;
  model.meta.class_counts = count_classes(train_data, model.circuit.num_classes);
  model.meta.provenance.lambda = o.train.lambda;
  model.meta.provenance.epochs = o.train.epochs;
  model.meta.provenance.train_seed = o.train.seed;
  model.meta.provenance.keep_input = o.train.keep_input;
  model.meta.provenance.keep_sum = o.train.keep_sum;

  const fs::path metrics_path = o.metrics.empty() ? o.out + ".metrics.csv" : o.metrics;
  save_model(model, o.out, encoding);
  write_text(metrics_path, metrics.str());
  record.output(o.out);
  record.output(metrics_path);
  record.write(manifest_path(o.manifest, o.out + ".manifest.json"));

  const auto count = count_parameters(model.circuit, model.params.trains_variance());
  out << "wrote " << o.out << " (" << count.total << " parameters, " << metrics.rows()
      << " epochs)\n";
  return kOk;
}

int cmd_eval(const EvalOptions& o, const Invocation& inv, std::ostream& out) {
  const CsvOptions csv = csv_options(o.flags);
  const DataSpec spec = parse_data_spec(o.data);
  if (o.prior != "uniform" && o.prior != "empirical") throw UsageError("--prior expects uniform or empirical");

  RunRecord record("eval", inv.argv);
  record.config() = inv.config;
  record.input(o.model);
  record.inputs(spec);

  const Model model = load_model(o.model);
  const Dataset raw = load_nonempty(spec, csv, "evaluation data");
  const Dataset data = prepare_for_model(model, raw, "evaluation data", false);
  const auto prior = class_prior(model, o.prior);
  const EvalMetrics m =
      evaluate_dataset(model.circuit, model.params, data, prior, model.meta.provenance.lambda);

  CsvTable table({"count", "accuracy", "cross_entropy", "nll", "mean_log_px"});
  table.add(eval_row(m, data.labeled()));
  write_text(o.out, table.str());
  record.output(o.out);
  record.write(manifest_path(o.manifest, o.out + ".manifest.json"));
  out << table.str();
  return kOk;
}

int cmd_sweep_missing(const SweepMissingOptions& o, const Invocation& inv, std::ostream& out) {
  const CsvOptions csv = csv_options(o.flags);
  const DataSpec spec = parse_data_spec(o.data);
  if (o.prior != "uniform" && o.prior != "empirical") throw UsageError("--prior expects uniform or empirical");
  if (o.fractions.empty()) throw UsageError("--p needs at least one value");

  RunRecord record("sweep-missing", inv.argv);
  record.config() = inv.config;
  record.seeds() = {{"mask", o.seed}};
  record.input(o.model);
  record.inputs(spec);

  const Model model = load_model(o.model);
  const Dataset raw = load_nonempty(spec, csv, "evaluation data");
  const Dataset data = prepare_for_model(model, raw, "evaluation data", true);
  const auto prior = class_prior(model, o.prior);

  CsvTable table({"p", "missing_fraction", "accuracy", "cross_entropy", "mean_log_px"});
  for (double p : o.fractions) {
    const QueryMask mask = random_missing_mask(data, p, o.seed);
    std::size_t missing = 0;
    for (std::size_t r = 0; r < mask.rows(); ++r) {
      for (std::size_t c = 0; c < mask.cols(); ++c) missing += mask(r, c) != 0;
    }
    const EvalMetrics m = evaluate_dataset(model.circuit, model.params, data, prior,
                                           model.meta.provenance.lambda, mask);
    const double frac = static_cast<double>(missing) / static_cast<double>(mask.rows() * mask.cols());
    table.add({format_double(p), format_double(frac), format_double(m.accuracy),
               format_double(m.cross_entropy), format_double(m.mean_log_px)});
  }
  write_text(o.out, table.str());
  record.output(o.out);
  record.write(manifest_path(o.manifest, o.out + ".manifest.json"));
  out << table.str();
  return kOk;
}

int cmd_sweep_lambda(const SweepLambdaOptions& o, const Invocation& inv, std::ostream& out) {
  if (o.lambdas.empty()) throw UsageError("--lambdas needs at least one value");
  for (double l : o.lambdas) {
    TrainConfig cfg = o.train;
    cfg.lambda = l;
    check_train_config(cfg);
  }
  const ParamEncoding encoding = parse_encoding(o.encoding);
  const CsvOptions csv = csv_options(o.flags);
  const DataSpec train_spec = parse_data_spec(o.data);
  const DataSpec test_spec = parse_data_spec(o.test);

  RunRecord record("sweep-lambda", inv.argv);
  record.config() = inv.config;
  record.seeds() = {{"train", o.train.seed}};
  record.input(o.model);
  record.inputs(train_spec);
  record.inputs(test_spec);

  const Model base = load_model(o.model);
  const Dataset train_data =
      prepare_for_model(base, load_nonempty(train_spec, csv, "training data"), "training data", true);
  const Dataset test_data =
      prepare_for_model(base, load_nonempty(test_spec, csv, "test data"), "test data", true);
  const auto uniform = uniform_log_prior(base.circuit.num_classes);

  const fs::path dir = o.out;
  fs::create_directories(dir);
  CsvTable table({"lambda", "model", "final_batch_objective", "train_accuracy", "test_accuracy",
                  "test_ce", "test_nll", "test_mean_log_px"});
  for (double l : o.lambdas) {
    TrainConfig cfg = o.train;
    cfg.lambda = l;
    const auto result = train(base.circuit, base.params, train_data, nullptr, cfg);
    Model m{base.circuit, result.params, base.meta};
    m.meta.class_counts = count_classes(train_data, base.circuit.num_classes);
    m.meta.provenance = {l, cfg.epochs, cfg.seed, cfg.keep_input, cfg.keep_sum, o.model};
    const fs::path path = dir / ("lambda-" + format_double(l) + ".rat");
    save_model(m, path, encoding);
    record.output(path);

    const EvalMetrics te = evaluate_dataset(m.circuit, m.params, test_data, uniform, l);
    const EpochMetrics& last = result.history.back();
    table.add({format_double(l), path.filename().string(), format_double(last.batch_objective),
               format_double(last.train.accuracy), format_double(te.accuracy),
               format_double(te.cross_entropy), format_double(te.nll),
               format_double(te.mean_log_px)});
    out << "lambda " << l << " test_acc " << te.accuracy << " test_log_px " << te.mean_log_px << '\n';
  }
  const fs::path summary = dir / "summary.csv";
  write_text(summary, table.str());
  record.output(summary);
  record.write(manifest_path(o.manifest, (dir / "manifest.json").string()));
  return kOk;
}

int cmd_ood(const OodOptions& o, const Invocation& inv, std::ostream& out) {
  const CsvOptions csv = csv_options(o.flags);
  const DataSpec in_spec = parse_data_spec(o.in_domain);
  const DataSpec out_spec = parse_data_spec(o.out_domain);
  if (o.bins == 0) throw UsageError("--bins must be positive");
  if (!(o.outlier_percentile >= 0.0 && o.outlier_percentile <= 100.0)) {
    throw UsageError("--outlier-percentile must lie in [0, 100]");
  }
  if (o.prior != "uniform" && o.prior != "empirical") throw UsageError("--prior expects uniform or empirical");

  RunRecord record("ood", inv.argv);
  record.config() = inv.config;
  record.input(o.model);
  record.inputs(in_spec);
  record.inputs(out_spec);

  const Model model = load_model(o.model);
  const Dataset in_data =
      prepare_for_model(model, load_nonempty(in_spec, csv, "in-domain data"), "in-domain data", false);
  const Dataset out_data = prepare_for_model(model, load_nonempty(out_spec, csv, "out-of-domain data"),
                                             "out-of-domain data", false);
  const auto prior = class_prior(model, o.prior);
  const auto in_scores = log_px_scores(model, in_data, prior);
  const auto out_scores = log_px_scores(model, out_data, prior);
  for (const auto* s : {&in_scores, &out_scores}) {
    for (double v : *s) {
      if (std::isnan(v)) throw NumericError("log p(x) evaluated to NaN");
    }
  }

  const double auc = roc_auc(in_scores, out_scores);
  const double threshold = percentile(in_scores, o.outlier_percentile);
  const Histogram h = histogram({in_scores, out_scores}, o.bins);

  const fs::path dir = o.out;
  fs::create_directories(dir);

  CsvTable hist({"bin_lo", "bin_hi", "in_domain", "out_of_domain"});
  for (std::size_t b = 0; b < o.bins; ++b) {
    hist.add({format_double(h.edges[b]), format_double(h.edges[b + 1]),
              std::to_string(h.counts[0][b]), std::to_string(h.counts[1][b])});
  }
  std::size_t flagged_in = 0;
  std::size_t flagged_out = 0;
  CsvTable scores({"set", "index", "log_px", "outlier"});
  auto add_scores = [&](const char* name, const std::vector<double>& s, std::size_t& flagged) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      const bool outlier = s[i] < threshold;
      flagged += outlier;
      scores.add({name, std::to_string(i), format_double(s[i]), outlier ? "1" : "0"});
    }
  };
  add_scores("in", in_scores, flagged_in);
  add_scores("out", out_scores, flagged_out);

  auto mean = [](const std::vector<double>& s) {
    double acc = 0.0;
    for (double v : s) acc += v;
    return acc / static_cast<double>(s.size());
  };
  json summary = {
      {"auc", auc},
      {"prior", o.prior},
      {"in_domain", {{"count", in_scores.size()}, {"mean_log_px", mean(in_scores)},
                     {"flagged_outliers", flagged_in}}},
      {"out_of_domain", {{"count", out_scores.size()}, {"mean_log_px", mean(out_scores)},
                         {"flagged_outliers", flagged_out}}},
      {"outlier_percentile", o.outlier_percentile},
      {"outlier_threshold", threshold},
  };
  const fs::path hist_path = dir / "histogram.csv";
  const fs::path scores_path = dir / "scores.csv";
  const fs::path summary_path = dir / "summary.json";
  write_text(hist_path, hist.str());
  write_text(scores_path, scores.str());
  write_text(summary_path, summary.dump(2) + "\n");
  for (const auto& p : {hist_path, scores_path, summary_path}) record.output(p);
  record.write(manifest_path(o.manifest, (dir / "manifest.json").string()));

  out << "auc " << format_double(auc) << '\n';
  out << "outlier threshold (" << o.outlier_percentile << "th percentile of in-domain log p(x)) "
      << threshold << ": flagged " << flagged_in << " in-domain, " << flagged_out
      << " out-of-domain\n";
  return kOk;
}

int cmd_synth(const SynthOptions& o, const Invocation& inv, std::ostream& out) {
  if (o.kind != "glyphs" && o.kind != "noise") throw UsageError("--kind expects glyphs or noise");
  if (o.glyphs.side == 0) throw UsageError("--side must be positive");
  if (o.kind == "glyphs" && o.glyphs.num_classes == 0) throw UsageError("--classes must be positive");

  RunRecord record("synth", inv.argv);
  record.config() = inv.config;
  record.seeds() = {{"sample", o.seed}, {"prototype", o.glyphs.prototype_seed}};

  const fs::path images_path = o.out + "-images.idx";
  const fs::path labels_path = o.out + "-labels.idx";
  if (o.kind == "glyphs") {
    const GlyphSet set = make_glyphs(o.count, o.glyphs, o.seed);
    write_file_bytes(images_path, encode_idx_images(set.images));
    write_file_bytes(labels_path, encode_idx_labels(set.labels));
    record.output(images_path);
    record.output(labels_path);
  } else {
    const IdxImages noise = make_uniform_noise(o.count, o.glyphs.side, o.glyphs.side, o.seed);
    write_file_bytes(images_path, encode_idx_images(noise));
    record.output(images_path);
  }
  record.write(manifest_path(o.manifest, o.out + ".manifest.json"));
  out << "wrote " << images_path.string();
  if (o.kind == "glyphs") out << " and " << labels_path.string();
  out << '\n';
  return kOk;
}

int cmd_info(const std::string& model_path, std::ostream& out) {
  const std::string bytes = read_text(model_path);
  const Model model = parse_model(bytes);
  const auto& c = model.circuit;
  const auto count = count_parameters(c, model.params.trains_variance());
  json info = {
      {"num_vars", c.num_vars()},
      {"depth", c.graph.depth},
      {"repetitions", c.graph.repetitions},
      {"seed", c.graph.seed},
      {"classes", c.num_classes},
      {"sums", c.num_sums},
      {"leaves", c.num_leaves},
      {"leaf_kind", model.params.leaf_kind == LeafKind::Gaussian ? "gaussian" : "bernoulli"},
      {"train_variance", model.params.trains_variance()},
      {"regions", c.graph.regions.size()},
      {"partitions", c.graph.partitions.size()},
      {"stack_depth", c.stack_depth()},
      {"parameters", {{"sum_logits", count.num_sum_logits},
                      {"leaf_params", count.num_leaf_params},
                      {"total", count.total}}},
      {"scaling", to_string(model.meta.scaling.mode)},
      {"class_counts", model.meta.class_counts},
      {"provenance", {{"lambda", model.meta.provenance.lambda},
                      {"epochs", model.meta.provenance.epochs},
                      {"train_seed", model.meta.provenance.train_seed},
                      {"keep_input", model.meta.provenance.keep_input},
                      {"keep_sum", model.meta.provenance.keep_sum},
                      {"warm_start", model.meta.provenance.warm_start}}},
  };
  out << info.dump(2) << '\n';
  return kOk;
}

}  // namespace ratspn::cli
