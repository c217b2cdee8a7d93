#include "churnrec/tools/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <memory>

#include "churnrec/audit.hpp"
#include "churnrec/error.hpp"
#include "churnrec/rng.hpp"
#include "churnrec/tools/manifest.hpp"

namespace churnrec::tools {

namespace {

using nlohmann::json;

// Copies doc[key] into target when present; any other key is an error.
class Reader {
 public:
  Reader(const json& doc, std::string section) : doc_(doc), section_(std::move(section)) {
    if (!doc_.is_object()) throw ConfigError("config section '" + section_ + "' must be an object");
  }

  template <typename T>
  Reader& get(const char* key, T& target) {
    seen_.emplace_back(key);
    if (!doc_.contains(key)) return *this;
    try {
      target = doc_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + section_ + "." + key + "' has the wrong type");
    }
    return *this;
  }

  const json* child(const char* key) {
    seen_.emplace_back(key);
    return doc_.contains(key) ? &doc_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : doc_.items()) {
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
        throw ConfigError("unknown config key '" + section_ + "." + key + "'");
      }
    }
  }

 private:
  const json& doc_;
  std::string section_;
  std::vector<std::string> seen_;
};

std::string suffix(RecourseMethod method, std::size_t trees) {
  return std::string(to_string(method)) + "_" + std::to_string(trees);
}

json read_json_file(const std::filesystem::path& path, const std::string& stage) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError(path, stage);
  std::ifstream in(path, std::ios::binary);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json_file(const json& doc, const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

void require(const std::filesystem::path& path, const std::string& stage) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError(path, stage);
}

std::shared_ptr<const ChurnClassifier> forest_for(const Layout& layout, std::size_t trees) {
  return std::make_shared<const ChurnClassifier>(load_forest(layout.forest(trees)));
}

TrainConfig gan_config(const PipelineConfig& config) {
  TrainConfig c = config.gan;
  c.seed = stage_seed(config.seed, "countergan");
  return c;
}

SurrogateConfig surrogate_config(const PipelineConfig& config) {
  // Matches the derivation train_countergan uses when it distills inline.
  SurrogateConfig c = config.gan.surrogate;
  c.seed = derive_seed(gan_config(config).seed, "surrogate");
  return c;
}

std::vector<RecourseAction> load_actions_for(const Layout& layout, const Dataset& test,
                                             std::size_t trees, RecourseMethod method) {
  const auto path = layout.actions(method, trees);
  require(path, "recourse");
  auto actions = load_actions(path, test.meta);
  const auto timing_path = layout.timings(method, trees);
  if (std::filesystem::exists(timing_path)) load_timings(actions, timing_path);
  return actions;
}

}  // namespace

json PipelineConfig::to_json() const {
  json signal = json::array();
  for (const auto& e : synth.signal) signal.push_back({{"feature", e.feature}, {"weight", e.weight}});
  return {
      {"seed", seed},
      {"train_fraction", train_fraction},
      {"synth",
       {{"n_users", synth.n_users},
        {"n_features", synth.n_features},
        {"censor_rate", synth.censor_rate},
        {"shape", synth.shape},
        {"threshold_days", synth.threshold_days},
        {"signal", signal}}},
      {"forest",
       {{"min_leaf_size", forest.min_leaf_size},
        {"features_per_split", forest.features_per_split},
        {"n_threads", forest.n_threads}}},
      {"tree_counts", tree_counts},
      {"rgd_trees", rgd_trees},
      {"gan",
       {{"max_iterations", gan.max_iterations},
        {"batch_size", gan.batch_size},
        {"checkpoint_accuracy_ceiling", gan.checkpoint_accuracy_ceiling},
        {"lambda_cls", gan.lambda_cls},
        {"lambda_reg", gan.lambda_reg},
        {"real_pool", gan.real_pool == RealPool::kRetained ? "retained" : "all"},
        {"generator_learning_rate", gan.generator_adam.learning_rate},
        {"discriminator_learning_rate", gan.discriminator_adam.learning_rate}}},
      {"surrogate",
       {{"epochs", gan.surrogate.epochs},
        {"batch_size", gan.surrogate.batch_size},
        {"noise", gan.surrogate.noise},
        {"noisy_copies", gan.surrogate.noisy_copies},
        {"holdout_fraction", gan.surrogate.holdout_fraction},
        {"learning_rate", gan.surrogate.adam.learning_rate}}},
      {"rgd",
       {{"max_steps", rgd.max_steps},
        {"step_size", rgd.step_size},
        {"max_step", rgd.max_step},
        {"lambda_distance", rgd.lambda_distance},
        {"fd_epsilon", rgd.fd_epsilon},
        {"target_score", rgd.target_score},
        {"max_restarts", rgd.max_restarts},
        {"restart_radius", rgd.restart_radius}}},
      {"audit", {{"feature", audit_feature}, {"bins", histogram_bins}}}};
}

PipelineConfig PipelineConfig::from_json(const json& doc) {
  PipelineConfig c;
  Reader top(doc, "config");
  top.get("seed", c.seed).get("train_fraction", c.train_fraction);
  top.get("tree_counts", c.tree_counts).get("rgd_trees", c.rgd_trees);
  if (const json* s = top.child("synth")) {
    Reader r(*s, "synth");
    r.get("n_users", c.synth.n_users)
        .get("n_features", c.synth.n_features)
        .get("censor_rate", c.synth.censor_rate)
        .get("shape", c.synth.shape)
        .get("threshold_days", c.synth.threshold_days);
    if (const json* signal = r.child("signal")) {
      if (!signal->is_array()) throw ConfigError("synth.signal must be an array");
      c.synth.signal.clear();
      for (const auto& e : *signal) {
        SignalEffect effect;
        Reader(e, "synth.signal[]").get("feature", effect.feature).get("weight", effect.weight).finish();
        c.synth.signal.push_back(effect);
      }
    }
    r.finish();
  }
  if (const json* f = top.child("forest")) {
    Reader(*f, "forest")
        .get("min_leaf_size", c.forest.min_leaf_size)
        .get("features_per_split", c.forest.features_per_split)
        .get("n_threads", c.forest.n_threads)
        .finish();
  }
  if (const json* g = top.child("gan")) {
    std::string pool = "retained";
    Reader(*g, "gan")
        .get("max_iterations", c.gan.max_iterations)
        .get("batch_size", c.gan.batch_size)
        .get("checkpoint_accuracy_ceiling", c.gan.checkpoint_accuracy_ceiling)
        .get("lambda_cls", c.gan.lambda_cls)
        .get("lambda_reg", c.gan.lambda_reg)
        .get("real_pool", pool)
        .get("generator_learning_rate", c.gan.generator_adam.learning_rate)
        .get("discriminator_learning_rate", c.gan.discriminator_adam.learning_rate)
        .finish();
    if (pool != "retained" && pool != "all") {
      throw ConfigError("gan.real_pool must be 'retained' or 'all'");
    }
    c.gan.real_pool = pool == "all" ? RealPool::kAllData : RealPool::kRetained;
  }
  if (const json* s = top.child("surrogate")) {
    Reader(*s, "surrogate")
        .get("epochs", c.gan.surrogate.epochs)
        .get("batch_size", c.gan.surrogate.batch_size)
        .get("noise", c.gan.surrogate.noise)
        .get("noisy_copies", c.gan.surrogate.noisy_copies)
        .get("holdout_fraction", c.gan.surrogate.holdout_fraction)
        .get("learning_rate", c.gan.surrogate.adam.learning_rate)
        .finish();
  }
  if (const json* r = top.child("rgd")) {
    Reader(*r, "rgd")
        .get("max_steps", c.rgd.max_steps)
        .get("step_size", c.rgd.step_size)
        .get("max_step", c.rgd.max_step)
        .get("lambda_distance", c.rgd.lambda_distance)
        .get("fd_epsilon", c.rgd.fd_epsilon)
        .get("target_score", c.rgd.target_score)
        .get("max_restarts", c.rgd.max_restarts)
        .get("restart_radius", c.rgd.restart_radius)
        .finish();
  }
  if (const json* a = top.child("audit")) {
    Reader(*a, "audit").get("feature", c.audit_feature).get("bins", c.histogram_bins).finish();
  }
  top.finish();
  c.validate();
  return c;
}

void PipelineConfig::validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  if (tree_counts.empty()) throw ConfigError("tree_counts must not be empty");
  for (std::size_t t : tree_counts) {
    if (t < 1) throw ConfigError("tree counts must be at least 1");
  }
  if (forest.min_leaf_size < 1) throw ConfigError("forest.min_leaf_size must be at least 1");
  if (histogram_bins < 1) throw ConfigError("audit.bins must be at least 1");
  gan.validate();
  rgd.validate();
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return PipelineConfig::from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
  }
}

std::filesystem::path Layout::forest(std::size_t trees) const {
  return root / "models" / ("forest_" + std::to_string(trees) + ".json");
}
std::filesystem::path Layout::surrogate(std::size_t trees) const {
  return root / "models" / ("surrogate_" + std::to_string(trees) + ".json");
}
std::filesystem::path Layout::gan(std::size_t trees) const {
  return root / "models" / ("gan_" + std::to_string(trees));
}
std::filesystem::path Layout::actions(RecourseMethod method, std::size_t trees) const {
  return root / "recourse" / ("actions_" + suffix(method, trees) + ".csv");
}
std::filesystem::path Layout::timings(RecourseMethod method, std::size_t trees) const {
  return root / "recourse" / ("timings_" + suffix(method, trees) + ".csv");
}
std::filesystem::path Layout::report(RecourseMethod method, std::size_t trees) const {
  return root / "reports" / ("report_" + suffix(method, trees) + ".json");
}
std::filesystem::path Layout::latency(RecourseMethod method, std::size_t trees) const {
  return root / "reports" / ("latency_" + suffix(method, trees) + ".json");
}
std::filesystem::path Layout::audit(RecourseMethod method, std::size_t trees) const {
  return root / "audit" / suffix(method, trees);
}

std::uint64_t stage_seed(std::uint64_t master, const std::string& stage) {
  return derive_seed(master, stage);
}

Dataset load_split(const Layout& layout, bool train) {
  const auto path = train ? layout.train() : layout.test();
  require(path, "generate-data");
  require(layout.meta(), "generate-data");
  Dataset data = load_csv(path, layout.meta());
  data.split_tag = train ? SplitTag::kTrain : SplitTag::kTest;
  return data;
}

ChurnClassifier load_forest(const std::filesystem::path& path) {
  return ChurnClassifier::from_json(read_json_file(path, "train-forest"));
}

void stage_generate_data(const Layout& layout, const PipelineConfig& config,
                         const std::optional<InputData>& input) {
  config.validate();
  Dataset all;
  if (input) {
    all = load_csv(input->csv, input->meta, config.synth.threshold_days);
  } else {
    SynthConfig synth = config.synth;
    synth.seed = stage_seed(config.seed, "synthesize");
    all = synthesize(synth);
  }
  auto [train, test] = split(all, config.train_fraction, stage_seed(config.seed, "split"));
  if (input) {
    // Raw ingested features are scaled by training-split maxima only.
    const MaxScaler scaler = MaxScaler::fit(train);
    train = scaler.apply(train);
    test = scaler.apply(test);
  }
  std::filesystem::create_directories(layout.root / "data");
  save_meta(all.meta, layout.meta());
  save_csv(train, layout.train());
  save_csv(test, layout.test());
}

void stage_train_forest(const Layout& layout, const PipelineConfig& config, std::size_t trees) {
  const Dataset train = load_split(layout, true);
  ForestConfig fc = config.forest;
  fc.n_trees = trees;
  fc.seed = stage_seed(config.seed, "forest");
  const ChurnClassifier forest = fit_forest(train, fc);
  write_json_file(forest.to_json(), layout.forest(trees));
}

DistillResult stage_distill(const Layout& layout, const PipelineConfig& config, std::size_t trees) {
  const Dataset train = load_split(layout, true);
  const auto forest = forest_for(layout, trees);
  DistillResult result = distill_surrogate(*forest, train, surrogate_config(config));
  json doc = result.surrogate.to_json();
  doc["train_agreement"] = result.train_agreement;
  doc["holdout_agreement"] = result.holdout_agreement;
  write_json_file(doc, layout.surrogate(trees));
  return result;
}

void stage_train_gan(const Layout& layout, const PipelineConfig& config, std::size_t trees) {
  const Dataset train = load_split(layout, true);
  const auto forest = forest_for(layout, trees);
  std::optional<nn::Mlp> surrogate;
  double train_agreement = 0.0;
  double holdout_agreement = 0.0;
  if (std::filesystem::exists(layout.surrogate(trees))) {
    const json doc = read_json_file(layout.surrogate(trees), "distill");
    surrogate = nn::Mlp::from_json(doc);
    train_agreement = doc.value("train_agreement", 0.0);
    holdout_agreement = doc.value("holdout_agreement", 0.0);
  }
  const bool distilled_here = !surrogate.has_value();
  CounterGanModel model = train_countergan(train, forest, gan_config(config), std::move(surrogate));
  if (!distilled_here) {
    model.surrogate_train_agreement = train_agreement;
    model.surrogate_holdout_agreement = holdout_agreement;
  }
  std::filesystem::remove_all(layout.gan(trees));
  save_bundle(model, layout.gan(trees));
}

bool stage_recourse(const Layout& layout, const PipelineConfig& config, std::size_t trees,
                    RecourseMethod method) {
  const Dataset test = binary_subset(load_split(layout, false));
  const auto forest = forest_for(layout, trees);
  std::vector<RecourseAction> actions;
  bool flagged = false;
  if (method == RecourseMethod::kGan) {
    require(layout.gan(trees) / "model.json", "train-gan");
    const CounterGanModel model = load_bundle(layout.gan(trees), forest);
    actions = generate_recourse_batch(model, test);
  } else {
    flagged = trees != config.rgd_trees;
    if (flagged) {
      std::cerr << "warning: RGD on a " << trees << "-tree forest; the reference comparison uses "
                << config.rgd_trees << " trees\n";
    }
    RgdConfig rc = config.rgd;
    rc.seed = stage_seed(config.seed, "rgd");
    actions = rgd_recourse_batch(*forest, test, rc);
  }
  std::filesystem::create_directories(layout.root / "recourse");
  save_actions(actions, test.meta, layout.actions(method, trees));
  save_timings(actions, layout.timings(method, trees));
  return flagged;
}

EvaluationReport stage_evaluate(const Layout& layout, const PipelineConfig& config,
                                std::size_t trees, RecourseMethod method) {
  const Dataset test = binary_subset(load_split(layout, false));
  const auto forest = forest_for(layout, trees);
  const auto actions = load_actions_for(layout, test, trees, method);
  std::optional<CounterGanModel> model;
  if (method == RecourseMethod::kGan) {
    require(layout.gan(trees) / "model.json", "train-gan");
    model = load_bundle(layout.gan(trees), forest);
  }
  EvaluationReport report = evaluate(*forest, test, actions, std::string(to_string(method)),
                                     model ? &model->discriminator : nullptr);
  json doc = to_json(report, false);
  doc["rgd_reference_forest"] = method == RecourseMethod::kRgd ? trees == config.rgd_trees : true;
  if (model) {
    doc["qualifying_checkpoint"] = model->has_qualifying_checkpoint();
    doc["surrogate_train_agreement"] = model->surrogate_train_agreement;
    doc["surrogate_holdout_agreement"] = model->surrogate_holdout_agreement;
  }
  write_json_file(doc, layout.report(method, trees));
  write_json_file({{"mean_clock_time_seconds", report.mean_clock_time_seconds
                                                   ? json(*report.mean_clock_time_seconds)
                                                   : json(nullptr)},
                   {"n", actions.size()}},
                  layout.latency(method, trees));
  return report;
}

void stage_audit(const Layout& layout, const PipelineConfig& config, std::size_t trees,
                 RecourseMethod method) {
  const Dataset train = load_split(layout, true);
  const Dataset test = binary_subset(load_split(layout, false));
  const auto actions = load_actions_for(layout, test, trees, method);
  const auto dir = layout.audit(method, trees);
  std::filesystem::create_directories(dir);

  std::vector<std::vector<double>> rows;
  rows.reserve(train.size());
  for (const auto& r : train.records) rows.push_back(r.features);
  const PcaModel pca = fit_pca(rows, 2);
  save_pca(pca, dir / "pca.json");
  save_scatter(build_scatter(actions, pca), dir / "scatter.csv");
  if (actions.empty()) return;

  save_histogram(cost_histograms(actions, std::nullopt, HistogramSplit::kEfficacy,
                                 config.histogram_bins),
                 dir / "hist_cost_efficacy.csv");
  save_histogram(cost_histograms(actions, std::nullopt, HistogramSplit::kTrueOutcome,
                                 config.histogram_bins),
                 dir / "hist_cost_outcome.csv");
  const auto it = std::find_if(test.meta.begin(), test.meta.end(),
                               [&](const FeatureMeta& m) { return m.name == config.audit_feature; });
  if (it == test.meta.end()) return;
  const auto index = static_cast<std::size_t>(it - test.meta.begin());
  save_histogram(cost_histograms(actions, index, HistogramSplit::kEfficacy, config.histogram_bins),
                 dir / ("hist_" + it->name + "_efficacy.csv"));
  save_histogram(
      cost_histograms(actions, index, HistogramSplit::kTrueOutcome, config.histogram_bins),
      dir / ("hist_" + it->name + "_outcome.csv"));
}

void run_repro(const Layout& layout, const PipelineConfig& config) {
  config.validate();
  std::filesystem::create_directories(layout.root);
  stage_generate_data(layout, config);
  std::vector<EvaluationReport> reports;
  json summary = json::array();
  for (std::size_t trees : config.tree_counts) {
    stage_train_forest(layout, config, trees);
    stage_distill(layout, config, trees);
    stage_train_gan(layout, config, trees);
    stage_recourse(layout, config, trees, RecourseMethod::kGan);
    reports.push_back(stage_evaluate(layout, config, trees, RecourseMethod::kGan));
    stage_audit(layout, config, trees, RecourseMethod::kGan);
    summary.push_back(to_json(reports.back(), false));
  }
  if (std::find(config.tree_counts.begin(), config.tree_counts.end(), config.rgd_trees) ==
      config.tree_counts.end()) {
    stage_train_forest(layout, config, config.rgd_trees);
  }
  stage_recourse(layout, config, config.rgd_trees, RecourseMethod::kRgd);
  reports.push_back(stage_evaluate(layout, config, config.rgd_trees, RecourseMethod::kRgd));
  stage_audit(layout, config, config.rgd_trees, RecourseMethod::kRgd);
  summary.push_back(to_json(reports.back(), false));

  write_json_file(summary, layout.summary());
  {
    std::ofstream out(layout.tables(), std::ios::binary);
    if (!out) throw Error("cannot write " + layout.tables().string());
    out << format_tables(reports, true);
  }
  write_manifest(layout.root, config.to_json(), config.seed);
}

}  // namespace churnrec::tools
