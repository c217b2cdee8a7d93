// churnrec: command-line driver for the churn prediction and recourse pipeline.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "churnrec/error.hpp"
#include "churnrec/tools/pipeline.hpp"
#include "churnrec/tools/service.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitMissingArtifact = 3;
constexpr int kExitNumerical = 4;

struct Options {
  std::string work = "churnrec-run";
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t trees = 20;
  std::string method = "gan";
  std::optional<std::size_t> users;
  std::optional<std::size_t> features;
  std::optional<double> censor_rate;
  std::optional<std::size_t> max_iterations;
  std::string input_csv;
  std::string input_meta;
  // serve
  std::string forest;
  std::string gan;
  std::string meta;
  std::string host = "127.0.0.1";
  int port = 8080;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--work", o.work, "Work directory holding all artifacts")->capture_default_str();
  sub->add_option("--config", o.config, "JSON config file");
  sub->add_option("--seed", o.seed, "Master seed (overrides the config)");
}

churnrec::tools::PipelineConfig make_config(const Options& o) {
  auto config = o.config.empty() ? churnrec::tools::PipelineConfig{}
                                 : churnrec::tools::load_config(o.config);
  if (o.seed) config.seed = *o.seed;
  if (o.users) config.synth.n_users = *o.users;
  if (o.features) config.synth.n_features = *o.features;
  if (o.censor_rate) config.synth.censor_rate = *o.censor_rate;
  if (o.max_iterations) config.gan.max_iterations = *o.max_iterations;
  config.validate();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace churnrec;
  using namespace churnrec::tools;

  CLI::App app{"Churn prediction with survival forests and counterfactual recourse"};
  app.require_subcommand(1);
  Options o;

  auto* generate = app.add_subcommand("generate-data", "Synthesize or ingest a panel and split it");
  add_common(generate, o);
  generate->add_option("--users", o.users, "Synthetic users");
  generate->add_option("--features", o.features, "Synthetic feature count");
  generate->add_option("--censor-rate", o.censor_rate, "Fraction of censored lifetimes");
  generate->add_option("--input", o.input_csv, "Ingest this CSV instead of synthesizing");
  generate->add_option("--input-meta", o.input_meta, "Feature meta for --input");

  auto* train_forest = app.add_subcommand("train-forest", "Fit a survival forest");
  add_common(train_forest, o);
  train_forest->add_option("--trees", o.trees, "Number of trees")->capture_default_str();

  auto* distill = app.add_subcommand("distill", "Distill the forest score into a surrogate network");
  add_common(distill, o);
  distill->add_option("--trees", o.trees, "Forest size")->capture_default_str();

  auto* train_gan = app.add_subcommand("train-gan", "Train a CounteRGAN against a forest");
  add_common(train_gan, o);
  train_gan->add_option("--trees", o.trees, "Forest size")->capture_default_str();
  train_gan->add_option("--max-iterations", o.max_iterations, "Training iterations");

  auto* recourse = app.add_subcommand("recourse", "Generate recourse for denied test users");
  add_common(recourse, o);
  recourse->add_option("--trees", o.trees, "Forest size")->capture_default_str();
  recourse->add_option("--method", o.method, "gan or rgd")
      ->check(CLI::IsMember({"gan", "rgd"}))
      ->capture_default_str();

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Compute the metric report");
  add_common(evaluate_cmd, o);
  evaluate_cmd->add_option("--trees", o.trees, "Forest size")->capture_default_str();
  evaluate_cmd->add_option("--method", o.method, "gan or rgd")
      ->check(CLI::IsMember({"gan", "rgd"}))
      ->capture_default_str();

  auto* audit = app.add_subcommand("audit", "Export PCA scatter and cost histograms");
  add_common(audit, o);
  audit->add_option("--trees", o.trees, "Forest size")->capture_default_str();
  audit->add_option("--method", o.method, "gan or rgd")
      ->check(CLI::IsMember({"gan", "rgd"}))
      ->capture_default_str();

  auto* serve_cmd = app.add_subcommand("serve", "Serve predictions, recourse and what-if queries");
  serve_cmd->add_option("--forest", o.forest, "Forest JSON")->required();
  serve_cmd->add_option("--gan", o.gan, "CounteRGAN bundle directory")->required();
  serve_cmd->add_option("--meta", o.meta, "Feature meta JSON")->required();
  serve_cmd->add_option("--host", o.host, "Bind address")->capture_default_str();
  serve_cmd->add_option("--port", o.port, "Port")->capture_default_str();

  auto* repro = app.add_subcommand("repro", "Run every stage for 1/5/20 trees plus RGD");
  add_common(repro, o);
  repro->add_option("--users", o.users, "Synthetic users");
  repro->add_option("--max-iterations", o.max_iterations, "Training iterations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (serve_cmd->parsed()) {
      const ServiceState state = load_service_state(o.forest, o.gan, o.meta);
      std::cerr << "listening on " << o.host << ':' << o.port << '\n';
      if (!serve(state, o.host, o.port)) {
        std::cerr << "error: cannot bind " << o.host << ':' << o.port << '\n';
        return kExitFailure;
      }
      return kExitOk;
    }

    const PipelineConfig config = make_config(o);
    const Layout layout{o.work};
    const RecourseMethod method = parse_method(o.method);

    if (generate->parsed()) {
      std::optional<InputData> input;
      if (!o.input_csv.empty()) {
        if (o.input_meta.empty()) throw ConfigError("--input requires --input-meta");
        input = InputData{o.input_csv, o.input_meta};
      }
      stage_generate_data(layout, config, input);
      std::cout << "wrote " << layout.train().string() << " and " << layout.test().string() << '\n';
    } else if (train_forest->parsed()) {
      stage_train_forest(layout, config, o.trees);
      std::cout << "wrote " << layout.forest(o.trees).string() << '\n';
    } else if (distill->parsed()) {
      const auto result = stage_distill(layout, config, o.trees);
      std::cout << "surrogate agreement: train " << result.train_agreement << ", holdout "
                << result.holdout_agreement << '\n';
    } else if (train_gan->parsed()) {
      stage_train_gan(layout, config, o.trees);
      std::cout << "wrote " << layout.gan(o.trees).string() << '\n';
    } else if (recourse->parsed()) {
      const bool flagged = stage_recourse(layout, config, o.trees, method);
      std::cout << "wrote " << layout.actions(method, o.trees).string()
                << (flagged ? " (flagged: non-reference forest size)" : "") << '\n';
    } else if (evaluate_cmd->parsed()) {
      const EvaluationReport report = stage_evaluate(layout, config, o.trees, method);
      std::cout << format_tables(std::span<const EvaluationReport>(&report, 1), true);
    } else if (audit->parsed()) {
      stage_audit(layout, config, o.trees, method);
      std::cout << "wrote " << layout.audit(method, o.trees).string() << '\n';
    } else if (repro->parsed()) {
      run_repro(layout, config);
      std::ifstream tables(layout.tables());
      std::cout << tables.rdbuf() << "manifest: " << layout.manifest().string() << '\n';
    }
    return kExitOk;
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitMissingArtifact;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
