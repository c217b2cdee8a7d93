#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "churnrec/tools/manifest.hpp"
#include "churnrec/tools/pipeline.hpp"
#include "churnrec/tools/service.hpp"

using namespace churnrec;
using namespace churnrec::tools;
using nlohmann::json;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("churnrec_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

PipelineConfig small_config() {
  PipelineConfig c;
  c.seed = 11;
  c.synth.n_users = 400;
  c.tree_counts = {1, 3};
  c.rgd_trees = 3;
  c.gan.max_iterations = 40;
  c.gan.surrogate.epochs = 5;
  c.rgd.max_steps = 50;
  return c;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CHURNREC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("git blob hashes") {
    CHECK(git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
    CHECK(git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  }

  TEST_CASE("volatile artifacts") {
    CHECK(is_volatile_artifact("recourse/timings_gan_5.csv"));
    CHECK(is_volatile_artifact("reports/latency_rgd_20.json"));
    CHECK(is_volatile_artifact("reports/tables.txt"));
    CHECK_FALSE(is_volatile_artifact("recourse/actions_gan_5.csv"));
    CHECK_FALSE(is_volatile_artifact("reports/report_gan_5.json"));
  }

  TEST_CASE("config round trip and strictness") {
    const auto c = small_config();
    const auto back = PipelineConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(PipelineConfig::from_json(json::object()).to_json() == PipelineConfig{}.to_json());

    CHECK_THROWS_AS(PipelineConfig::from_json(json{{"sed", 1}}), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_json(json{{"gan", {{"lambda_reg", "big"}}}}),
                    ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_json(json{{"rgd", {{"steps", 3}}}}), ConfigError);
    CHECK_THROWS_AS(PipelineConfig::from_json(json{{"gan", {{"real_pool", "fake"}}}}),
                    ConfigError);
    auto bad = PipelineConfig{};
    bad.tree_counts = {};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = PipelineConfig{};
    bad.train_fraction = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("stages report missing inputs by producer") {
    const Layout layout{fresh_dir("missing")};
    const auto c = small_config();
    try {
      stage_train_forest(layout, c, 1);
      FAIL("expected MissingArtifactError");
    } catch (const MissingArtifactError& e) {
      CHECK(e.stage() == "generate-data");
    }
    stage_generate_data(layout, c);
    CHECK_THROWS_AS(stage_train_gan(layout, c, 1), MissingArtifactError);
    CHECK_THROWS_AS(stage_evaluate(layout, c, 1, RecourseMethod::kGan), MissingArtifactError);
    std::filesystem::remove_all(layout.root);
  }

  TEST_CASE("stage by stage run with flags and reports") {
    const Layout layout{fresh_dir("stages")};
    const auto c = small_config();
    stage_generate_data(layout, c);
    const auto train = load_split(layout, true);
    const auto test = load_split(layout, false);
    CHECK(train.size() == 200);
    CHECK(test.size() == 200);

    stage_train_forest(layout, c, 1);
    stage_train_gan(layout, c, 1);
    CHECK(std::filesystem::exists(layout.gan(1) / "generator.json"));
    CHECK_FALSE(stage_recourse(layout, c, 1, RecourseMethod::kGan));
    // RGD belongs to the reference forest size; other sizes are flagged.
    CHECK(stage_recourse(layout, c, 1, RecourseMethod::kRgd));

    const auto report = stage_evaluate(layout, c, 1, RecourseMethod::kGan);
    CHECK(report.n_trees == 1);
    CHECK(report.discriminator_accuracy_real.has_value());
    const auto doc = json::parse(read_file(layout.report(RecourseMethod::kGan, 1)));
    for (const char* key : {"model_accuracy_all", "model_accuracy_y0",
                            "discriminator_accuracy_real", "discriminator_accuracy_fake",
                            "post_recourse_classifier_accuracy", "percent_denied",
                            "percent_successful_recourse", "mean_cost_successful",
                            "cumulative_cost_denied"}) {
      CHECK_MESSAGE(doc.contains(key), key);
    }
    CHECK_FALSE(doc.contains("mean_clock_time_seconds"));
    CHECK(json::parse(read_file(layout.latency(RecourseMethod::kGan, 1)))
              .contains("mean_clock_time_seconds"));

    stage_audit(layout, c, 1, RecourseMethod::kGan);
    CHECK(std::filesystem::exists(layout.audit(RecourseMethod::kGan, 1) / "scatter.csv"));

    const auto state = load_service_state(layout.forest(1), layout.gan(1), layout.meta());
    CHECK(handle_features(state).body.size() == train.num_features());
    std::filesystem::remove_all(layout.root);
  }

  TEST_CASE("cli exit codes") {
    const auto dir = fresh_dir("cli");
    const std::string work = "--work " + (dir / "run").string();
    CHECK(run_cli("") == 2);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("recourse --method dice " + work) == 2);
    CHECK(run_cli("train-forest " + work) == 3);

    std::ofstream(dir / "bad.json") << R"({"seeed": 3})";
    CHECK(run_cli("generate-data --config " + (dir / "bad.json").string() + " " + work) == 2);
    std::ofstream(dir / "broken.json") << "{";
    CHECK(run_cli("generate-data --config " + (dir / "broken.json").string() + " " + work) == 2);

    CHECK(run_cli("generate-data --users 300 " + work) == 0);
    CHECK(run_cli("train-forest --trees 2 " + work) == 0);
    CHECK(std::filesystem::exists(dir / "run" / "models" / "forest_2.json"));
    CHECK(run_cli("serve --forest " + (dir / "nope.json").string() + " --gan " +
                  (dir / "nope").string() + " --meta " + (dir / "nope.json").string()) != 0);
    std::filesystem::remove_all(dir);
  }
}
