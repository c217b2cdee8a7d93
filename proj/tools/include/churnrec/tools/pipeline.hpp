#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "churnrec/countergan.hpp"
#include "churnrec/dataset.hpp"
#include "churnrec/error.hpp"
#include "churnrec/forest.hpp"
#include "churnrec/metrics.hpp"
#include "churnrec/rgd.hpp"

namespace churnrec::tools {

// A stage asked for an input that an earlier stage should have produced.
class MissingArtifactError : public Error {
 public:
  MissingArtifactError(const std::filesystem::path& path, const std::string& stage)
      : Error("missing artifact " + path.string() + " (produced by '" + stage + "')"),
        path_(path),
        stage_(stage) {}

  const std::filesystem::path& path() const { return path_; }
  const std::string& stage() const { return stage_; }

 private:
  std::filesystem::path path_;
  std::string stage_;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  SynthConfig synth{};
  double train_fraction = 0.5;
  ForestConfig forest{};
  std::vector<std::size_t> tree_counts = {1, 5, 20};
  // RGD runs on this forest size only; other sizes are flagged.
  std::size_t rgd_trees = 20;
  TrainConfig gan{};
  RgdConfig rgd{};
  // Feature audited per coordinate (cost of that delta alone).
  std::string audit_feature = "action_count_last15_norm_max";
  std::size_t histogram_bins = 20;

  nlohmann::json to_json() const;
  // Starts from defaults and overrides the keys present in `doc`.
  static PipelineConfig from_json(const nlohmann::json& doc);
  void validate() const;
};

PipelineConfig load_config(const std::filesystem::path& path);

// Artifact layout under one work directory.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path meta() const { return root / "data" / "meta.json"; }
  std::filesystem::path train() const { return root / "data" / "train.csv"; }
  std::filesystem::path test() const { return root / "data" / "test.csv"; }
  std::filesystem::path forest(std::size_t trees) const;
  std::filesystem::path surrogate(std::size_t trees) const;
  std::filesystem::path gan(std::size_t trees) const;
  std::filesystem::path actions(RecourseMethod method, std::size_t trees) const;
  std::filesystem::path timings(RecourseMethod method, std::size_t trees) const;
  std::filesystem::path report(RecourseMethod method, std::size_t trees) const;
  std::filesystem::path latency(RecourseMethod method, std::size_t trees) const;
  std::filesystem::path audit(RecourseMethod method, std::size_t trees) const;
  std::filesystem::path tables() const { return root / "reports" / "tables.txt"; }
  std::filesystem::path summary() const { return root / "reports" / "summary.json"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
};

// Stage seeds derived from the master seed by stage name.
std::uint64_t stage_seed(std::uint64_t master, const std::string& stage);

// Each stage reads its inputs from the layout and writes its outputs there.
struct InputData {
  // Raw panel CSV plus meta; features are rescaled with train-split maxima.
  std::filesystem::path csv;
  std::filesystem::path meta;
};
void stage_generate_data(const Layout& layout, const PipelineConfig& config,
                         const std::optional<InputData>& input = std::nullopt);
void stage_train_forest(const Layout& layout, const PipelineConfig& config, std::size_t trees);
DistillResult stage_distill(const Layout& layout, const PipelineConfig& config, std::size_t trees);
void stage_train_gan(const Layout& layout, const PipelineConfig& config, std::size_t trees);
// Returns true when the run is flagged (RGD on a forest other than rgd_trees).
bool stage_recourse(const Layout& layout, const PipelineConfig& config, std::size_t trees,
                    RecourseMethod method);
EvaluationReport stage_evaluate(const Layout& layout, const PipelineConfig& config,
                                std::size_t trees, RecourseMethod method);
void stage_audit(const Layout& layout, const PipelineConfig& config, std::size_t trees,
                 RecourseMethod method);

// Every stage for every forest size plus RGD, the summary tables, and the
// manifest.
void run_repro(const Layout& layout, const PipelineConfig& config);

// Loaders that raise MissingArtifactError naming the producing stage.
Dataset load_split(const Layout& layout, bool train);
ChurnClassifier load_forest(const std::filesystem::path& path);

}  // namespace churnrec::tools
