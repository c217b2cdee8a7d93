#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "churnrec/recourse.hpp"

namespace churnrec {

struct PcaModel {
  Eigen::VectorXd mean;
  // One unit-norm component per row, by descending eigenvalue.
  Eigen::MatrixXd components;
  Eigen::VectorXd eigenvalues;
  // Share of total variance per kept component.
  Eigen::VectorXd explained_variance_share;

  Eigen::VectorXd project(std::span<const double> x) const;
  nlohmann::json to_json() const;
  static PcaModel from_json(const nlohmann::json& doc);
};

// `data` holds one sample per row. Each component's largest-magnitude entry
// is made positive. Throws PreconditionError when all rows are identical.
PcaModel fit_pca(const Eigen::MatrixXd& data, std::size_t k = 2);
PcaModel fit_pca(std::span<const std::vector<double>> rows, std::size_t k = 2);

struct ScatterRow {
  std::string user_id;
  double pc1 = 0.0;
  double pc2 = 0.0;
  std::string phase;  // pre | post
  Label y = Label::kIndeterminate;
  int post_class = 0;
};

// Two rows per action: the original point and the counterfactual.
std::vector<ScatterRow> build_scatter(std::span<const RecourseAction> actions, const PcaModel& pca);

enum class HistogramSplit { kEfficacy, kTrueOutcome };

struct Histogram {
  std::vector<double> edges;  // bins + 1 entries
  std::vector<std::string> groups;
  std::vector<std::vector<std::size_t>> counts;  // [group][bin]
};

// Fixed-width bins over the observed cost range, shared by all groups. Cost
// is the squared norm of the action, or delta_i^2 when feature_index is set.
Histogram cost_histograms(std::span<const RecourseAction> actions,
                          std::optional<std::size_t> feature_index, HistogramSplit split_by,
                          std::size_t bins = 20);

void save_scatter(std::span<const ScatterRow> rows, const std::filesystem::path& path);
void save_histogram(const Histogram& histogram, const std::filesystem::path& path);
void save_pca(const PcaModel& pca, const std::filesystem::path& path);

}  // namespace churnrec
