#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "churnrec/dataset.hpp"

namespace churnrec {

enum class RecourseMethod { kGan, kRgd };

std::string_view to_string(RecourseMethod method);
RecourseMethod parse_method(std::string_view text);

struct RecourseAction {
  std::string user_id;
  RecourseMethod method = RecourseMethod::kGan;
  std::vector<double> original;
  std::vector<double> delta;
  // Projected point, clamped into bounds; equals original + delta up to one ulp.
  std::vector<double> counterfactual;
  int pre_class = 0;
  int post_class = 0;
  double cost_sq = 0.0;
  // Observed outcome of the user, carried for audits.
  Label true_label = Label::kIndeterminate;
  // Search iterations (RGD); 1 for a generator pass.
  std::size_t steps = 0;
  // Seconds relative to the start of the batch.
  double start_seconds = 0.0;
  double end_seconds = 0.0;

  double seconds() const { return end_seconds - start_seconds; }
};

struct ProjectedAction {
  std::vector<double> delta;
  std::vector<double> counterfactual;
};

// Zeroes non-actionable entries, clamps directional entries to their sign,
// then clamps x + delta into [lower_bound, upper_bound]. x must lie within
// its bounds.
ProjectedAction project(std::span<const double> x, std::span<const double> raw_delta,
                        std::span<const FeatureMeta> constraints);
std::vector<double> project_action(std::span<const double> x, std::span<const double> raw_delta,
                                   std::span<const FeatureMeta> constraints);

// Batched projection (one sample per column). `pass` receives 1 where the raw
// delta passed through unchanged and 0 where it was masked or clamped, which is
// the Jacobian of the projection.
Eigen::MatrixXd project_batch(const Eigen::MatrixXd& x, const Eigen::MatrixXd& raw_delta,
                              std::span<const FeatureMeta> constraints, Eigen::MatrixXd* pass);

double squared_norm(std::span<const double> v);

struct ConstraintViolation {
  std::size_t feature = 0;
  std::string kind;  // not_actionable | increase_only | decrease_only | out_of_bounds
};

// Violations of moving from `original` to `edited`.
std::vector<ConstraintViolation> check_constraints(std::span<const double> original,
                                                   std::span<const double> edited,
                                                   std::span<const FeatureMeta> constraints);

// Actions file: one row per action with originals, deltas, and counterfactuals.
void save_actions(std::span<const RecourseAction> actions, std::span<const FeatureMeta> meta,
                  const std::filesystem::path& path);
std::vector<RecourseAction> load_actions(const std::filesystem::path& path,
                                         std::span<const FeatureMeta> meta);
// Per-user wall-clock rows, kept apart from the deterministic actions file.
void save_timings(std::span<const RecourseAction> actions, const std::filesystem::path& path);
void load_timings(std::vector<RecourseAction>& actions, const std::filesystem::path& path);

}  // namespace churnrec
