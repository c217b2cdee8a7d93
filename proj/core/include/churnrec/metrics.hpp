#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "churnrec/dataset.hpp"
#include "churnrec/forest.hpp"
#include "churnrec/nn.hpp"
#include "churnrec/recourse.hpp"

namespace churnrec {

// Exact ratio with its denominator, so reports never lose n.
struct Fraction {
  std::size_t num = 0;
  std::size_t den = 0;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Fraction&) const = default;
};

Fraction accuracy(std::span<const int> pred, std::span<const int> truth);
// Share of predictions equal to 0.
Fraction percent_denied(std::span<const int> pred);
// Share of denied users flipped to class 1; nullopt for an empty denied set.
std::optional<Fraction> percent_successful_recourse(std::span<const RecourseAction> actions);
// Mean squared cost over post_class = 1; nullopt when nobody succeeded.
std::optional<double> mean_cost_successful(std::span<const RecourseAction> actions);
// Sum of squared costs over post_class = 0.
double cumulative_cost_denied(std::span<const RecourseAction> actions);
double mean_clock_time(std::span<const std::pair<double, double>> timings);
double mean_clock_time(std::span<const RecourseAction> actions);

struct EvaluationReport {
  std::string method;  // "gan" or "rgd"
  std::size_t n_trees = 0;
  Fraction model_accuracy_all;
  Fraction model_accuracy_y0;
  // GAN rows only: real = users with y = 1, fake = produced counterfactuals.
  std::optional<Fraction> discriminator_accuracy_real;
  std::optional<Fraction> discriminator_accuracy_fake;
  // Users with y = 0 whose post-recourse features are classified 1.
  Fraction post_recourse_classifier_accuracy;
  Fraction percent_denied;
  std::optional<Fraction> percent_successful_recourse;
  std::optional<double> mean_cost_successful;
  double cumulative_cost_denied = 0.0;
  // Unsquared L2 variants of the two cost columns.
  std::optional<double> mean_l2_successful;
  double cumulative_l2_denied = 0.0;
  std::optional<double> mean_clock_time_seconds;
  std::size_t n_actions = 0;
  // Predictions whose survival curve never reached 0.5.
  std::size_t n_truncated_medians = 0;
};

// Metrics on the determinate-label users of `test`. `actions` must be the
// recourse actions for the users the classifier denies.
EvaluationReport evaluate(const ChurnClassifier& classifier, const Dataset& test,
                          std::span<const RecourseAction> actions, std::string method,
                          const nn::Mlp* discriminator = nullptr);

// Timing is volatile, so it is optional in the JSON form.
nlohmann::json to_json(const EvaluationReport& report, bool include_timing);

// Aligned text tables: accuracy table then recourse table.
std::string format_tables(std::span<const EvaluationReport> reports, bool include_timing);

}  // namespace churnrec
