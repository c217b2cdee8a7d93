#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "churnrec/dataset.hpp"
#include "churnrec/survival.hpp"

namespace churnrec {

struct ForestConfig {
  std::size_t n_trees = 20;
  std::size_t min_leaf_size = 10;
  // 0 selects ceil(sqrt(F)).
  std::size_t features_per_split = 0;
  std::uint64_t seed = 0;
  // Trees own independent seeded streams, so the result does not depend on this.
  std::size_t n_threads = 1;
};

struct Split {
  std::size_t feature = 0;
  // Rows with x[feature] <= threshold go left.
  double threshold = 0.0;
  double statistic = 0.0;
  std::size_t left_size = 0;
  std::size_t right_size = 0;
};

// Best log-rank split of `rows` (indices into data.records, duplicates
// allowed) over the candidate features. Thresholds are midpoints between
// consecutive distinct values and both children keep >= min_leaf_size rows.
// Ties keep the lowest feature index, then the smallest threshold. Returns
// nullopt when no admissible split has a positive statistic.
std::optional<Split> find_best_split(const Dataset& data, std::span<const std::size_t> rows,
                                     std::span<const std::size_t> candidate_features,
                                     std::size_t min_leaf_size);

class SurvivalTree {
 public:
  struct Node {
    std::int32_t feature = -1;
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::int32_t leaf = -1;

    bool is_leaf() const { return leaf >= 0; }
    bool operator==(const Node&) const = default;
  };

  struct Leaf {
    SurvivalCurve curve;
    std::size_t size = 0;
    // Cached for the classifier's threshold: S(threshold-) and the last grid time.
    double score_part = 0.0;
    double last_time = 0.0;
  };

  SurvivalTree() = default;
  // Node 0 is the root. Throws ConfigError on malformed topology.
  SurvivalTree(std::vector<Node> nodes, std::vector<Leaf> leaves);

  const Leaf& leaf_for(std::span<const double> x) const;
  void cache_threshold(double threshold_days);

  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<Leaf>& leaves() const { return leaves_; }
  std::size_t max_feature_index() const;

  bool operator==(const SurvivalTree& other) const;

 private:
  std::vector<Node> nodes_;
  std::vector<Leaf> leaves_;
};

// Fits one tree on the given rows (a bootstrap sample in the forest).
SurvivalTree fit_tree(const Dataset& data, std::span<const std::size_t> rows,
                      std::size_t min_leaf_size, std::size_t features_per_split,
                      std::uint64_t seed);

// Survival forest binarized at threshold_days: class 1 iff the predicted
// median lifetime is at least the threshold.
class ChurnClassifier {
 public:
  ChurnClassifier(std::vector<SurvivalTree> trees, std::size_t n_features,
                  double threshold_days = kDefaultThresholdDays);

  SurvivalCurve predict_curve(std::span<const double> x) const;
  MedianLifetime predict_median(std::span<const double> x) const;
  double predict_lifetime(std::span<const double> x) const { return predict_median(x).days; }
  int classify(std::span<const double> x) const;
  // Ensemble S(threshold-) from cached leaf values; equals
  // score_at_threshold(predict_curve(x), threshold_days()).
  double class_score(std::span<const double> x) const;

  std::size_t num_trees() const { return trees_.size(); }
  std::size_t num_features() const { return n_features_; }
  double threshold_days() const { return threshold_days_; }
  const std::vector<SurvivalTree>& trees() const { return trees_; }

  nlohmann::json to_json() const;
  static ChurnClassifier from_json(const nlohmann::json& doc);

  bool operator==(const ChurnClassifier& other) const;

 private:
  void check_dimension(std::span<const double> x) const;

  std::vector<SurvivalTree> trees_;
  std::size_t n_features_ = 0;
  double threshold_days_ = kDefaultThresholdDays;
};

ChurnClassifier fit_forest(const Dataset& data, const ForestConfig& config);

int classify_lifetime(double predicted_days, double threshold_days);

}  // namespace churnrec
