#pragma once

#include <cstddef>
#include <vector>

#include "churnrec/dataset.hpp"
#include "churnrec/forest.hpp"
#include "churnrec/rng.hpp"
#include "churnrec/survival.hpp"

namespace churnrec::testing {

// Curve with every subject dying at `death_day`: S = 1 before, 0 from then on.
inline SurvivalCurve step_curve(double death_day) {
  return SurvivalCurve{{death_day}, {0.0}};
}

// One tree with a single split: x[feature] <= threshold -> churn leaf (all
// deaths at day 30), otherwise a retained leaf (S stays 1 through day 365).
inline SurvivalTree one_split_tree(std::size_t feature = 0, double threshold = 0.5) {
  SurvivalTree::Leaf churn{step_curve(30.0), 10, 0.0, 0.0};
  SurvivalTree::Leaf retained{SurvivalCurve{{365.0}, {1.0}}, 10, 0.0, 0.0};
  std::vector<SurvivalTree::Node> nodes = {
      {static_cast<std::int32_t>(feature), threshold, 1, 2, -1},
      {-1, 0.0, -1, -1, 0},
      {-1, 0.0, -1, -1, 1},
  };
  return SurvivalTree(std::move(nodes), {churn, retained});
}

inline ChurnClassifier one_split_forest(std::size_t n_features, std::size_t feature = 0,
                                        double threshold = 0.5) {
  return ChurnClassifier({one_split_tree(feature, threshold)}, n_features);
}

// Free, actionable features on [0, 1] unless changed by the caller.
inline std::vector<FeatureMeta> plain_meta(std::size_t n) {
  std::vector<FeatureMeta> meta(n);
  for (std::size_t j = 0; j < n; ++j) meta[j].name = "f" + std::to_string(j);
  return meta;
}

inline std::vector<double> random_point(Rng& rng, const std::vector<FeatureMeta>& meta) {
  std::vector<double> x(meta.size());
  for (std::size_t j = 0; j < meta.size(); ++j) {
    x[j] = rng.uniform(meta[j].lower_bound, meta[j].upper_bound);
  }
  return x;
}

// A small synthetic training split; shared by the heavier model tests.
inline Dataset small_panel(std::uint64_t seed, std::size_t users = 600) {
  SynthConfig config;
  config.n_users = users;
  config.seed = seed;
  return synthesize(config);
}

}  // namespace churnrec::testing
