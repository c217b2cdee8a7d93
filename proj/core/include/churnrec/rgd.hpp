#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "churnrec/dataset.hpp"
#include "churnrec/forest.hpp"
#include "churnrec/recourse.hpp"

namespace churnrec {

// Regularized gradient descent against the black-box forest score:
//   L(x') = max(0, target - score(x'))^2 + lambda * ||x' - x||^2
// with central finite differences for the score term.
struct RgdConfig {
  std::size_t max_steps = 1000;
  double step_size = 0.05;
  // Per-coordinate cap on one step. Differences across a split are steep
  // (score jump / 2 epsilon), so unclipped steps land on the bounds.
  double max_step = 0.05;
  double lambda_distance = 0.1;
  double fd_epsilon = 1e-3;
  double target_score = 0.5;
  std::uint64_t seed = 0;
  // Random jumps allowed when the whole gradient vanishes.
  std::size_t max_restarts = 3;
  double restart_radius = 0.1;
  // Observer for each iterate, starting with iterate 0 (= x); not serialized.
  std::function<void(std::size_t step, std::span<const double> iterate)> on_iterate;

  void validate() const;
};

// Throws PreconditionError when x is already class 1. Deterministic per
// (cfg.seed, user_id). end_seconds - start_seconds covers the whole search.
RecourseAction rgd_counterfactual(const ChurnClassifier& classifier, std::span<const double> x,
                                  std::span<const FeatureMeta> constraints, const RgdConfig& cfg,
                                  std::string user_id = {});

// Every denied user in data, sequentially, with batch-relative timings.
std::vector<RecourseAction> rgd_recourse_batch(const ChurnClassifier& classifier,
                                               const Dataset& data, const RgdConfig& cfg);

}  // namespace churnrec
