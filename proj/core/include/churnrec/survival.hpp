#pragma once

#include <span>
#include <vector>

namespace churnrec {

struct Observation {
  double time = 0.0;
  // true = event observed, false = right-censored.
  bool event = false;
};

// Right-continuous step function. S(t) = 1 before times.front(), and
// probs[k] on [times[k], times[k+1]).
struct SurvivalCurve {
  std::vector<double> times;
  std::vector<double> probs;

  bool empty() const { return times.empty(); }

  // Value at the largest grid time <= t.
  double at(double t) const;
  // Left limit S(t-): value at the largest grid time < t.
  double left_limit(double t) const;

  bool operator==(const SurvivalCurve&) const = default;
};

// Product-limit estimator. The grid holds every distinct observed time;
// censoring-only times carry the running value unchanged.
SurvivalCurve km_estimate(std::span<const Observation> observations);

// Squared standardized two-sample log-rank statistic (chi-square form).
// Returns 0 when the hypergeometric variance vanishes.
double logrank_statistic(std::span<const Observation> group_a,
                         std::span<const Observation> group_b);

// Pointwise mean of step curves on the union of their grids.
SurvivalCurve average_curves(std::span<const SurvivalCurve* const> curves);

struct MedianLifetime {
  double days = 0.0;
  // The curve never reached 0.5; days is the largest grid time instead.
  bool truncated = false;
};

// Smallest grid time with S(t) <= 0.5, else the largest grid time.
MedianLifetime median_lifetime(const SurvivalCurve& curve);

// S(threshold-), or 0 when follow-up on the grid ends before the threshold.
// Positive class iff score > 0.5, which coincides with median >= threshold.
double score_at_threshold(const SurvivalCurve& curve, double threshold_days);

}  // namespace churnrec
