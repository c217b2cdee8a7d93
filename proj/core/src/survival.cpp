#include "churnrec/survival.hpp"

#include <algorithm>
#include <cmath>

#include "churnrec/error.hpp"

namespace churnrec {

double SurvivalCurve::at(double t) const {
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return probs[static_cast<std::size_t>(it - times.begin()) - 1];
}

double SurvivalCurve::left_limit(double t) const {
  const auto it = std::lower_bound(times.begin(), times.end(), t);
  if (it == times.begin()) return 1.0;
  return probs[static_cast<std::size_t>(it - times.begin()) - 1];
}

SurvivalCurve km_estimate(std::span<const Observation> observations) {
  if (observations.empty()) throw PreconditionError("km_estimate: empty input");
  std::vector<Observation> sorted(observations.begin(), observations.end());
  for (const auto& o : sorted) {
    if (!(o.time >= 0.0) || !std::isfinite(o.time)) {
      throw PreconditionError("km_estimate: times must be finite and non-negative");
    }
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const Observation& a, const Observation& b) { return a.time < b.time; });

  SurvivalCurve curve;
  double survival = 1.0;
  std::size_t at_risk = sorted.size();
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double t = sorted[i].time;
    std::size_t events = 0;
    std::size_t leaving = 0;
    while (i < sorted.size() && sorted[i].time == t) {
      events += sorted[i].event ? 1 : 0;
      ++leaving;
      ++i;
    }
    if (events > 0) {
      survival *= 1.0 - static_cast<double>(events) / static_cast<double>(at_risk);
    }
    curve.times.push_back(t);
    curve.probs.push_back(survival);
    at_risk -= leaving;
  }
  return curve;
}

double logrank_statistic(std::span<const Observation> group_a,
                         std::span<const Observation> group_b) {
  if (group_a.empty() || group_b.empty()) {
    throw PreconditionError("logrank_statistic: both groups must be non-empty");
  }
  struct Tagged {
    double time;
    bool event;
    bool in_a;
  };
  std::vector<Tagged> pooled;
  pooled.reserve(group_a.size() + group_b.size());
  for (const auto& o : group_a) pooled.push_back({o.time, o.event, true});
  for (const auto& o : group_b) pooled.push_back({o.time, o.event, false});
  std::sort(pooled.begin(), pooled.end(),
            [](const Tagged& x, const Tagged& y) { return x.time < y.time; });

  double at_risk = static_cast<double>(pooled.size());
  double at_risk_a = static_cast<double>(group_a.size());
  double observed_minus_expected = 0.0;
  double variance = 0.0;
  std::size_t i = 0;
  while (i < pooled.size()) {
    const double t = pooled[i].time;
    double deaths = 0.0;
    double deaths_a = 0.0;
    double leaving = 0.0;
    double leaving_a = 0.0;
    while (i < pooled.size() && pooled[i].time == t) {
      if (pooled[i].event) {
        deaths += 1.0;
        if (pooled[i].in_a) deaths_a += 1.0;
      }
      leaving += 1.0;
      if (pooled[i].in_a) leaving_a += 1.0;
      ++i;
    }
    if (deaths > 0.0) {
      const double share = at_risk_a / at_risk;
      observed_minus_expected += deaths_a - deaths * share;
      if (at_risk > 1.0) {
        variance += deaths * share * (1.0 - share) * (at_risk - deaths) / (at_risk - 1.0);
      }
    }
    at_risk -= leaving;
    at_risk_a -= leaving_a;
  }
  if (!(variance > 0.0)) return 0.0;
  return observed_minus_expected * observed_minus_expected / variance;
}

SurvivalCurve average_curves(std::span<const SurvivalCurve* const> curves) {
  if (curves.empty()) throw PreconditionError("average_curves: no curves");
  if (curves.size() == 1) return *curves.front();

  std::vector<double> grid;
  for (const auto* c : curves) grid.insert(grid.end(), c->times.begin(), c->times.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  SurvivalCurve out;
  out.times = grid;
  out.probs.assign(grid.size(), 0.0);
  // Walk each curve once alongside the grid.
  for (const auto* c : curves) {
    std::size_t k = 0;
    double value = 1.0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      while (k < c->times.size() && c->times[k] <= grid[g]) value = c->probs[k++];
      out.probs[g] += value;
    }
  }
  const double scale = 1.0 / static_cast<double>(curves.size());
  for (double& p : out.probs) p *= scale;
  return out;
}

MedianLifetime median_lifetime(const SurvivalCurve& curve) {
  if (curve.empty()) throw PreconditionError("median_lifetime: empty curve");
  for (std::size_t k = 0; k < curve.times.size(); ++k) {
    if (curve.probs[k] <= 0.5) return {curve.times[k], false};
  }
  return {curve.times.back(), true};
}

double score_at_threshold(const SurvivalCurve& curve, double threshold_days) {
  if (curve.empty()) throw PreconditionError("score_at_threshold: empty curve");
  if (curve.times.back() < threshold_days) return 0.0;
  return curve.left_limit(threshold_days);
}

}  // namespace churnrec
