#include "churnrec/rgd.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "churnrec/error.hpp"
#include "churnrec/rng.hpp"

namespace churnrec {

void RgdConfig::validate() const {
  if (max_steps < 1) throw ConfigError("rgd max_steps must be at least 1");
  if (!(fd_epsilon > 0.0)) throw ConfigError("rgd fd_epsilon must be positive");
  if (!(step_size > 0.0)) throw ConfigError("rgd step_size must be positive");
  if (!(max_step > 0.0)) throw ConfigError("rgd max_step must be positive");
  if (!(lambda_distance >= 0.0)) throw ConfigError("rgd lambda_distance must be non-negative");
  if (!(restart_radius >= 0.0)) throw ConfigError("rgd restart_radius must be non-negative");
}

RecourseAction rgd_counterfactual(const ChurnClassifier& classifier, std::span<const double> x,
                                  std::span<const FeatureMeta> constraints, const RgdConfig& cfg,
                                  std::string user_id) {
  cfg.validate();
  const std::size_t f = x.size();
  expect_dimension(f, classifier.num_features(), "rgd input");
  expect_dimension(constraints.size(), f, "rgd constraints");
  if (classifier.classify(x) != 0) {
    throw PreconditionError("recourse not applicable: user is already predicted to be retained");
  }

  RecourseAction action;
  action.method = RecourseMethod::kRgd;
  action.original.assign(x.begin(), x.end());
  action.pre_class = 0;

  std::vector<std::size_t> movable;
  for (std::size_t j = 0; j < f; ++j) {
    if (constraints[j].actionable) movable.push_back(j);
  }

  Rng rng(derive_seed(cfg.seed, user_id));
  const auto start = std::chrono::steady_clock::now();

  std::vector<double> current(x.begin(), x.end());
  std::vector<double> probe(current);
  std::vector<double> grad(f, 0.0);
  std::vector<double> raw(f, 0.0);
  std::size_t restarts = 0;
  std::size_t steps = 0;
  int post_class = 0;

  auto move_to = [&](const std::vector<double>& raw_delta) {
    auto projected = project(x, raw_delta, constraints);
    current = std::move(projected.counterfactual);
  };

  if (cfg.on_iterate) cfg.on_iterate(0, current);
  while (steps < cfg.max_steps) {
    const double score = classifier.class_score(current);
    const double hinge = std::max(0.0, cfg.target_score - score);
    double distance = 0.0;
    for (std::size_t j = 0; j < f; ++j) distance += (current[j] - x[j]) * (current[j] - x[j]);
    if (!std::isfinite(hinge * hinge + cfg.lambda_distance * distance)) break;

    bool flat = true;
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t j : movable) {
      double score_grad = 0.0;
      if (hinge > 0.0) {
        const auto& m = constraints[j];
        const double hi = std::min(current[j] + cfg.fd_epsilon, m.upper_bound);
        const double lo = std::max(current[j] - cfg.fd_epsilon, m.lower_bound);
        if (hi > lo) {
          probe[j] = hi;
          const double up = classifier.class_score(probe);
          probe[j] = lo;
          const double down = classifier.class_score(probe);
          probe[j] = current[j];
          score_grad = (up - down) / (hi - lo);
        }
      }
      grad[j] = -2.0 * hinge * score_grad + 2.0 * cfg.lambda_distance * (current[j] - x[j]);
      if (grad[j] != 0.0) flat = false;
    }

    ++steps;
    if (flat) {
      // Nothing would move the iterate; jump or give up.
      if (restarts == cfg.max_restarts) break;
      ++restarts;
      for (std::size_t j = 0; j < f; ++j) {
        raw[j] = current[j] - x[j] + rng.uniform(-cfg.restart_radius, cfg.restart_radius);
      }
    } else {
      for (std::size_t j = 0; j < f; ++j) {
        const double step = std::clamp(cfg.step_size * grad[j], -cfg.max_step, cfg.max_step);
        raw[j] = current[j] - x[j] - step;
      }
    }
    move_to(raw);
    probe = current;
    if (cfg.on_iterate) cfg.on_iterate(steps, current);
    if (classifier.classify(current) == 1) {
      post_class = 1;
      break;
    }
  }

  const auto end = std::chrono::steady_clock::now();
  action.user_id = std::move(user_id);
  action.counterfactual = current;
  action.delta.resize(f);
  for (std::size_t j = 0; j < f; ++j) action.delta[j] = current[j] - x[j];
  action.cost_sq = squared_norm(action.delta);
  action.post_class = post_class;
  action.steps = steps;
  action.end_seconds = std::chrono::duration<double>(end - start).count();
  return action;
}

std::vector<RecourseAction> rgd_recourse_batch(const ChurnClassifier& classifier,
                                               const Dataset& data, const RgdConfig& cfg) {
  std::vector<RecourseAction> actions;
  const auto batch_start = std::chrono::steady_clock::now();
  for (const auto& r : data.records) {
    if (classifier.classify(r.features) != 0) continue;
    const double offset =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - batch_start).count();
    RecourseAction action = rgd_counterfactual(classifier, r.features, data.meta, cfg, r.user_id);
    action.start_seconds += offset;
    action.end_seconds += offset;
    action.true_label = r.label;
    actions.push_back(std::move(action));
  }
  return actions;
}

}  // namespace churnrec
