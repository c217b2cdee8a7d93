#include "churnrec/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_map>

#include "churnrec/error.hpp"

namespace churnrec {

namespace {

void check_binary(int v) {
  if (v != 0 && v != 1) throw PreconditionError("labels must be 0 or 1");
}

std::string fixed(double value, int digits) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.*f", digits, value);
  return buffer;
}

nlohmann::json fraction_json(const Fraction& f) {
  return {{"num", f.num}, {"den", f.den}, {"value", f.den == 0 ? 0.0 : f.value()}};
}

nlohmann::json optional_fraction_json(const std::optional<Fraction>& f) {
  return f ? fraction_json(*f) : nlohmann::json(nullptr);
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string render(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> widths;
  for (const auto& row : rows) {
    widths.resize(std::max(widths.size(), row.size()), 0);
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
  }
  std::string out;
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      line += row[c];
      if (c + 1 < row.size()) line += std::string(widths[c] - row[c].size() + 2, ' ');
    }
    out += line + '\n';
  }
  return out;
}

}  // namespace

Fraction accuracy(std::span<const int> pred, std::span<const int> truth) {
  if (pred.empty()) throw PreconditionError("accuracy of an empty list");
  expect_dimension(truth.size(), pred.size(), "accuracy truth");
  Fraction f{0, pred.size()};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    check_binary(pred[i]);
    check_binary(truth[i]);
    f.num += pred[i] == truth[i] ? 1 : 0;
  }
  return f;
}

Fraction percent_denied(std::span<const int> pred) {
  if (pred.empty()) throw PreconditionError("percent_denied of an empty list");
  Fraction f{0, pred.size()};
  for (int p : pred) {
    check_binary(p);
    f.num += p == 0 ? 1 : 0;
  }
  return f;
}

std::optional<Fraction> percent_successful_recourse(std::span<const RecourseAction> actions) {
  if (actions.empty()) return std::nullopt;
  Fraction f{0, actions.size()};
  for (const auto& a : actions) {
    if (a.pre_class != 0) throw PreconditionError("recourse metrics take denied users only");
    f.num += a.post_class == 1 ? 1 : 0;
  }
  return f;
}

std::optional<double> mean_cost_successful(std::span<const RecourseAction> actions) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& a : actions) {
    if (a.post_class != 1) continue;
    total += a.cost_sq;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return total / static_cast<double>(n);
}

double cumulative_cost_denied(std::span<const RecourseAction> actions) {
  double total = 0.0;
  for (const auto& a : actions) {
    if (a.post_class == 0) total += a.cost_sq;
  }
  return total;
}

double mean_clock_time(std::span<const std::pair<double, double>> timings) {
  if (timings.empty()) throw PreconditionError("mean_clock_time of an empty list");
  double total = 0.0;
  for (const auto& [start, end] : timings) {
    if (end < start) throw PreconditionError("timing row ends before it starts");
    total += end - start;
  }
  return total / static_cast<double>(timings.size());
}

double mean_clock_time(std::span<const RecourseAction> actions) {
  std::vector<std::pair<double, double>> timings;
  timings.reserve(actions.size());
  for (const auto& a : actions) timings.emplace_back(a.start_seconds, a.end_seconds);
  return mean_clock_time(timings);
}

EvaluationReport evaluate(const ChurnClassifier& classifier, const Dataset& test,
                          std::span<const RecourseAction> actions, std::string method,
                          const nn::Mlp* discriminator) {
  const Dataset binary = binary_subset(test);
  if (binary.records.empty()) throw PreconditionError("no users with a determinate label");

  EvaluationReport report;
  report.method = std::move(method);
  report.n_trees = classifier.num_trees();
  report.n_actions = actions.size();

  std::unordered_map<std::string, const RecourseAction*> by_user;
  for (const auto& a : actions) by_user.emplace(a.user_id, &a);

  std::vector<int> pred;
  std::vector<int> truth;
  std::vector<int> pred_y0;
  std::vector<int> truth_y0;
  Fraction post{0, 0};
  std::vector<const std::vector<double>*> retained;
  for (const auto& r : binary.records) {
    const MedianLifetime median = classifier.predict_median(r.features);
    const int p = classify_lifetime(median.days, classifier.threshold_days());
    report.n_truncated_medians += median.truncated ? 1 : 0;
    const int y = r.label == Label::kRetained ? 1 : 0;
    pred.push_back(p);
    truth.push_back(y);
    if (y == 1) retained.push_back(&r.features);
    if (y == 0) {
      pred_y0.push_back(p);
      truth_y0.push_back(0);
      int after = p;
      if (p == 0) {
        const auto it = by_user.find(r.user_id);
        if (it == by_user.end()) {
          throw PreconditionError("no recourse action for denied user '" + r.user_id + "'");
        }
        after = it->second->post_class;
      }
      ++post.den;
      post.num += after == 1 ? 1 : 0;
    }
  }
  report.model_accuracy_all = accuracy(pred, truth);
  if (!pred_y0.empty()) report.model_accuracy_y0 = accuracy(pred_y0, truth_y0);
  report.post_recourse_classifier_accuracy = post;
  report.percent_denied = percent_denied(pred);

  report.percent_successful_recourse = percent_successful_recourse(actions);
  report.mean_cost_successful = mean_cost_successful(actions);
  report.cumulative_cost_denied = cumulative_cost_denied(actions);
  double l2_success = 0.0;
  std::size_t n_success = 0;
  for (const auto& a : actions) {
    const double l2 = std::sqrt(a.cost_sq);
    if (a.post_class == 1) {
      l2_success += l2;
      ++n_success;
    } else {
      report.cumulative_l2_denied += l2;
    }
  }
  if (n_success > 0) report.mean_l2_successful = l2_success / static_cast<double>(n_success);
  if (!actions.empty()) report.mean_clock_time_seconds = mean_clock_time(actions);

  if (discriminator != nullptr) {
    Fraction real{0, retained.size()};
    for (const auto* x : retained) {
      const Eigen::VectorXd v =
          Eigen::Map<const Eigen::VectorXd>(x->data(), static_cast<Eigen::Index>(x->size()));
      real.num += discriminator->forward(v)(0) >= 0.5 ? 1 : 0;
    }
    Fraction fake{0, actions.size()};
    for (const auto& a : actions) {
      const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(
          a.counterfactual.data(), static_cast<Eigen::Index>(a.counterfactual.size()));
      fake.num += discriminator->forward(v)(0) < 0.5 ? 1 : 0;
    }
    if (real.den > 0) report.discriminator_accuracy_real = real;
    if (fake.den > 0) report.discriminator_accuracy_fake = fake;
  }
  return report;
}

nlohmann::json to_json(const EvaluationReport& r, bool include_timing) {
  nlohmann::json doc = {
      {"method", r.method},
      {"n_trees", r.n_trees},
      {"model_accuracy_all", fraction_json(r.model_accuracy_all)},
      {"model_accuracy_y0", fraction_json(r.model_accuracy_y0)},
      {"discriminator_accuracy_real", optional_fraction_json(r.discriminator_accuracy_real)},
      {"discriminator_accuracy_fake", optional_fraction_json(r.discriminator_accuracy_fake)},
      {"post_recourse_classifier_accuracy", fraction_json(r.post_recourse_classifier_accuracy)},
      {"percent_denied", fraction_json(r.percent_denied)},
      {"percent_successful_recourse", optional_fraction_json(r.percent_successful_recourse)},
      {"mean_cost_successful", optional_json(r.mean_cost_successful)},
      {"cumulative_cost_denied", r.cumulative_cost_denied},
      {"mean_l2_successful", optional_json(r.mean_l2_successful)},
      {"cumulative_l2_denied", r.cumulative_l2_denied},
      {"n_actions", r.n_actions},
      {"n_truncated_medians", r.n_truncated_medians}};
  if (include_timing) doc["mean_clock_time_seconds"] = optional_json(r.mean_clock_time_seconds);
  return doc;
}

std::string format_tables(std::span<const EvaluationReport> reports, bool include_timing) {
  auto frac = [](const std::optional<Fraction>& f) {
    return f && f->den > 0 ? fixed(f->value(), 3) : std::string("-");
  };
  auto percent = [](const std::optional<Fraction>& f) {
    return f && f->den > 0 ? fixed(100.0 * f->value(), 1) + "%" : std::string("n/a");
  };

  std::vector<std::vector<std::string>> accuracy_rows = {
      {"Counterfactual model", "Trees", "Initial accuracy (all / y=0)",
       "Discriminator accuracy (D(x) / D(x+a))", "Post-recourse classifier accuracy"}};
  std::vector<std::vector<std::string>> recourse_rows = {
      {"Counterfactual model", "Trees", "% Denied (C=0)", "% Successful recourse (C=1)",
       "Mean cost of successful", "Cumulative cost of denied", "Mean compute time (s)"}};
  for (const auto& r : reports) {
    const std::string name = "via " + std::string(r.method == "gan" ? "GANs" : "RGD");
    const std::string disc =
        r.discriminator_accuracy_real || r.discriminator_accuracy_fake
            ? frac(r.discriminator_accuracy_real) + " / " + frac(r.discriminator_accuracy_fake)
            : "-";
    accuracy_rows.push_back({name, std::to_string(r.n_trees),
                             frac(r.model_accuracy_all) + " / " + frac(r.model_accuracy_y0), disc,
                             frac(r.post_recourse_classifier_accuracy)});
    std::string timing = "-";
    if (include_timing && r.mean_clock_time_seconds) {
      char buffer[32];
      std::snprintf(buffer, sizeof(buffer), "%.3g", *r.mean_clock_time_seconds);
      timing = buffer;
    }
    recourse_rows.push_back(
        {name, std::to_string(r.n_trees), percent(r.percent_denied),
         percent(r.percent_successful_recourse),
         r.mean_cost_successful ? fixed(*r.mean_cost_successful, 4) : std::string("n/a"),
         fixed(r.cumulative_cost_denied, 2), timing});
  }
  return render(accuracy_rows) + '\n' + render(recourse_rows);
}

}  // namespace churnrec
