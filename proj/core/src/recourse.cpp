#include "churnrec/recourse.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "churnrec/error.hpp"

namespace churnrec {

namespace {

std::string format_double(double value) {
  std::array<char, 32> buffer{};
  auto [end, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
  if (ec != std::errc{}) throw Error("failed to format number");
  return std::string(buffer.data(), end);
}

double parse_double(std::string_view cell, std::size_t row, std::size_t column) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (cell.empty() || ec != std::errc{} || ptr != cell.data() + cell.size()) {
    throw ParseError("non-numeric cell '" + std::string(cell) + "'", row, column);
  }
  return value;
}

std::vector<std::string> split_cells(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

int parse_class(std::string_view cell, std::size_t row, std::size_t column) {
  if (cell == "0") return 0;
  if (cell == "1") return 1;
  throw ParseError("class must be 0 or 1", row, column);
}

Label parse_label(std::string_view cell, std::size_t row, std::size_t column) {
  if (cell == "0") return Label::kChurned;
  if (cell == "1") return Label::kRetained;
  if (cell == "indeterminate") return Label::kIndeterminate;
  throw ParseError("invalid label", row, column);
}

// Clamp one coordinate; returns whether the raw value passed unchanged.
bool project_entry(double x, double raw, const FeatureMeta& m, double& delta, double& moved) {
  if (!std::isfinite(raw)) throw NumericalError("non-finite raw delta for '" + m.name + "'");
  bool passed = true;
  double d = raw;
  if (!m.actionable) {
    d = 0.0;
    passed = false;
  } else if (m.direction == Direction::kIncreaseOnly && d < 0.0) {
    d = 0.0;
    passed = false;
  } else if (m.direction == Direction::kDecreaseOnly && d > 0.0) {
    d = 0.0;
    passed = false;
  }
  const double target = x + d;
  const double clamped = std::clamp(target, m.lower_bound, m.upper_bound);
  if (clamped != target) passed = false;
  moved = d == 0.0 ? x : clamped;
  delta = moved - x;
  return passed;
}

}  // namespace

std::string_view to_string(RecourseMethod method) {
  return method == RecourseMethod::kGan ? "gan" : "rgd";
}

RecourseMethod parse_method(std::string_view text) {
  if (text == "gan") return RecourseMethod::kGan;
  if (text == "rgd") return RecourseMethod::kRgd;
  throw ParseError("unknown recourse method '" + std::string(text) + "'");
}

ProjectedAction project(std::span<const double> x, std::span<const double> raw_delta,
                        std::span<const FeatureMeta> constraints) {
  expect_dimension(raw_delta.size(), x.size(), "project_action delta");
  expect_dimension(constraints.size(), x.size(), "project_action constraints");
  ProjectedAction out;
  out.delta.resize(x.size());
  out.counterfactual.resize(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    project_entry(x[j], raw_delta[j], constraints[j], out.delta[j], out.counterfactual[j]);
  }
  return out;
}

std::vector<double> project_action(std::span<const double> x, std::span<const double> raw_delta,
                                   std::span<const FeatureMeta> constraints) {
  return project(x, raw_delta, constraints).delta;
}

Eigen::MatrixXd project_batch(const Eigen::MatrixXd& x, const Eigen::MatrixXd& raw_delta,
                              std::span<const FeatureMeta> constraints, Eigen::MatrixXd* pass) {
  expect_dimension(static_cast<std::size_t>(x.rows()), constraints.size(), "project_batch rows");
  if (raw_delta.rows() != x.rows() || raw_delta.cols() != x.cols()) {
    throw DimensionError("project_batch: delta shape differs from input shape");
  }
  Eigen::MatrixXd counterfactual(x.rows(), x.cols());
  if (pass) pass->resize(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      double delta = 0.0;
      double moved = 0.0;
      const bool passed = project_entry(x(r, c), raw_delta(r, c),
                                        constraints[static_cast<std::size_t>(r)], delta, moved);
      counterfactual(r, c) = moved;
      if (pass) (*pass)(r, c) = passed ? 1.0 : 0.0;
    }
  }
  return counterfactual;
}

double squared_norm(std::span<const double> v) {
  double total = 0.0;
  for (double d : v) total += d * d;
  return total;
}

std::vector<ConstraintViolation> check_constraints(std::span<const double> original,
                                                   std::span<const double> edited,
                                                   std::span<const FeatureMeta> constraints) {
  expect_dimension(edited.size(), original.size(), "check_constraints");
  expect_dimension(constraints.size(), original.size(), "check_constraints constraints");
  std::vector<ConstraintViolation> out;
  for (std::size_t j = 0; j < original.size(); ++j) {
    const auto& m = constraints[j];
    const double d = edited[j] - original[j];
    if (!m.actionable && d != 0.0) out.push_back({j, "not_actionable"});
    if (m.direction == Direction::kIncreaseOnly && d < 0.0) out.push_back({j, "increase_only"});
    if (m.direction == Direction::kDecreaseOnly && d > 0.0) out.push_back({j, "decrease_only"});
    if (edited[j] < m.lower_bound || edited[j] > m.upper_bound) {
      out.push_back({j, "out_of_bounds"});
    }
  }
  return out;
}

void save_actions(std::span<const RecourseAction> actions, std::span<const FeatureMeta> meta,
                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "user_id,method,true_label,pre_class,post_class,cost_sq,steps";
  for (const char* prefix : {"x:", "delta:", "cf:"}) {
    for (const auto& m : meta) out << ',' << prefix << m.name;
  }
  out << '\n';
  for (const auto& a : actions) {
    expect_dimension(a.original.size(), meta.size(), "save_actions");
    out << a.user_id << ',' << to_string(a.method) << ',' << to_string(a.true_label) << ','
        << a.pre_class << ',' << a.post_class << ',' << format_double(a.cost_sq) << ','
        << a.steps;
    for (const auto* v : {&a.original, &a.delta, &a.counterfactual}) {
      for (double x : *v) out << ',' << format_double(x);
    }
    out << '\n';
  }
}

std::vector<RecourseAction> load_actions(const std::filesystem::path& path,
                                         std::span<const FeatureMeta> meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open actions file " + path.string());
  const std::size_t f = meta.size();
  std::string line;
  std::size_t row = 0;
  if (!std::getline(in, line)) throw ParseError("actions file is empty", 1);
  ++row;
  if (split_cells(line).size() != 7 + 3 * f) {
    throw ParseError("actions header does not match the feature meta", row);
  }
  std::vector<RecourseAction> actions;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split_cells(line);
    if (cells.size() != 7 + 3 * f) throw ParseError("wrong number of cells", row);
    RecourseAction a;
    a.user_id = cells[0];
    a.method = parse_method(cells[1]);
    a.true_label = parse_label(cells[2], row, 3);
    a.pre_class = parse_class(cells[3], row, 4);
    a.post_class = parse_class(cells[4], row, 5);
    a.cost_sq = parse_double(cells[5], row, 6);
    a.steps = static_cast<std::size_t>(parse_double(cells[6], row, 7));
    a.original.resize(f);
    a.delta.resize(f);
    a.counterfactual.resize(f);
    for (std::size_t j = 0; j < f; ++j) {
      a.original[j] = parse_double(cells[7 + j], row, 8 + j);
      a.delta[j] = parse_double(cells[7 + f + j], row, 8 + f + j);
      a.counterfactual[j] = parse_double(cells[7 + 2 * f + j], row, 8 + 2 * f + j);
    }
    actions.push_back(std::move(a));
  }
  return actions;
}

void save_timings(std::span<const RecourseAction> actions, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "user_id,method,start_seconds,end_seconds,steps\n";
  for (const auto& a : actions) {
    out << a.user_id << ',' << to_string(a.method) << ',' << format_double(a.start_seconds) << ','
        << format_double(a.end_seconds) << ',' << a.steps << '\n';
  }
}

void load_timings(std::vector<RecourseAction>& actions, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open timings file " + path.string());
  std::unordered_map<std::string, std::pair<double, double>> by_user;
  std::string line;
  std::size_t row = 0;
  std::getline(in, line);
  ++row;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto cells = split_cells(line);
    if (cells.size() != 5) throw ParseError("wrong number of timing cells", row);
    by_user[cells[0]] = {parse_double(cells[2], row, 3), parse_double(cells[3], row, 4)};
  }
  for (auto& a : actions) {
    const auto it = by_user.find(a.user_id);
    if (it == by_user.end()) throw ParseError("no timing row for user '" + a.user_id + "'");
    a.start_seconds = it->second.first;
    a.end_seconds = it->second.second;
  }
}

}  // namespace churnrec
