#include "churnrec/audit.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>

#include <Eigen/Eigenvalues>

#include "churnrec/error.hpp"

namespace churnrec {

namespace {

std::string format_double(double value) {
  std::array<char, 32> buffer{};
  auto [end, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
  if (ec != std::errc{}) throw Error("failed to format number");
  return std::string(buffer.data(), end);
}

std::vector<double> to_vector(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

}  // namespace

Eigen::VectorXd PcaModel::project(std::span<const double> x) const {
  expect_dimension(x.size(), static_cast<std::size_t>(mean.size()), "pca input");
  const Eigen::Map<const Eigen::VectorXd> v(x.data(), static_cast<Eigen::Index>(x.size()));
  return components * (v - mean);
}

nlohmann::json PcaModel::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < components.rows(); ++r) {
    rows.push_back(to_vector(components.row(r).transpose()));
  }
  return {{"format", "churnrec.pca"},
          {"version", 1},
          {"mean", to_vector(mean)},
          {"components", rows},
          {"eigenvalues", to_vector(eigenvalues)},
          {"explained_variance_share", to_vector(explained_variance_share)}};
}

PcaModel PcaModel::from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "churnrec.pca") throw ParseError("not a PCA model");
    auto vec = [](const nlohmann::json& j) {
      const auto values = j.get<std::vector<double>>();
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(
          values.data(), static_cast<Eigen::Index>(values.size())));
    };
    PcaModel pca;
    pca.mean = vec(doc.at("mean"));
    pca.eigenvalues = vec(doc.at("eigenvalues"));
    pca.explained_variance_share = vec(doc.at("explained_variance_share"));
    const auto& rows = doc.at("components");
    pca.components.resize(static_cast<Eigen::Index>(rows.size()), pca.mean.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Eigen::VectorXd row = vec(rows[r]);
      expect_dimension(static_cast<std::size_t>(row.size()),
                       static_cast<std::size_t>(pca.mean.size()), "pca component");
      pca.components.row(static_cast<Eigen::Index>(r)) = row.transpose();
    }
    return pca;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid PCA model: ") + e.what());
  }
}

PcaModel fit_pca(const Eigen::MatrixXd& data, std::size_t k) {
  if (data.rows() < 2 || data.cols() < 2) {
    throw PreconditionError("fit_pca needs at least 2 rows and 2 columns");
  }
  if (k < 1 || k > static_cast<std::size_t>(data.cols())) {
    throw ConfigError("fit_pca: component count out of range");
  }
  PcaModel pca;
  pca.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - pca.mean.transpose();
  const Eigen::MatrixXd cov =
      (centered.transpose() * centered) / static_cast<double>(data.rows() - 1);
  const double total = cov.trace();
  if (!(total > 0.0)) throw PreconditionError("fit_pca: all rows are identical");

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericalError("fit_pca: eigensolver failed");
  const auto n = cov.rows();
  const auto kk = static_cast<Eigen::Index>(k);
  pca.components.resize(kk, n);
  pca.eigenvalues.resize(kk);
  // Eigen orders eigenvalues ascending.
  for (Eigen::Index c = 0; c < kk; ++c) {
    Eigen::VectorXd v = solver.eigenvectors().col(n - 1 - c);
    Eigen::Index largest = 0;
    v.cwiseAbs().maxCoeff(&largest);
    if (v(largest) < 0.0) v = -v;
    pca.components.row(c) = v.transpose();
    pca.eigenvalues(c) = std::max(0.0, solver.eigenvalues()(n - 1 - c));
  }
  pca.explained_variance_share = pca.eigenvalues / total;
  return pca;
}

PcaModel fit_pca(std::span<const std::vector<double>> rows, std::size_t k) {
  if (rows.empty()) throw PreconditionError("fit_pca needs at least 2 rows and 2 columns");
  Eigen::MatrixXd data(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    expect_dimension(rows[r].size(), rows.front().size(), "fit_pca row");
    data.row(static_cast<Eigen::Index>(r)) =
        Eigen::Map<const Eigen::VectorXd>(rows[r].data(), data.cols()).transpose();
  }
  return fit_pca(data, k);
}

std::vector<ScatterRow> build_scatter(std::span<const RecourseAction> actions, const PcaModel& pca) {
  if (pca.components.rows() < 2) throw PreconditionError("scatter needs two components");
  std::vector<ScatterRow> rows;
  rows.reserve(2 * actions.size());
  for (const auto& a : actions) {
    const Eigen::VectorXd pre = pca.project(a.original);
    const Eigen::VectorXd post = pca.project(a.counterfactual);
    rows.push_back({a.user_id, pre(0), pre(1), "pre", a.true_label, a.post_class});
    rows.push_back({a.user_id, post(0), post(1), "post", a.true_label, a.post_class});
  }
  return rows;
}

Histogram cost_histograms(std::span<const RecourseAction> actions,
                          std::optional<std::size_t> feature_index, HistogramSplit split_by,
                          std::size_t bins) {
  if (actions.empty()) throw PreconditionError("cost_histograms of an empty action list");
  if (bins < 1) throw ConfigError("histogram needs at least one bin");

  std::vector<double> costs;
  costs.reserve(actions.size());
  for (const auto& a : actions) {
    if (feature_index) {
      if (*feature_index >= a.delta.size()) throw DimensionError("histogram feature out of range");
      costs.push_back(a.delta[*feature_index] * a.delta[*feature_index]);
    } else {
      costs.push_back(a.cost_sq);
    }
  }

  Histogram h;
  if (split_by == HistogramSplit::kEfficacy) {
    h.groups = {"effective", "ineffective"};
  } else {
    h.groups = {"y0", "y1", "indeterminate"};
  }
  auto group_of = [&](const RecourseAction& a) -> std::size_t {
    if (split_by == HistogramSplit::kEfficacy) return a.post_class == 1 ? 0 : 1;
    if (a.true_label == Label::kChurned) return 0;
    if (a.true_label == Label::kRetained) return 1;
    return 2;
  };

  const auto [min_it, max_it] = std::minmax_element(costs.begin(), costs.end());
  const double lo = *min_it;
  const double hi = *max_it > lo ? *max_it : lo + 1.0;
  const double width = (hi - lo) / static_cast<double>(bins);
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + width * static_cast<double>(b);
  h.edges[bins] = hi;
  h.counts.assign(h.groups.size(), std::vector<std::size_t>(bins, 0));
  for (std::size_t i = 0; i < costs.size(); ++i) {
    auto bin = static_cast<std::size_t>(std::floor((costs[i] - lo) / width));
    bin = std::min(bin, bins - 1);
    ++h.counts[group_of(actions[i])][bin];
  }
  if (split_by == HistogramSplit::kTrueOutcome) {
    const auto& last = h.counts.back();
    if (std::all_of(last.begin(), last.end(), [](std::size_t c) { return c == 0; })) {
      h.groups.pop_back();
      h.counts.pop_back();
    }
  }
  return h;
}

void save_scatter(std::span<const ScatterRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "user_id,pc1,pc2,phase,y,post_class\n";
  for (const auto& r : rows) {
    out << r.user_id << ',' << format_double(r.pc1) << ',' << format_double(r.pc2) << ','
        << r.phase << ',' << to_string(r.y) << ',' << r.post_class << '\n';
  }
}

void save_histogram(const Histogram& h, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "bin_lo,bin_hi,group,count\n";
  for (std::size_t g = 0; g < h.groups.size(); ++g) {
    for (std::size_t b = 0; b + 1 < h.edges.size(); ++b) {
      out << format_double(h.edges[b]) << ',' << format_double(h.edges[b + 1]) << ','
          << h.groups[g] << ',' << h.counts[g][b] << '\n';
    }
  }
}

void save_pca(const PcaModel& pca, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << pca.to_json().dump(1) << '\n';
}

}  // namespace churnrec
