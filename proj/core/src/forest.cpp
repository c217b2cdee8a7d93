#include "churnrec/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "churnrec/error.hpp"
#include "churnrec/rng.hpp"

namespace churnrec {

namespace {

constexpr int kFormatVersion = 1;

double midpoint_threshold(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2.0;
  // Adjacent doubles: fall back to lo, which still separates the values.
  return (mid > lo && mid < hi) ? mid : lo;
}

}  // namespace

std::optional<Split> find_best_split(const Dataset& data, std::span<const std::size_t> rows,
                                     std::span<const std::size_t> candidate_features,
                                     std::size_t min_leaf_size) {
  const std::size_t n = rows.size();
  if (min_leaf_size == 0) throw ConfigError("min_leaf_size must be at least 1");
  if (n < 2 * min_leaf_size) return std::nullopt;

  std::vector<double> grid(n);
  for (std::size_t k = 0; k < n; ++k) grid[k] = data.records[rows[k]].lifetime_days;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  const std::size_t n_times = grid.size();

  std::vector<std::size_t> time_index(n);
  std::vector<double> count_all(n_times, 0.0);
  std::vector<double> deaths_all(n_times, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& r = data.records[rows[k]];
    const auto j = static_cast<std::size_t>(
        std::lower_bound(grid.begin(), grid.end(), r.lifetime_days) - grid.begin());
    time_index[k] = j;
    count_all[j] += 1.0;
    if (!r.censored) deaths_all[j] += 1.0;
  }

  std::vector<std::size_t> features(candidate_features.begin(), candidate_features.end());
  std::sort(features.begin(), features.end());

  std::optional<Split> best;
  double best_statistic = 0.0;
  std::vector<std::pair<double, std::size_t>> ordered(n);
  std::vector<double> count_left(n_times);
  std::vector<double> deaths_left(n_times);

  for (std::size_t feature : features) {
    if (feature >= data.num_features()) throw DimensionError("candidate feature out of range");
    for (std::size_t k = 0; k < n; ++k) ordered[k] = {data.records[rows[k]].features[feature], k};
    std::sort(ordered.begin(), ordered.end());
    std::fill(count_left.begin(), count_left.end(), 0.0);
    std::fill(deaths_left.begin(), deaths_left.end(), 0.0);

    for (std::size_t k = 0; k + 1 < n; ++k) {
      const std::size_t local = ordered[k].second;
      count_left[time_index[local]] += 1.0;
      if (!data.records[rows[local]].censored) deaths_left[time_index[local]] += 1.0;
      if (ordered[k].first == ordered[k + 1].first) continue;
      const std::size_t left_size = k + 1;
      if (left_size < min_leaf_size) continue;
      if (n - left_size < min_leaf_size) break;

      // Risk sets accumulate from the latest time backwards.
      double at_risk = 0.0;
      double at_risk_left = 0.0;
      double observed_minus_expected = 0.0;
      double variance = 0.0;
      for (std::size_t j = n_times; j-- > 0;) {
        at_risk += count_all[j];
        at_risk_left += count_left[j];
        const double deaths = deaths_all[j];
        if (deaths > 0.0) {
          const double share = at_risk_left / at_risk;
          observed_minus_expected += deaths_left[j] - deaths * share;
          if (at_risk > 1.0) {
            variance += deaths * share * (1.0 - share) * (at_risk - deaths) / (at_risk - 1.0);
          }
        }
      }
      if (!(variance > 0.0)) continue;
      const double statistic = observed_minus_expected * observed_minus_expected / variance;
      if (statistic > best_statistic) {
        best_statistic = statistic;
        best = Split{feature, midpoint_threshold(ordered[k].first, ordered[k + 1].first),
                     statistic, left_size, n - left_size};
      }
    }
  }
  return best;
}

SurvivalTree::SurvivalTree(std::vector<Node> nodes, std::vector<Leaf> leaves)
    : nodes_(std::move(nodes)), leaves_(std::move(leaves)) {
  if (nodes_.empty()) throw ConfigError("survival tree has no nodes");
  const auto n_nodes = static_cast<std::int32_t>(nodes_.size());
  const auto n_leaves = static_cast<std::int32_t>(leaves_.size());
  for (std::int32_t i = 0; i < n_nodes; ++i) {
    const Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.is_leaf()) {
      if (node.leaf >= n_leaves) throw ConfigError("leaf index out of range");
    } else if (node.feature < 0 || node.left <= i || node.right <= i || node.left >= n_nodes ||
               node.right >= n_nodes) {
      throw ConfigError("malformed internal node " + std::to_string(i));
    }
  }
  for (const auto& leaf : leaves_) {
    if (leaf.curve.empty() || leaf.curve.times.size() != leaf.curve.probs.size()) {
      throw ConfigError("leaf survival curve is empty or ragged");
    }
  }
}

const SurvivalTree::Leaf& SurvivalTree::leaf_for(std::span<const double> x) const {
  const Node* node = &nodes_.front();
  while (!node->is_leaf()) {
    const auto f = static_cast<std::size_t>(node->feature);
    node = &nodes_[static_cast<std::size_t>(x[f] <= node->threshold ? node->left : node->right)];
  }
  return leaves_[static_cast<std::size_t>(node->leaf)];
}

void SurvivalTree::cache_threshold(double threshold_days) {
  for (auto& leaf : leaves_) {
    leaf.score_part = leaf.curve.left_limit(threshold_days);
    leaf.last_time = leaf.curve.times.back();
  }
}

std::size_t SurvivalTree::max_feature_index() const {
  std::size_t out = 0;
  for (const auto& node : nodes_) {
    if (!node.is_leaf()) out = std::max(out, static_cast<std::size_t>(node.feature));
  }
  return out;
}

bool SurvivalTree::operator==(const SurvivalTree& other) const {
  if (nodes_ != other.nodes_ || leaves_.size() != other.leaves_.size()) return false;
  for (std::size_t i = 0; i < leaves_.size(); ++i) {
    if (leaves_[i].curve != other.leaves_[i].curve || leaves_[i].size != other.leaves_[i].size) {
      return false;
    }
  }
  return true;
}

SurvivalTree fit_tree(const Dataset& data, std::span<const std::size_t> rows,
                      std::size_t min_leaf_size, std::size_t features_per_split,
                      std::uint64_t seed) {
  if (rows.empty()) throw ConfigError("fit_tree: no training rows");
  const std::size_t f = data.num_features();
  features_per_split = std::clamp<std::size_t>(features_per_split, 1, f);
  Rng rng(seed);

  std::vector<SurvivalTree::Node> nodes(1);
  std::vector<SurvivalTree::Leaf> leaves;
  struct Pending {
    std::vector<std::size_t> rows;
    std::size_t node;
  };
  std::vector<Pending> stack;
  stack.push_back({std::vector<std::size_t>(rows.begin(), rows.end()), 0});
  std::vector<std::size_t> pool(f);

  while (!stack.empty()) {
    Pending current = std::move(stack.back());
    stack.pop_back();

    std::optional<Split> split;
    if (current.rows.size() >= 2 * min_leaf_size) {
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      for (std::size_t k = 0; k < features_per_split; ++k) {
        std::swap(pool[k], pool[k + rng.below(f - k)]);
      }
      split = find_best_split(data, current.rows,
                              std::span<const std::size_t>(pool.data(), features_per_split),
                              min_leaf_size);
    }

    if (!split) {
      std::vector<Observation> obs;
      obs.reserve(current.rows.size());
      for (std::size_t r : current.rows) {
        obs.push_back({data.records[r].lifetime_days, !data.records[r].censored});
      }
      SurvivalTree::Leaf leaf;
      leaf.curve = km_estimate(obs);
      leaf.size = current.rows.size();
      nodes[current.node].leaf = static_cast<std::int32_t>(leaves.size());
      leaves.push_back(std::move(leaf));
      continue;
    }

    Pending left{{}, nodes.size()};
    Pending right{{}, nodes.size() + 1};
    for (std::size_t r : current.rows) {
      (data.records[r].features[split->feature] <= split->threshold ? left : right)
          .rows.push_back(r);
    }
    auto& node = nodes[current.node];
    node.feature = static_cast<std::int32_t>(split->feature);
    node.threshold = split->threshold;
    node.left = static_cast<std::int32_t>(left.node);
    node.right = static_cast<std::int32_t>(right.node);
    nodes.resize(nodes.size() + 2);
    stack.push_back(std::move(right));
    stack.push_back(std::move(left));
  }
  return SurvivalTree(std::move(nodes), std::move(leaves));
}

ChurnClassifier::ChurnClassifier(std::vector<SurvivalTree> trees, std::size_t n_features,
                                 double threshold_days)
    : trees_(std::move(trees)), n_features_(n_features), threshold_days_(threshold_days) {
  if (trees_.empty()) throw ConfigError("a forest needs at least one tree");
  if (n_features_ == 0) throw ConfigError("a forest needs at least one feature");
  for (auto& tree : trees_) {
    if (tree.max_feature_index() >= n_features_) {
      throw ConfigError("tree splits on a feature outside the feature space");
    }
    tree.cache_threshold(threshold_days_);
  }
}

void ChurnClassifier::check_dimension(std::span<const double> x) const {
  expect_dimension(x.size(), n_features_, "feature vector");
}

SurvivalCurve ChurnClassifier::predict_curve(std::span<const double> x) const {
  check_dimension(x);
  std::vector<const SurvivalCurve*> curves;
  curves.reserve(trees_.size());
  for (const auto& tree : trees_) curves.push_back(&tree.leaf_for(x).curve);
  return average_curves(curves);
}

MedianLifetime ChurnClassifier::predict_median(std::span<const double> x) const {
  return median_lifetime(predict_curve(x));
}

int ChurnClassifier::classify(std::span<const double> x) const {
  return classify_lifetime(predict_lifetime(x), threshold_days_);
}

double ChurnClassifier::class_score(std::span<const double> x) const {
  check_dimension(x);
  double sum = 0.0;
  double last_time = 0.0;
  for (const auto& tree : trees_) {
    const auto& leaf = tree.leaf_for(x);
    sum += leaf.score_part;
    last_time = std::max(last_time, leaf.last_time);
  }
  if (last_time < threshold_days_) return 0.0;
  return trees_.size() == 1 ? sum : sum * (1.0 / static_cast<double>(trees_.size()));
}

nlohmann::json ChurnClassifier::to_json() const {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& tree : trees_) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : tree.nodes()) {
      nodes.push_back({n.feature, n.threshold, n.left, n.right, n.leaf});
    }
    nlohmann::json leaves = nlohmann::json::array();
    for (const auto& leaf : tree.leaves()) {
      leaves.push_back({{"size", leaf.size}, {"times", leaf.curve.times}, {"probs", leaf.curve.probs}});
    }
    trees.push_back({{"nodes", std::move(nodes)}, {"leaves", std::move(leaves)}});
  }
  return {{"format", "churnrec.survival_forest"},
          {"version", kFormatVersion},
          {"threshold_days", threshold_days_},
          {"n_features", n_features_},
          {"trees", std::move(trees)}};
}

ChurnClassifier ChurnClassifier::from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "churnrec.survival_forest") {
      throw ParseError("not a survival forest document");
    }
    if (doc.at("version").get<int>() != kFormatVersion) {
      throw ParseError("unsupported forest version");
    }
    std::vector<SurvivalTree> trees;
    for (const auto& t : doc.at("trees")) {
      std::vector<SurvivalTree::Node> nodes;
      for (const auto& n : t.at("nodes")) {
        nodes.push_back({n.at(0).get<std::int32_t>(), n.at(1).get<double>(),
                         n.at(2).get<std::int32_t>(), n.at(3).get<std::int32_t>(),
                         n.at(4).get<std::int32_t>()});
      }
      std::vector<SurvivalTree::Leaf> leaves;
      for (const auto& l : t.at("leaves")) {
        SurvivalTree::Leaf leaf;
        leaf.size = l.at("size").get<std::size_t>();
        leaf.curve.times = l.at("times").get<std::vector<double>>();
        leaf.curve.probs = l.at("probs").get<std::vector<double>>();
        leaves.push_back(std::move(leaf));
      }
      trees.emplace_back(std::move(nodes), std::move(leaves));
    }
    return ChurnClassifier(std::move(trees), doc.at("n_features").get<std::size_t>(),
                           doc.at("threshold_days").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid forest JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("invalid forest: ") + e.what());
  }
}

bool ChurnClassifier::operator==(const ChurnClassifier& other) const {
  return n_features_ == other.n_features_ && threshold_days_ == other.threshold_days_ &&
         trees_ == other.trees_;
}

ChurnClassifier fit_forest(const Dataset& data, const ForestConfig& config) {
  if (config.n_trees < 1) throw ConfigError("n_trees must be at least 1");
  if (config.min_leaf_size < 1) throw ConfigError("min_leaf_size must be at least 1");
  if (data.records.empty()) throw ConfigError("cannot fit a forest on empty data");
  const std::size_t f = data.num_features();
  if (f == 0) throw ConfigError("dataset has no features");
  const std::size_t per_split =
      config.features_per_split == 0
          ? static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(f))))
          : config.features_per_split;
  if (per_split > f) throw ConfigError("features_per_split exceeds the number of features");

  std::vector<SurvivalTree> trees(config.n_trees);
  auto grow = [&](std::size_t t) {
    const std::uint64_t tree_seed = derive_seed(config.seed, t);
    Rng rng(tree_seed);
    const std::size_t n = data.size();
    std::vector<std::size_t> bootstrap(n);
    for (auto& r : bootstrap) r = rng.below(n);
    trees[t] = fit_tree(data, bootstrap, config.min_leaf_size, per_split,
                        derive_seed(tree_seed, "splits"));
  };

  const std::size_t workers = std::clamp<std::size_t>(config.n_threads, 1, config.n_trees);
  if (workers == 1) {
    for (std::size_t t = 0; t < config.n_trees; ++t) grow(t);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < config.n_trees; t += workers) grow(t);
      });
    }
  }
  return ChurnClassifier(std::move(trees), f, data.threshold_days);
}

int classify_lifetime(double predicted_days, double threshold_days) {
  return predicted_days >= threshold_days ? 1 : 0;
}

}  // namespace churnrec
