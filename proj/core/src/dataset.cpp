#include "churnrec/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "churnrec/error.hpp"
#include "churnrec/rng.hpp"

namespace churnrec {

namespace {

constexpr std::array<std::string_view, 5> kAccumulatedMetrics = {
    "action_count", "connection_time", "connected_days", "elearning_action_count", "session_count"};
constexpr std::array<AggregationWindow, 4> kWindows = {
    AggregationWindow::kFirst15, AggregationWindow::kLast15, AggregationWindow::kFirst30,
    AggregationWindow::kLast60};
constexpr std::size_t kTemplateFeatures = 24;
// Accumulated counts can grow past the largest value seen in the panel.
constexpr double kAccumulatedUpperBound = 1.5;

std::string format_double(double value) {
  std::array<char, 32> buffer{};
  auto [end, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
  if (ec != std::errc{}) throw Error("failed to format number");
  return std::string(buffer.data(), end);
}

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

double parse_number(std::string_view cell, std::size_t row, std::size_t column) {
  double value = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (cell.empty() || ec != std::errc{} || ptr != last || !std::isfinite(value)) {
    throw ParseError("non-numeric cell '" + std::string(cell) + "'", row, column);
  }
  return value;
}

}  // namespace

Label label_for(double lifetime_days, bool censored, double threshold_days) {
  if (lifetime_days >= threshold_days) return Label::kRetained;
  return censored ? Label::kIndeterminate : Label::kChurned;
}

std::string_view to_string(Direction direction) {
  switch (direction) {
    case Direction::kFree: return "free";
    case Direction::kIncreaseOnly: return "increase_only";
    case Direction::kDecreaseOnly: return "decrease_only";
  }
  return "free";
}

std::string_view to_string(AggregationWindow window) {
  switch (window) {
    case AggregationWindow::kFirst15: return "first15";
    case AggregationWindow::kLast15: return "last15";
    case AggregationWindow::kFirst30: return "first30";
    case AggregationWindow::kLast60: return "last60";
    case AggregationWindow::kOther: return "other";
  }
  return "other";
}

std::string_view to_string(Label label) {
  switch (label) {
    case Label::kChurned: return "0";
    case Label::kRetained: return "1";
    case Label::kIndeterminate: return "indeterminate";
  }
  return "indeterminate";
}

Direction parse_direction(std::string_view text) {
  if (text == "free") return Direction::kFree;
  if (text == "increase_only") return Direction::kIncreaseOnly;
  if (text == "decrease_only") return Direction::kDecreaseOnly;
  throw ParseError("unknown direction '" + std::string(text) + "'");
}

AggregationWindow parse_window(std::string_view text) {
  for (auto window : {AggregationWindow::kFirst15, AggregationWindow::kLast15,
                      AggregationWindow::kFirst30, AggregationWindow::kLast60,
                      AggregationWindow::kOther}) {
    if (to_string(window) == text) return window;
  }
  throw ParseError("unknown aggregation window '" + std::string(text) + "'");
}

void validate(std::span<const FeatureMeta> meta) {
  for (std::size_t j = 0; j < meta.size(); ++j) {
    const auto& m = meta[j];
    if (!(m.lower_bound <= m.upper_bound)) {
      throw ConfigError("feature '" + m.name + "': lower_bound exceeds upper_bound");
    }
    if (!m.actionable && m.direction != Direction::kFree) {
      throw ConfigError("feature '" + m.name + "': non-actionable features must be free");
    }
  }
}

void validate(const Dataset& data) {
  validate(std::span<const FeatureMeta>(data.meta));
  const std::size_t f = data.num_features();
  for (const auto& r : data.records) {
    if (r.features.size() != f) {
      throw ConfigError("record '" + r.user_id + "' has " + std::to_string(r.features.size()) +
                        " features, expected " + std::to_string(f));
    }
    if (!(r.lifetime_days >= 0.0) || !std::isfinite(r.lifetime_days)) {
      throw ConfigError("record '" + r.user_id + "' has an invalid lifetime");
    }
    if (r.label != label_for(r.lifetime_days, r.censored, data.threshold_days)) {
      throw ConfigError("record '" + r.user_id + "' carries an inconsistent label");
    }
    for (std::size_t j = 0; j < f; ++j) {
      const double v = r.features[j];
      if (!std::isfinite(v) || v < data.meta[j].lower_bound || v > data.meta[j].upper_bound) {
        throw ConfigError("record '" + r.user_id + "' feature '" + data.meta[j].name +
                          "' is outside its bounds");
      }
    }
  }
}

Dataset binary_subset(const Dataset& data) {
  Dataset out;
  out.meta = data.meta;
  out.threshold_days = data.threshold_days;
  out.split_tag = data.split_tag;
  for (const auto& r : data.records) {
    if (r.label != Label::kIndeterminate) out.records.push_back(r);
  }
  return out;
}

std::vector<FeatureMeta> default_feature_meta(std::size_t n_features) {
  std::vector<FeatureMeta> all;
  all.reserve(std::max(n_features, kTemplateFeatures));
  for (auto metric : kAccumulatedMetrics) {
    for (auto window : kWindows) {
      all.push_back({std::string(metric) + "_" + std::string(to_string(window)) + "_norm_max",
                     true, Direction::kIncreaseOnly, 0.0, kAccumulatedUpperBound, window});
    }
  }
  all.push_back({"days_between_engaged_actions_first15_norm_max", true, Direction::kFree, 0.0, 1.0,
                 AggregationWindow::kFirst15});
  all.push_back({"days_since_last_login_last15_norm_max", true, Direction::kDecreaseOnly, 0.0, 1.0,
                 AggregationWindow::kLast15});
  all.push_back({"first_use_day_norm", false, Direction::kFree, 0.0, 1.0, AggregationWindow::kOther});
  all.push_back({"device_tier_norm", false, Direction::kFree, 0.0, 1.0, AggregationWindow::kOther});
  for (std::size_t j = all.size(); j < n_features; ++j) {
    all.push_back({"aux_" + std::to_string(j) + "_norm_max", true, Direction::kFree, 0.0, 1.0,
                   AggregationWindow::kOther});
  }
  all.resize(n_features);
  return all;
}

std::vector<SignalEffect> default_signal(std::size_t n_features) {
  if (n_features < kTemplateFeatures) return {{0, 3.0}};
  // action_count_last15, connected_days_last60, elearning_action_count_first30,
  // session_count_last15.
  return {{1, 2.5}, {11, 2.0}, {14, 1.5}, {17, 2.0}};
}

double signal_multiplier(std::span<const SignalEffect> signal, std::span<const double> features) {
  double log_scale = 0.0;
  for (const auto& effect : signal) log_scale += effect.weight * features[effect.feature];
  return std::exp(log_scale);
}

Dataset synthesize(const SynthConfig& config) {
  if (config.n_users < 2) throw ConfigError("n_users must be at least 2");
  if (config.n_features < 2) throw ConfigError("n_features must be at least 2");
  if (!(config.censor_rate >= 0.0 && config.censor_rate < 1.0)) {
    throw ConfigError("censor_rate must lie in [0, 1)");
  }
  if (!(config.shape > 0.0)) throw ConfigError("shape must be positive");
  if (!(config.threshold_days > 0.0)) throw ConfigError("threshold_days must be positive");
  const std::vector<SignalEffect> signal =
      config.signal.empty() ? default_signal(config.n_features) : config.signal;
  for (const auto& effect : signal) {
    if (effect.feature >= config.n_features) throw ConfigError("signal feature index out of range");
    if (!(effect.weight > 0.0)) throw ConfigError("signal weights must be positive");
  }

  const std::size_t n = config.n_users;
  const std::size_t f = config.n_features;
  Dataset data;
  data.meta = default_feature_meta(f);
  data.threshold_days = config.threshold_days;
  data.records.resize(n);

  Rng rng(derive_seed(config.seed, "synthesize"));
  std::vector<std::vector<double>> raw(n, std::vector<double>(f, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    // Latent engagement shared across windows; each window adds its own noise.
    const double engagement = rng.normal();
    std::array<double, kWindows.size()> window_engagement{};
    for (auto& w : window_engagement) w = 0.8 * engagement + 0.6 * rng.normal();
    for (std::size_t j = 0; j < f; ++j) {
      double value = 0.0;
      if (j < kAccumulatedMetrics.size() * kWindows.size()) {
        value = std::exp(0.45 * window_engagement[j % kWindows.size()] + 0.25 * rng.normal());
      } else if (j == 20) {
        value = std::exp(-0.3 * engagement + 0.3 * rng.normal());
      } else if (j == 21) {
        value = std::exp(-0.35 * window_engagement[1] + 0.3 * rng.normal());
      } else if (j == 22) {
        value = 0.05 + rng.uniform();
      } else if (j == 23) {
        value = 1.0 + static_cast<double>(rng.below(4));
      } else {
        value = std::exp(0.2 * rng.normal());
      }
      raw[i][j] = value;
    }
  }

  std::vector<double> maxima(f, 0.0);
  for (const auto& row : raw) {
    for (std::size_t j = 0; j < f; ++j) maxima[j] = std::max(maxima[j], row[j]);
  }
  std::vector<double> multipliers(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& features = data.records[i].features;
    features.resize(f);
    for (std::size_t j = 0; j < f; ++j) {
      features[j] = std::clamp(raw[i][j] / maxima[j], data.meta[j].lower_bound,
                               data.meta[j].upper_bound);
    }
    multipliers[i] = signal_multiplier(signal, features);
  }

  std::vector<double> sorted = multipliers;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(n / 2), sorted.end());
  const double base = config.threshold_days / sorted[n / 2];

  for (std::size_t i = 0; i < n; ++i) {
    auto& r = data.records[i];
    r.user_id = "u" + std::to_string(i + 1);
    const double scale = base * multipliers[i];
    double u = rng.uniform();
    while (u <= 0.0) u = rng.uniform();
    const double lifetime = scale * std::pow(u / (1.0 - u), 1.0 / config.shape);
    const bool censor = rng.uniform() < config.censor_rate;
    const double censor_fraction = rng.uniform();
    r.censored = censor;
    r.lifetime_days = censor ? lifetime * censor_fraction : lifetime;
    r.label = label_for(r.lifetime_days, r.censored, data.threshold_days);
  }
  return data;
}

std::vector<FeatureMeta> load_meta(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open feature meta file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  std::vector<nlohmann::json> objects;
  try {
    auto doc = nlohmann::json::parse(text);
    if (doc.is_array()) {
      for (auto& item : doc) objects.push_back(item);
    } else {
      objects.push_back(doc);
    }
  } catch (const nlohmann::json::parse_error&) {
    // One JSON object per line.
    std::istringstream lines(text);
    std::string line;
    std::size_t row = 0;
    while (std::getline(lines, line)) {
      ++row;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        objects.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("invalid feature meta JSON: ") + e.what(), row);
      }
    }
  }

  std::vector<FeatureMeta> meta;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const auto& obj = objects[i];
    try {
      FeatureMeta m;
      m.name = obj.at("name").get<std::string>();
      m.actionable = obj.at("actionable").get<bool>();
      m.direction = parse_direction(obj.at("direction").get<std::string>());
      m.lower_bound = obj.at("lower_bound").get<double>();
      m.upper_bound = obj.at("upper_bound").get<double>();
      if (obj.contains("aggregation_window")) {
        m.window = parse_window(obj.at("aggregation_window").get<std::string>());
      }
      meta.push_back(std::move(m));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("feature meta entry invalid: ") + e.what(), i + 1);
    }
  }
  try {
    validate(std::span<const FeatureMeta>(meta));
  } catch (const ConfigError& e) {
    throw ParseError(e.what());
  }
  return meta;
}

void save_meta(std::span<const FeatureMeta> meta, const std::filesystem::path& path) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& m : meta) {
    doc.push_back({{"name", m.name},
                   {"actionable", m.actionable},
                   {"direction", to_string(m.direction)},
                   {"lower_bound", m.lower_bound},
                   {"upper_bound", m.upper_bound},
                   {"aggregation_window", to_string(m.window)}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

Dataset parse_csv(std::string_view text, std::vector<FeatureMeta> meta, double threshold_days) {
  Dataset data;
  data.meta = std::move(meta);
  data.threshold_days = threshold_days;
  const std::size_t f = data.meta.size();

  std::size_t row = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++row;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto cells = split_line(line);

    if (!header_seen) {
      header_seen = true;
      const std::array<std::string_view, 3> fixed = {"user_id", "lifetime_days", "censored"};
      for (std::size_t c = 0; c < fixed.size(); ++c) {
        if (c >= cells.size() || cells[c] != fixed[c]) {
          throw ParseError("missing column '" + std::string(fixed[c]) + "'", row, c + 1);
        }
      }
      if (cells.size() != f + fixed.size()) {
        throw ParseError("header has " + std::to_string(cells.size() - fixed.size()) +
                             " feature columns but meta lists " + std::to_string(f),
                         row);
      }
      for (std::size_t j = 0; j < f; ++j) {
        if (cells[j + 3] != data.meta[j].name) {
          throw ParseError("missing column '" + data.meta[j].name + "'", row, j + 4);
        }
      }
      continue;
    }

    if (cells.size() != f + 3) {
      throw ParseError("expected " + std::to_string(f + 3) + " cells, found " +
                           std::to_string(cells.size()),
                       row);
    }
    UserRecord r;
    r.user_id = std::string(cells[0]);
    if (r.user_id.empty()) throw ParseError("empty user_id", row, 1);
    r.lifetime_days = parse_number(cells[1], row, 2);
    if (r.lifetime_days < 0.0) throw ParseError("negative lifetime", row, 2);
    if (cells[2] == "true") {
      r.censored = true;
    } else if (cells[2] == "false") {
      r.censored = false;
    } else {
      throw ParseError("censored must be true or false", row, 3);
    }
    r.features.resize(f);
    for (std::size_t j = 0; j < f; ++j) {
      const double v = parse_number(cells[j + 3], row, j + 4);
      if (v < data.meta[j].lower_bound || v > data.meta[j].upper_bound) {
        throw ParseError("value outside bounds of '" + data.meta[j].name + "'", row, j + 4);
      }
      r.features[j] = v;
    }
    r.label = label_for(r.lifetime_days, r.censored, threshold_days);
    data.records.push_back(std::move(r));
  }
  if (!header_seen) throw ParseError("missing header row", 1);
  return data;
}

Dataset load_csv(const std::filesystem::path& path, const std::filesystem::path& meta_path,
                 double threshold_days) {
  auto meta = load_meta(meta_path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open dataset file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_csv(buffer.str(), std::move(meta), threshold_days);
}

std::string format_csv(const Dataset& data) {
  std::string out = "user_id,lifetime_days,censored";
  for (const auto& m : data.meta) out += "," + m.name;
  out += '\n';
  for (const auto& r : data.records) {
    out += r.user_id;
    out += ',';
    out += format_double(r.lifetime_days);
    out += r.censored ? ",true" : ",false";
    for (double v : r.features) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << format_csv(data);
}

std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie strictly between 0 and 1");
  }
  if (data.records.empty()) throw ConfigError("cannot split an empty dataset");
  const std::size_t n = data.size();
  const auto n_train = static_cast<std::size_t>(std::ceil(static_cast<double>(n) * train_fraction));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::sort(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());

  auto make = [&](std::size_t begin, std::size_t end, SplitTag tag) {
    Dataset part;
    part.meta = data.meta;
    part.threshold_days = data.threshold_days;
    part.split_tag = tag;
    part.records.reserve(end - begin);
    for (std::size_t k = begin; k < end; ++k) part.records.push_back(data.records[order[k]]);
    return part;
  };
  return {make(0, n_train, SplitTag::kTrain), make(n_train, n, SplitTag::kTest)};
}

MaxScaler MaxScaler::fit(const Dataset& train) {
  MaxScaler scaler;
  scaler.maxima_.assign(train.num_features(), 0.0);
  for (const auto& r : train.records) {
    expect_dimension(r.features.size(), train.num_features(), "MaxScaler::fit");
    for (std::size_t j = 0; j < r.features.size(); ++j) {
      scaler.maxima_[j] = std::max(scaler.maxima_[j], std::abs(r.features[j]));
    }
  }
  for (double& m : scaler.maxima_) {
    if (!(m > 0.0)) m = 1.0;
  }
  return scaler;
}

Dataset MaxScaler::apply(const Dataset& data) const {
  expect_dimension(data.num_features(), maxima_.size(), "MaxScaler::apply");
  Dataset out = data;
  for (auto& r : out.records) {
    for (std::size_t j = 0; j < r.features.size(); ++j) {
      r.features[j] = std::clamp(r.features[j] / maxima_[j], out.meta[j].lower_bound,
                                 out.meta[j].upper_bound);
    }
  }
  return out;
}

}  // namespace churnrec
