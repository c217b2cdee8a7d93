#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace churnrec {

inline constexpr double kDefaultThresholdDays = 90.0;

enum class Label : std::int8_t {
  kChurned = 0,
  kRetained = 1,
  // Censored before the threshold: the outcome is unknown.
  kIndeterminate = -1,
};

enum class Direction { kFree, kIncreaseOnly, kDecreaseOnly };

enum class AggregationWindow { kFirst15, kLast15, kFirst30, kLast60, kOther };

struct FeatureMeta {
  std::string name;
  bool actionable = true;
  Direction direction = Direction::kFree;
  double lower_bound = 0.0;
  double upper_bound = 1.0;
  AggregationWindow window = AggregationWindow::kOther;

  bool operator==(const FeatureMeta&) const = default;
};

struct UserRecord {
  std::string user_id;
  std::vector<double> features;
  double lifetime_days = 0.0;
  bool censored = false;
  Label label = Label::kIndeterminate;

  bool operator==(const UserRecord&) const = default;
};

enum class SplitTag { kTrain, kTest, kAll };

struct Dataset {
  std::vector<UserRecord> records;
  std::vector<FeatureMeta> meta;
  double threshold_days = kDefaultThresholdDays;
  SplitTag split_tag = SplitTag::kAll;

  std::size_t size() const { return records.size(); }
  std::size_t num_features() const { return meta.size(); }

  bool operator==(const Dataset&) const = default;
};

// Label rule: retained once the lifetime reaches the threshold (censored or
// not), churned when an uncensored lifetime ends before it, otherwise
// indeterminate.
Label label_for(double lifetime_days, bool censored, double threshold_days);

// Throws ConfigError when any Dataset/UserRecord/FeatureMeta invariant fails.
void validate(const Dataset& data);
void validate(std::span<const FeatureMeta> meta);

// Records with a determinate label, in input order.
Dataset binary_subset(const Dataset& data);

std::string_view to_string(Direction direction);
std::string_view to_string(AggregationWindow window);
std::string_view to_string(Label label);
Direction parse_direction(std::string_view text);
AggregationWindow parse_window(std::string_view text);

// ---------------------------------------------------------------------------
// Synthetic panels

struct SignalEffect {
  std::size_t feature = 0;
  // Must be positive: the lifetime scale grows with the feature.
  double weight = 0.0;
};

struct SynthConfig {
  std::size_t n_users = 2000;
  std::size_t n_features = 24;
  std::uint64_t seed = 0;
  double censor_rate = 0.2;
  // Planted effects on the log-logistic scale. Empty selects default_signal().
  std::vector<SignalEffect> signal;
  // Log-logistic shape; larger means less lifetime noise around the scale.
  double shape = 3.0;
  double threshold_days = kDefaultThresholdDays;
};

std::vector<FeatureMeta> default_feature_meta(std::size_t n_features);
std::vector<SignalEffect> default_signal(std::size_t n_features);

// exp(sum_k w_k * x_k): the multiplicative part of the per-user scale.
double signal_multiplier(std::span<const SignalEffect> signal, std::span<const double> features);

// Lifetimes follow a log-logistic law whose scale is base * signal_multiplier;
// base is calibrated so that the median scale equals threshold_days.
Dataset synthesize(const SynthConfig& config);

// ---------------------------------------------------------------------------
// Files

std::vector<FeatureMeta> load_meta(const std::filesystem::path& path);
void save_meta(std::span<const FeatureMeta> meta, const std::filesystem::path& path);

Dataset load_csv(const std::filesystem::path& path, const std::filesystem::path& meta_path,
                 double threshold_days = kDefaultThresholdDays);
Dataset parse_csv(std::string_view text, std::vector<FeatureMeta> meta,
                  double threshold_days = kDefaultThresholdDays);
void save_csv(const Dataset& data, const std::filesystem::path& path);
std::string format_csv(const Dataset& data);

// ---------------------------------------------------------------------------
// Splitting and scaling

// Disjoint partition by user with sizes ceil(n*f) and n - ceil(n*f). Each
// part keeps the input order.
std::pair<Dataset, Dataset> split(const Dataset& data, double train_fraction, std::uint64_t seed);

// Per-feature maxima fitted on a training split and reused for other splits.
class MaxScaler {
 public:
  static MaxScaler fit(const Dataset& train);

  // Divides by the fitted maxima and clamps into each feature's bounds.
  Dataset apply(const Dataset& data) const;

  std::span<const double> maxima() const { return maxima_; }

 private:
  std::vector<double> maxima_;
};

}  // namespace churnrec
