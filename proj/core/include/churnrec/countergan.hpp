#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "churnrec/dataset.hpp"
#include "churnrec/forest.hpp"
#include "churnrec/nn.hpp"
#include "churnrec/recourse.hpp"

namespace churnrec {

// ---------------------------------------------------------------------------
// Surrogate distillation: a differentiable stand-in for the forest score that
// routes classifier feedback to the generator. Never used to judge efficacy.

struct SurrogateConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  // Uniform perturbation half-width for augmented copies.
  double noise = 0.05;
  std::size_t noisy_copies = 4;
  double holdout_fraction = 0.2;
  nn::AdamConfig adam{3e-3};
  std::uint64_t seed = 0;
};

struct DistillResult {
  nn::Mlp surrogate;
  // Thresholded surrogate vs classify() on the original training features.
  double train_agreement = 0.0;
  // Same on held-out augmented points never used for fitting.
  double holdout_agreement = 0.0;
};

DistillResult distill_surrogate(const ChurnClassifier& classifier, const Dataset& data,
                                const SurrogateConfig& config);

// ---------------------------------------------------------------------------
// CounteRGAN

// Pool the discriminator treats as real samples.
enum class RealPool {
  kRetained,  // training users with y = 1
  kAllData,   // every training user with a determinate label
};

struct CounterGanModel;
struct TrainLogRow;

struct TrainConfig {
  std::size_t max_iterations = 600;
  std::size_t batch_size = 64;
  double checkpoint_accuracy_ceiling = 0.55;
  double lambda_cls = 1.0;
  double lambda_reg = 0.1;
  std::uint64_t seed = 0;
  RealPool real_pool = RealPool::kRetained;
  nn::AdamConfig generator_adam{};
  nn::AdamConfig discriminator_adam{};
  SurrogateConfig surrogate{};
  // Called after every iteration with the in-progress model; not serialized.
  std::function<void(const TrainLogRow&, const CounterGanModel&)> on_iteration;

  void validate() const;
};

struct TrainLogRow {
  std::size_t iteration = 0;  // 1-based
  double d_loss = 0.0;
  double g_loss = 0.0;
  double d_acc_real = 0.0;
  double d_acc_fake = 0.0;
  bool checkpoint = false;
};

struct CounterGanModel {
  nn::Mlp generator;
  nn::Mlp discriminator;
  nn::Mlp surrogate;
  std::shared_ptr<const ChurnClassifier> classifier;
  std::vector<FeatureMeta> constraints;
  std::vector<TrainLogRow> training_log;
  // Iterations whose logged accuracies were both within the ceiling.
  std::vector<std::size_t> checkpoints;
  // Iteration whose generator/discriminator were kept (the latest checkpoint),
  // or nullopt when none qualified and the final state was kept instead.
  std::optional<std::size_t> selected_checkpoint;
  double surrogate_train_agreement = 0.0;
  double surrogate_holdout_agreement = 0.0;
  TrainConfig config;

  bool has_qualifying_checkpoint() const { return selected_checkpoint.has_value(); }
};

// Alternating discriminator/generator training on the training split. Uses
// `surrogate` when given, otherwise distills one first.
CounterGanModel train_countergan(const Dataset& train,
                                 std::shared_ptr<const ChurnClassifier> classifier,
                                 const TrainConfig& config,
                                 std::optional<nn::Mlp> surrogate = std::nullopt);

// One generator pass plus projection; efficacy judged by the forest.
// Throws PreconditionError for users already predicted to be retained.
RecourseAction generate_recourse(const CounterGanModel& model, std::span<const double> x,
                                 std::string user_id = {});

// Recourse for every user the forest denies, timed per user.
std::vector<RecourseAction> generate_recourse_batch(const CounterGanModel& model,
                                                    const Dataset& data);

// Bundle directory: generator.json, discriminator.json, surrogate.json,
// constraints.json, training_log.csv, model.json.
void save_bundle(const CounterGanModel& model, const std::filesystem::path& dir);
CounterGanModel load_bundle(const std::filesystem::path& dir,
                            std::shared_ptr<const ChurnClassifier> classifier);

}  // namespace churnrec
