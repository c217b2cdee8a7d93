#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "churnrec/rng.hpp"

namespace churnrec::nn {

enum class Activation { kRelu, kTanh, kSigmoid, kIdentity };

std::string_view to_string(Activation activation);
Activation parse_activation(std::string_view text);

struct LayerSpec {
  std::size_t units = 0;
  Activation activation = Activation::kIdentity;
};

struct DenseLayer {
  Eigen::MatrixXd weights;  // units x inputs
  Eigen::VectorXd bias;
  Activation activation = Activation::kIdentity;
};

// Gradients of a scalar loss, summed over the batch.
struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> bias;
  // d loss / d input, one column per sample.
  Eigen::MatrixXd input;

  Eigen::VectorXd flatten() const;
};

// Dense feed-forward network. Batches are column-major: one sample per column.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers);

  // Weights and biases uniform in +-1/sqrt(fan_in).
  static Mlp create(std::size_t input_dim, const std::vector<LayerSpec>& specs, Rng& rng);

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& batch) const;

  // Reverse-mode gradients for a batch given d loss / d output.
  Gradients backward(const Eigen::MatrixXd& batch, const Eigen::MatrixXd& upstream) const;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t parameter_count() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }

  // Layer-major, weights (column-major) then bias.
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& doc);

 private:
  std::vector<DenseLayer> layers_;
};

// Generator: F -> 64 -> 64 -> F, tanh hidden, identity (residual) output.
Mlp make_generator(std::size_t n_features, Rng& rng, std::size_t hidden = 64);
// Discriminator / surrogate: F -> 32 -> 16 -> 1, relu hidden, sigmoid output.
Mlp make_critic(std::size_t n_features, Rng& rng, std::size_t hidden1 = 32,
                std::size_t hidden2 = 16);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adaptive-moment optimizer over a flat parameter vector.
class Adam {
 public:
  Adam(std::size_t n_parameters, AdamConfig config = {});

  void step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grads);
  void step(Mlp& net, const Gradients& grads);

  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  Eigen::VectorXd first_moment_;
  Eigen::VectorXd second_moment_;
  std::size_t steps_ = 0;
};

// Mean binary cross-entropy of sigmoid outputs against (soft) targets and its
// gradient with respect to the outputs.
double binary_cross_entropy(const Eigen::RowVectorXd& probs, const Eigen::RowVectorXd& targets,
                            Eigen::RowVectorXd* grad = nullptr);

}  // namespace churnrec::nn
