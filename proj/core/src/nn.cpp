#include "churnrec/nn.hpp"

#include <algorithm>
#include <cmath>

#include "churnrec/error.hpp"

namespace churnrec::nn {

namespace {

constexpr int kFormatVersion = 1;

void apply_activation(Activation activation, Eigen::MatrixXd& z) {
  switch (activation) {
    case Activation::kRelu: z = z.cwiseMax(0.0); break;
    case Activation::kTanh: z = z.array().tanh().matrix(); break;
    case Activation::kSigmoid: z = (1.0 / (1.0 + (-z.array()).exp())).matrix(); break;
    case Activation::kIdentity: break;
  }
}

// d activation / d pre-activation, expressed through the pre-activation z
// and the activation output a.
Eigen::ArrayXXd activation_derivative(Activation activation, const Eigen::MatrixXd& z,
                                      const Eigen::MatrixXd& a) {
  switch (activation) {
    case Activation::kRelu: return (z.array() > 0.0).cast<double>();
    case Activation::kTanh: return 1.0 - a.array().square();
    case Activation::kSigmoid: return a.array() * (1.0 - a.array());
    case Activation::kIdentity: return Eigen::ArrayXXd::Ones(z.rows(), z.cols());
  }
  return Eigen::ArrayXXd::Ones(z.rows(), z.cols());
}

}  // namespace

std::string_view to_string(Activation activation) {
  switch (activation) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kIdentity: return "identity";
  }
  return "identity";
}

Activation parse_activation(std::string_view text) {
  for (auto a : {Activation::kRelu, Activation::kTanh, Activation::kSigmoid, Activation::kIdentity}) {
    if (to_string(a) == text) return a;
  }
  throw ParseError("unknown activation '" + std::string(text) + "'");
}

Eigen::VectorXd Gradients::flatten() const {
  Eigen::Index total = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) total += weights[l].size() + bias[l].size();
  Eigen::VectorXd flat(total);
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    flat.segment(offset, weights[l].size()) = weights[l].reshaped();
    offset += weights[l].size();
    flat.segment(offset, bias[l].size()) = bias[l];
    offset += bias[l].size();
  }
  return flat;
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("an MLP needs at least one layer");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    if (layer.weights.rows() != layer.bias.size() || layer.weights.rows() == 0 ||
        layer.weights.cols() == 0) {
      throw DimensionError("layer " + std::to_string(l) + " has inconsistent shapes");
    }
    if (l > 0 && layer.weights.cols() != layers_[l - 1].weights.rows()) {
      throw DimensionError("layer " + std::to_string(l) + " does not chain with its predecessor");
    }
    if (!layer.weights.allFinite() || !layer.bias.allFinite()) {
      throw NumericalError("layer " + std::to_string(l) + " has non-finite parameters");
    }
  }
}

Mlp Mlp::create(std::size_t input_dim, const std::vector<LayerSpec>& specs, Rng& rng) {
  std::vector<DenseLayer> layers;
  std::size_t fan_in = input_dim;
  for (const auto& spec : specs) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(fan_in));
    DenseLayer layer;
    layer.weights.resize(static_cast<Eigen::Index>(spec.units), static_cast<Eigen::Index>(fan_in));
    layer.bias.resize(static_cast<Eigen::Index>(spec.units));
    // Fill column-major so the draw order matches the flattened layout.
    for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
        layer.weights(r, c) = rng.uniform(-limit, limit);
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = rng.uniform(-limit, limit);
    layer.activation = spec.activation;
    layers.push_back(std::move(layer));
    fan_in = spec.units;
  }
  return Mlp(std::move(layers));
}

std::size_t Mlp::input_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weights.cols());
}

std::size_t Mlp::output_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weights.rows());
}

std::size_t Mlp::parameter_count() const {
  std::size_t total = 0;
  for (const auto& layer : layers_) {
    total += static_cast<std::size_t>(layer.weights.size() + layer.bias.size());
  }
  return total;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
  expect_dimension(static_cast<std::size_t>(x.size()), input_dim(), "Mlp::forward");
  Eigen::MatrixXd batch = x;
  return forward(batch).col(0);
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& batch) const {
  expect_dimension(static_cast<std::size_t>(batch.rows()), input_dim(), "Mlp::forward");
  Eigen::MatrixXd a = batch;
  for (const auto& layer : layers_) {
    Eigen::MatrixXd z = layer.weights * a;
    z.colwise() += layer.bias;
    apply_activation(layer.activation, z);
    a = std::move(z);
  }
  return a;
}

Gradients Mlp::backward(const Eigen::MatrixXd& batch, const Eigen::MatrixXd& upstream) const {
  expect_dimension(static_cast<std::size_t>(batch.rows()), input_dim(), "Mlp::backward input");
  expect_dimension(static_cast<std::size_t>(upstream.rows()), output_dim(),
                   "Mlp::backward upstream");
  expect_dimension(static_cast<std::size_t>(upstream.cols()), static_cast<std::size_t>(batch.cols()),
                   "Mlp::backward batch");

  const std::size_t n_layers = layers_.size();
  std::vector<Eigen::MatrixXd> inputs(n_layers);
  std::vector<Eigen::MatrixXd> pre(n_layers);
  std::vector<Eigen::MatrixXd> post(n_layers);
  Eigen::MatrixXd a = batch;
  for (std::size_t l = 0; l < n_layers; ++l) {
    inputs[l] = a;
    pre[l] = layers_[l].weights * a;
    pre[l].colwise() += layers_[l].bias;
    post[l] = pre[l];
    apply_activation(layers_[l].activation, post[l]);
    a = post[l];
  }

  Gradients grads;
  grads.weights.resize(n_layers);
  grads.bias.resize(n_layers);
  Eigen::MatrixXd delta = upstream;
  for (std::size_t l = n_layers; l-- > 0;) {
    delta = (delta.array() * activation_derivative(layers_[l].activation, pre[l], post[l])).matrix();
    grads.weights[l] = delta * inputs[l].transpose();
    grads.bias[l] = delta.rowwise().sum();
    delta = layers_[l].weights.transpose() * delta;
  }
  grads.input = std::move(delta);
  return grads;
}

Eigen::VectorXd Mlp::parameters() const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index offset = 0;
  for (const auto& layer : layers_) {
    flat.segment(offset, layer.weights.size()) = layer.weights.reshaped();
    offset += layer.weights.size();
    flat.segment(offset, layer.bias.size()) = layer.bias;
    offset += layer.bias.size();
  }
  return flat;
}

void Mlp::set_parameters(const Eigen::VectorXd& flat) {
  expect_dimension(static_cast<std::size_t>(flat.size()), parameter_count(), "Mlp::set_parameters");
  Eigen::Index offset = 0;
  for (auto& layer : layers_) {
    layer.weights.reshaped() = flat.segment(offset, layer.weights.size());
    offset += layer.weights.size();
    layer.bias = flat.segment(offset, layer.bias.size());
    offset += layer.bias.size();
  }
}

nlohmann::json Mlp::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : layers_) {
    std::vector<double> weights(layer.weights.data(), layer.weights.data() + layer.weights.size());
    std::vector<double> bias(layer.bias.data(), layer.bias.data() + layer.bias.size());
    layers.push_back({{"rows", layer.weights.rows()},
                      {"cols", layer.weights.cols()},
                      {"activation", to_string(layer.activation)},
                      {"weights_col_major", std::move(weights)},
                      {"bias", std::move(bias)}});
  }
  return {{"format", "churnrec.mlp"}, {"version", kFormatVersion}, {"layers", std::move(layers)}};
}

Mlp Mlp::from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "churnrec.mlp") throw ParseError("not an MLP document");
    if (doc.at("version").get<int>() != kFormatVersion) throw ParseError("unsupported MLP version");
    std::vector<DenseLayer> layers;
    for (const auto& l : doc.at("layers")) {
      const auto rows = l.at("rows").get<Eigen::Index>();
      const auto cols = l.at("cols").get<Eigen::Index>();
      const auto weights = l.at("weights_col_major").get<std::vector<double>>();
      const auto bias = l.at("bias").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(weights.size()) != rows * cols ||
          static_cast<Eigen::Index>(bias.size()) != rows) {
        throw ParseError("MLP layer parameter count does not match its shape");
      }
      DenseLayer layer;
      layer.weights = Eigen::Map<const Eigen::MatrixXd>(weights.data(), rows, cols);
      layer.bias = Eigen::Map<const Eigen::VectorXd>(bias.data(), rows);
      layer.activation = parse_activation(l.at("activation").get<std::string>());
      layers.push_back(std::move(layer));
    }
    return Mlp(std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid MLP JSON: ") + e.what());
  }
}

Mlp make_generator(std::size_t n_features, Rng& rng, std::size_t hidden) {
  return Mlp::create(n_features,
                     {{hidden, Activation::kTanh},
                      {hidden, Activation::kTanh},
                      {n_features, Activation::kIdentity}},
                     rng);
}

Mlp make_critic(std::size_t n_features, Rng& rng, std::size_t hidden1, std::size_t hidden2) {
  return Mlp::create(n_features,
                     {{hidden1, Activation::kRelu},
                      {hidden2, Activation::kRelu},
                      {1, Activation::kSigmoid}},
                     rng);
}

Adam::Adam(std::size_t n_parameters, AdamConfig config)
    : config_(config),
      first_moment_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_parameters))),
      second_moment_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_parameters))) {}

void Adam::step(Eigen::Ref<Eigen::VectorXd> params, const Eigen::Ref<const Eigen::VectorXd>& grads) {
  expect_dimension(static_cast<std::size_t>(params.size()),
                   static_cast<std::size_t>(first_moment_.size()), "Adam parameters");
  expect_dimension(static_cast<std::size_t>(grads.size()),
                   static_cast<std::size_t>(first_moment_.size()), "Adam gradients");
  ++steps_;
  const double t = static_cast<double>(steps_);
  first_moment_ = config_.beta1 * first_moment_ + (1.0 - config_.beta1) * grads;
  second_moment_ = config_.beta2 * second_moment_ + (1.0 - config_.beta2) * grads.cwiseAbs2();
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  params.array() -= config_.learning_rate * (first_moment_.array() / correction1) /
                    ((second_moment_.array() / correction2).sqrt() + config_.epsilon);
}

void Adam::step(Mlp& net, const Gradients& grads) {
  Eigen::VectorXd params = net.parameters();
  step(params, grads.flatten());
  net.set_parameters(params);
}

double binary_cross_entropy(const Eigen::RowVectorXd& probs, const Eigen::RowVectorXd& targets,
                            Eigen::RowVectorXd* grad) {
  expect_dimension(static_cast<std::size_t>(targets.size()), static_cast<std::size_t>(probs.size()),
                   "binary_cross_entropy");
  constexpr double kClip = 1e-12;
  const Eigen::Index n = probs.size();
  if (n == 0) return 0.0;
  double loss = 0.0;
  if (grad) grad->resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = std::clamp(probs(i), kClip, 1.0 - kClip);
    const double y = targets(i);
    loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    if (grad) (*grad)(i) = (p - y) / (p * (1.0 - p)) / static_cast<double>(n);
  }
  return loss / static_cast<double>(n);
}

}  // namespace churnrec::nn
