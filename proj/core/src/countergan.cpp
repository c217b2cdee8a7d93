#include "churnrec/countergan.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "churnrec/error.hpp"
#include "churnrec/rng.hpp"

namespace churnrec {

namespace {

constexpr int kBundleVersion = 1;

Eigen::MatrixXd to_matrix(const std::vector<const std::vector<double>*>& rows, std::size_t f) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t c = 0; c < rows.size(); ++c) {
    m.col(static_cast<Eigen::Index>(c)) =
        Eigen::Map<const Eigen::VectorXd>(rows[c]->data(), static_cast<Eigen::Index>(f));
  }
  return m;
}

Eigen::MatrixXd sample_columns(const Eigen::MatrixXd& pool, std::size_t count, Rng& rng) {
  Eigen::MatrixXd out(pool.rows(), static_cast<Eigen::Index>(count));
  for (std::size_t c = 0; c < count; ++c) {
    out.col(static_cast<Eigen::Index>(c)) =
        pool.col(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(pool.cols()))));
  }
  return out;
}

std::string format_double(double value) {
  std::array<char, 32> buffer{};
  auto [end, ec] = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
  if (ec != std::errc{}) throw Error("failed to format number");
  return std::string(buffer.data(), end);
}

nlohmann::json adam_to_json(const nn::AdamConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2},
          {"epsilon", c.epsilon}};
}

nn::AdamConfig adam_from_json(const nlohmann::json& j) {
  return {j.at("learning_rate").get<double>(), j.at("beta1").get<double>(),
          j.at("beta2").get<double>(), j.at("epsilon").get<double>()};
}

void write_json(const nlohmann::json& doc, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace

DistillResult distill_surrogate(const ChurnClassifier& classifier, const Dataset& data,
                                const SurrogateConfig& config) {
  if (data.records.empty()) throw PreconditionError("distill_surrogate: empty data");
  if (config.batch_size == 0) throw ConfigError("surrogate batch_size must be positive");
  if (!(config.holdout_fraction >= 0.0 && config.holdout_fraction < 1.0)) {
    throw ConfigError("surrogate holdout_fraction must lie in [0, 1)");
  }
  const std::size_t f = data.num_features();
  expect_dimension(classifier.num_features(), f, "distill_surrogate feature space");
  Rng rng(derive_seed(config.seed, "distill"));

  auto perturbed = [&](const std::vector<double>& x) {
    std::vector<double> out(f);
    for (std::size_t j = 0; j < f; ++j) {
      out[j] = std::clamp(x[j] + rng.uniform(-config.noise, config.noise), data.meta[j].lower_bound,
                          data.meta[j].upper_bound);
    }
    return out;
  };

  std::vector<std::vector<double>> points;
  points.reserve(data.size() * (1 + config.noisy_copies));
  for (const auto& r : data.records) points.push_back(r.features);
  for (std::size_t c = 0; c < config.noisy_copies; ++c) {
    for (const auto& r : data.records) points.push_back(perturbed(r.features));
  }
  const auto n_holdout = static_cast<std::size_t>(
      std::round(static_cast<double>(points.size()) * config.holdout_fraction));
  std::vector<std::vector<double>> holdout;
  holdout.reserve(n_holdout);
  for (std::size_t k = 0; k < n_holdout; ++k) {
    holdout.push_back(perturbed(data.records[rng.below(data.size())].features));
  }

  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd inputs(static_cast<Eigen::Index>(f), n);
  Eigen::RowVectorXd targets(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = points[static_cast<std::size_t>(i)];
    inputs.col(i) = Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(f));
    targets(i) = classifier.class_score(p);
  }

  DistillResult result;
  result.surrogate = nn::make_critic(f, rng);
  nn::Adam adam(result.surrogate.parameter_count(), config.adam);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto batch = static_cast<Eigen::Index>(config.batch_size);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index size = std::min(batch, n - start);
      Eigen::MatrixXd xb(inputs.rows(), size);
      Eigen::RowVectorXd yb(size);
      for (Eigen::Index k = 0; k < size; ++k) {
        xb.col(k) = inputs.col(order[static_cast<std::size_t>(start + k)]);
        yb(k) = targets(order[static_cast<std::size_t>(start + k)]);
      }
      Eigen::RowVectorXd grad;
      const double loss = nn::binary_cross_entropy(result.surrogate.forward(xb), yb, &grad);
      if (!std::isfinite(loss)) throw NumericalError("surrogate loss became non-finite");
      adam.step(result.surrogate, result.surrogate.backward(xb, grad));
    }
  }

  auto agreement = [&](const std::vector<std::vector<double>>& rows, std::size_t count) {
    if (count == 0) return 1.0;
    std::size_t agree = 0;
    for (std::size_t i = 0; i < count; ++i) {
      Eigen::Map<const Eigen::VectorXd> x(rows[i].data(), static_cast<Eigen::Index>(f));
      const int surrogate_class = result.surrogate.forward(Eigen::VectorXd(x))(0) > 0.5 ? 1 : 0;
      agree += surrogate_class == classifier.classify(rows[i]) ? 1 : 0;
    }
    return static_cast<double>(agree) / static_cast<double>(count);
  };
  result.train_agreement = agreement(points, data.size());
  result.holdout_agreement = agreement(holdout, holdout.size());
  return result;
}

void TrainConfig::validate() const {
  if (max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(checkpoint_accuracy_ceiling > 0.0 && checkpoint_accuracy_ceiling < 1.0)) {
    throw ConfigError("checkpoint_accuracy_ceiling must lie in (0, 1)");
  }
  if (!(lambda_cls >= 0.0) || !(lambda_reg >= 0.0)) {
    throw ConfigError("loss weights must be non-negative");
  }
}

CounterGanModel train_countergan(const Dataset& train,
                                 std::shared_ptr<const ChurnClassifier> classifier,
                                 const TrainConfig& config, std::optional<nn::Mlp> surrogate) {
  config.validate();
  if (!classifier) throw PreconditionError("train_countergan: no classifier");
  const std::size_t f = train.num_features();
  expect_dimension(classifier->num_features(), f, "train_countergan feature space");

  std::vector<const std::vector<double>*> real_rows;
  std::vector<const std::vector<double>*> churn_rows;
  for (const auto& r : train.records) {
    if (r.label == Label::kChurned) churn_rows.push_back(&r.features);
    if (r.label == Label::kRetained ||
        (config.real_pool == RealPool::kAllData && r.label == Label::kChurned)) {
      real_rows.push_back(&r.features);
    }
  }
  if (churn_rows.empty() || real_rows.empty()) {
    throw PreconditionError("training data must contain users with label 0 and label 1");
  }

  CounterGanModel model;
  model.classifier = classifier;
  model.constraints = train.meta;
  model.config = config;
  if (surrogate) {
    expect_dimension(surrogate->input_dim(), f, "surrogate input");
    model.surrogate = std::move(*surrogate);
  } else {
    SurrogateConfig sc = config.surrogate;
    sc.seed = derive_seed(config.seed, "surrogate");
    auto distilled = distill_surrogate(*classifier, train, sc);
    model.surrogate = std::move(distilled.surrogate);
    model.surrogate_train_agreement = distilled.train_agreement;
    model.surrogate_holdout_agreement = distilled.holdout_agreement;
  }

  Rng init_rng(derive_seed(config.seed, "countergan-init"));
  model.generator = nn::make_generator(f, init_rng);
  model.discriminator = nn::make_critic(f, init_rng);
  nn::Adam generator_opt(model.generator.parameter_count(), config.generator_adam);
  nn::Adam discriminator_opt(model.discriminator.parameter_count(), config.discriminator_adam);
  Rng rng(derive_seed(config.seed, "countergan-batches"));

  const Eigen::MatrixXd real_pool = to_matrix(real_rows, f);
  const Eigen::MatrixXd churn_pool = to_matrix(churn_rows, f);
  const std::span<const FeatureMeta> constraints(model.constraints);
  const std::size_t batch = config.batch_size;
  const Eigen::RowVectorXd ones = Eigen::RowVectorXd::Ones(static_cast<Eigen::Index>(batch));
  const Eigen::RowVectorXd zeros = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(batch));
  // L1 norm of the residual per sample, averaged over the batch.
  const double reg_scale = 1.0 / static_cast<double>(batch);

  nn::Mlp best_generator = model.generator;
  nn::Mlp best_discriminator = model.discriminator;

  for (std::size_t iteration = 1; iteration <= config.max_iterations; ++iteration) {
    TrainLogRow row;
    row.iteration = iteration;

    // Discriminator: retained users are real, projected counterfactuals are fake.
    {
      const Eigen::MatrixXd xr = sample_columns(real_pool, batch, rng);
      const Eigen::MatrixXd xg = sample_columns(churn_pool, batch, rng);
      const Eigen::MatrixXd cf =
          project_batch(xg, model.generator.forward(xg), constraints, nullptr);
      Eigen::RowVectorXd grad_real;
      Eigen::RowVectorXd grad_fake;
      row.d_loss =
          nn::binary_cross_entropy(model.discriminator.forward(xr), ones, &grad_real) +
          nn::binary_cross_entropy(model.discriminator.forward(cf), zeros, &grad_fake);
      auto g_real = model.discriminator.backward(xr, grad_real);
      const auto g_fake = model.discriminator.backward(cf, grad_fake);
      for (std::size_t l = 0; l < g_real.weights.size(); ++l) {
        g_real.weights[l] += g_fake.weights[l];
        g_real.bias[l] += g_fake.bias[l];
      }
      discriminator_opt.step(model.discriminator, g_real);
    }

    // Generator: fool the discriminator, reach class 1 under the surrogate,
    // keep the residual small.
    {
      const Eigen::MatrixXd xg = sample_columns(churn_pool, batch, rng);
      Eigen::MatrixXd pass;
      const Eigen::MatrixXd raw = model.generator.forward(xg);
      const Eigen::MatrixXd cf = project_batch(xg, raw, constraints, &pass);
      const Eigen::MatrixXd delta = cf - xg;
      Eigen::RowVectorXd grad_adv;
      Eigen::RowVectorXd grad_cls;
      const double adv = nn::binary_cross_entropy(model.discriminator.forward(cf), ones, &grad_adv);
      const double cls = nn::binary_cross_entropy(model.surrogate.forward(cf), ones, &grad_cls);
      const double reg = delta.cwiseAbs().sum() * reg_scale;
      row.g_loss = adv + config.lambda_cls * cls + config.lambda_reg * reg;

      Eigen::MatrixXd grad_cf = model.discriminator.backward(cf, grad_adv).input;
      if (config.lambda_cls != 0.0) {
        grad_cf += config.lambda_cls * model.surrogate.backward(cf, grad_cls).input;
      }
      grad_cf += (config.lambda_reg * reg_scale) * delta.array().sign().matrix();
      // The projection is flat wherever it clamps, which would strand the
      // generator outside the feasible set. Clamped actionable entries still
      // receive gradients that move the raw residual back toward the clamp.
      Eigen::MatrixXd grad_raw = grad_cf;
      for (Eigen::Index c = 0; c < grad_raw.cols(); ++c) {
        for (Eigen::Index r = 0; r < grad_raw.rows(); ++r) {
          if (pass(r, c) != 0.0) continue;
          const bool restoring = constraints[static_cast<std::size_t>(r)].actionable &&
                                 grad_raw(r, c) * (raw(r, c) - delta(r, c)) > 0.0;
          if (!restoring) grad_raw(r, c) = 0.0;
        }
      }
      generator_opt.step(model.generator, model.generator.backward(xg, grad_raw));
    }

    if (!std::isfinite(row.d_loss) || !std::isfinite(row.g_loss)) {
      throw NumericalError("countergan training diverged at iteration " + std::to_string(iteration));
    }

    // Dual accuracy on the full pools: real retained users and counterfactuals.
    const Eigen::RowVectorXd d_real = model.discriminator.forward(real_pool);
    const Eigen::MatrixXd cf_all =
        project_batch(churn_pool, model.generator.forward(churn_pool), constraints, nullptr);
    const Eigen::RowVectorXd d_fake = model.discriminator.forward(cf_all);
    row.d_acc_real = static_cast<double>((d_real.array() >= 0.5).count()) /
                     static_cast<double>(d_real.size());
    row.d_acc_fake = static_cast<double>((d_fake.array() < 0.5).count()) /
                     static_cast<double>(d_fake.size());
    row.checkpoint = row.d_acc_real <= config.checkpoint_accuracy_ceiling &&
                     row.d_acc_fake <= config.checkpoint_accuracy_ceiling;
    if (row.checkpoint) {
      model.checkpoints.push_back(iteration);
      model.selected_checkpoint = iteration;
      best_generator = model.generator;
      best_discriminator = model.discriminator;
    }
    model.training_log.push_back(row);
    if (config.on_iteration) config.on_iteration(row, model);
  }

  if (model.selected_checkpoint) {
    model.generator = std::move(best_generator);
    model.discriminator = std::move(best_discriminator);
  }
  return model;
}

RecourseAction generate_recourse(const CounterGanModel& model, std::span<const double> x,
                                 std::string user_id) {
  if (!model.classifier) throw PreconditionError("model has no classifier");
  const auto& forest = *model.classifier;
  expect_dimension(x.size(), forest.num_features(), "generate_recourse input");
  if (forest.classify(x) != 0) {
    throw PreconditionError("recourse not applicable: user is already predicted to be retained");
  }
  RecourseAction action;
  action.user_id = std::move(user_id);
  action.method = RecourseMethod::kGan;
  action.original.assign(x.begin(), x.end());
  action.pre_class = 0;

  const auto start = std::chrono::steady_clock::now();
  const Eigen::VectorXd input =
      Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::VectorXd raw = model.generator.forward(input);
  auto projected = project(x, std::span<const double>(raw.data(), x.size()), model.constraints);
  const auto end = std::chrono::steady_clock::now();

  action.delta = std::move(projected.delta);
  action.counterfactual = std::move(projected.counterfactual);
  action.cost_sq = squared_norm(action.delta);
  action.post_class = forest.classify(action.counterfactual);
  action.steps = 1;
  action.end_seconds = std::chrono::duration<double>(end - start).count();
  return action;
}

std::vector<RecourseAction> generate_recourse_batch(const CounterGanModel& model,
                                                    const Dataset& data) {
  std::vector<RecourseAction> actions;
  const auto batch_start = std::chrono::steady_clock::now();
  for (const auto& r : data.records) {
    if (model.classifier->classify(r.features) != 0) continue;
    const double offset =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - batch_start).count();
    RecourseAction action = generate_recourse(model, r.features, r.user_id);
    action.start_seconds += offset;
    action.end_seconds += offset;
    action.true_label = r.label;
    actions.push_back(std::move(action));
  }
  return actions;
}

void save_bundle(const CounterGanModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_json(model.generator.to_json(), dir / "generator.json");
  write_json(model.discriminator.to_json(), dir / "discriminator.json");
  write_json(model.surrogate.to_json(), dir / "surrogate.json");
  save_meta(model.constraints, dir / "constraints.json");

  {
    std::ofstream log(dir / "training_log.csv", std::ios::binary);
    if (!log) throw Error("cannot write training log");
    log << "iteration,d_loss,g_loss,d_acc_real,d_acc_fake,checkpoint_flag\n";
    for (const auto& row : model.training_log) {
      log << row.iteration << ',' << format_double(row.d_loss) << ','
          << format_double(row.g_loss) << ',' << format_double(row.d_acc_real) << ','
          << format_double(row.d_acc_fake) << ',' << (row.checkpoint ? 1 : 0) << '\n';
    }
  }

  const auto& c = model.config;
  nlohmann::json doc = {
      {"format", "churnrec.countergan"},
      {"version", kBundleVersion},
      {"n_features", model.constraints.size()},
      {"checkpoints", model.checkpoints},
      {"selected_checkpoint", model.selected_checkpoint ? nlohmann::json(*model.selected_checkpoint)
                                                        : nlohmann::json(nullptr)},
      {"qualifying_checkpoint", model.has_qualifying_checkpoint()},
      {"surrogate_train_agreement", model.surrogate_train_agreement},
      {"surrogate_holdout_agreement", model.surrogate_holdout_agreement},
      {"config",
       {{"max_iterations", c.max_iterations},
        {"batch_size", c.batch_size},
        {"checkpoint_accuracy_ceiling", c.checkpoint_accuracy_ceiling},
        {"lambda_cls", c.lambda_cls},
        {"lambda_reg", c.lambda_reg},
        {"seed", c.seed},
        {"real_pool", c.real_pool == RealPool::kRetained ? "retained" : "all"},
        {"generator_adam", adam_to_json(c.generator_adam)},
        {"discriminator_adam", adam_to_json(c.discriminator_adam)}}}};
  write_json(doc, dir / "model.json");
}

CounterGanModel load_bundle(const std::filesystem::path& dir,
                            std::shared_ptr<const ChurnClassifier> classifier) {
  if (!classifier) throw PreconditionError("load_bundle: no classifier");
  CounterGanModel model;
  model.classifier = std::move(classifier);
  const auto doc = read_json(dir / "model.json");
  try {
    if (doc.at("format").get<std::string>() != "churnrec.countergan" ||
        doc.at("version").get<int>() != kBundleVersion) {
      throw ParseError("unsupported model bundle in " + dir.string());
    }
    model.generator = nn::Mlp::from_json(read_json(dir / "generator.json"));
    model.discriminator = nn::Mlp::from_json(read_json(dir / "discriminator.json"));
    model.surrogate = nn::Mlp::from_json(read_json(dir / "surrogate.json"));
    model.constraints = load_meta(dir / "constraints.json");
    model.checkpoints = doc.at("checkpoints").get<std::vector<std::size_t>>();
    if (!doc.at("selected_checkpoint").is_null()) {
      model.selected_checkpoint = doc.at("selected_checkpoint").get<std::size_t>();
    }
    model.surrogate_train_agreement = doc.at("surrogate_train_agreement").get<double>();
    model.surrogate_holdout_agreement = doc.at("surrogate_holdout_agreement").get<double>();
    const auto& c = doc.at("config");
    model.config.max_iterations = c.at("max_iterations").get<std::size_t>();
    model.config.batch_size = c.at("batch_size").get<std::size_t>();
    model.config.checkpoint_accuracy_ceiling = c.at("checkpoint_accuracy_ceiling").get<double>();
    model.config.lambda_cls = c.at("lambda_cls").get<double>();
    model.config.lambda_reg = c.at("lambda_reg").get<double>();
    model.config.seed = c.at("seed").get<std::uint64_t>();
    model.config.real_pool =
        c.at("real_pool").get<std::string>() == "all" ? RealPool::kAllData : RealPool::kRetained;
    model.config.generator_adam = adam_from_json(c.at("generator_adam"));
    model.config.discriminator_adam = adam_from_json(c.at("discriminator_adam"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid model bundle: ") + e.what());
  }
  expect_dimension(model.constraints.size(), model.classifier->num_features(),
                   "bundle constraints vs forest");
  expect_dimension(model.generator.input_dim(), model.constraints.size(), "generator input");

  std::ifstream log(dir / "training_log.csv");
  if (!log) throw ParseError("missing training_log.csv in " + dir.string());
  std::string line;
  std::getline(log, line);
  while (std::getline(log, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw ParseError("malformed training log row");
    TrainLogRow row;
    row.iteration = std::stoul(cells[0]);
    row.d_loss = std::stod(cells[1]);
    row.g_loss = std::stod(cells[2]);
    row.d_acc_real = std::stod(cells[3]);
    row.d_acc_fake = std::stod(cells[4]);
    row.checkpoint = cells[5] == "1";
    model.training_log.push_back(row);
  }
  return model;
}

}  // namespace churnrec
