#include <doctest.h>

#include <cmath>

#include "churnrec/error.hpp"
#include "churnrec/nn.hpp"

using namespace churnrec;
using namespace churnrec::nn;

namespace {

// Scalar loss 0.5 * sum(out .* w) with fixed random weights, so every output
// unit carries a distinct upstream gradient.
double probe_loss(const Mlp& net, const Eigen::MatrixXd& batch, const Eigen::MatrixXd& w) {
  return 0.5 * net.forward(batch).cwiseProduct(w).sum();
}

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = rng.uniform(-scale, scale);
  }
  return m;
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("forward pass on hand-set weights") {
    DenseLayer hidden{Eigen::MatrixXd(2, 2), Eigen::VectorXd(2), Activation::kRelu};
    hidden.weights << 1.0, -1.0, 2.0, 0.5;
    hidden.bias << 0.0, -1.0;
    DenseLayer out{Eigen::MatrixXd(1, 2), Eigen::VectorXd(1), Activation::kIdentity};
    out.weights << 3.0, -2.0;
    out.bias << 0.25;
    const Mlp net({hidden, out});
    Eigen::VectorXd x(2);
    x << 2.0, 1.0;
    // hidden = relu([1, 3.5]) ; out = 3 - 7 + 0.25
    CHECK(net.forward(x)(0) == doctest::Approx(-3.75));
    x << -1.0, 1.0;
    // hidden = relu([-2, -2.5]) = 0
    CHECK(net.forward(x)(0) == doctest::Approx(0.25));
    CHECK(net.parameter_count() == 9);
    CHECK(net.input_dim() == 2);
    CHECK(net.output_dim() == 1);
  }

  TEST_CASE("sigmoid and tanh outputs") {
    DenseLayer sig{Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Constant(1, std::log(3.0)),
                   Activation::kSigmoid};
    CHECK(Mlp({sig}).forward(Eigen::VectorXd(Eigen::VectorXd::Zero(1)))(0) == doctest::Approx(0.75));
    DenseLayer th{Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1), Activation::kTanh};
    CHECK(Mlp({th}).forward(Eigen::VectorXd(Eigen::VectorXd::Constant(1, 0.5)))(0) ==
          doctest::Approx(std::tanh(0.5)));
  }

  TEST_CASE("shape errors") {
    CHECK_THROWS_AS(Mlp(std::vector<DenseLayer>{}), ConfigError);
    DenseLayer a{Eigen::MatrixXd::Zero(3, 2), Eigen::VectorXd::Zero(3), Activation::kRelu};
    DenseLayer b{Eigen::MatrixXd::Zero(1, 4), Eigen::VectorXd::Zero(1), Activation::kIdentity};
    CHECK_THROWS_AS(Mlp({a, b}), DimensionError);
    DenseLayer c{Eigen::MatrixXd::Zero(3, 2), Eigen::VectorXd::Zero(2), Activation::kRelu};
    CHECK_THROWS_AS(Mlp({c}), DimensionError);
    DenseLayer d{Eigen::MatrixXd::Constant(1, 1, NAN), Eigen::VectorXd::Zero(1),
                 Activation::kRelu};
    CHECK_THROWS_AS(Mlp({d}), NumericalError);
  }

  TEST_CASE("backward matches central differences") {
    Rng rng(17);
    const std::vector<Activation> kinds = {Activation::kTanh, Activation::kSigmoid,
                                           Activation::kIdentity, Activation::kRelu};
    for (int trial = 0; trial < 60; ++trial) {
      const std::size_t in = 1 + rng.below(5);
      const std::size_t h = 1 + rng.below(6);
      const std::size_t out = 1 + rng.below(3);
      const Activation hidden_act = kinds[rng.below(kinds.size())];
      const Activation out_act = kinds[rng.below(3)];
      Mlp net = Mlp::create(in, {{h, hidden_act}, {out, out_act}}, rng);
      const Eigen::Index batch_size = 1 + static_cast<Eigen::Index>(rng.below(4));
      const Eigen::MatrixXd batch = random_matrix(rng, static_cast<Eigen::Index>(in), batch_size);
      const Eigen::MatrixXd w = random_matrix(rng, static_cast<Eigen::Index>(out), batch_size);

      const Gradients g = net.backward(batch, 0.5 * w);
      const Eigen::VectorXd analytic = g.flatten();
      Eigen::VectorXd params = net.parameters();
      REQUIRE(analytic.size() == params.size());
      const double eps = 1e-6;
      for (Eigen::Index p = 0; p < params.size(); ++p) {
        Eigen::VectorXd plus = params, minus = params;
        plus(p) += eps;
        minus(p) -= eps;
        Mlp a = net, b = net;
        a.set_parameters(plus);
        b.set_parameters(minus);
        const double numeric = (probe_loss(a, batch, w) - probe_loss(b, batch, w)) / (2 * eps);
        // ReLU kinks make isolated probes unreliable; they are vanishingly rare.
        CHECK(analytic(p) == doctest::Approx(numeric).epsilon(1e-5).scale(1.0));
      }
      for (Eigen::Index r = 0; r < batch.rows(); ++r) {
        for (Eigen::Index c = 0; c < batch.cols(); ++c) {
          Eigen::MatrixXd plus = batch, minus = batch;
          plus(r, c) += eps;
          minus(r, c) -= eps;
          const double numeric =
              (probe_loss(net, plus, w) - probe_loss(net, minus, w)) / (2 * eps);
          CHECK(g.input(r, c) == doctest::Approx(numeric).epsilon(1e-5).scale(1.0));
        }
      }
    }
  }

  TEST_CASE("parameters round trip") {
    Rng rng(2);
    Mlp net = make_critic(5, rng);
    Eigen::VectorXd p = net.parameters();
    CHECK(static_cast<std::size_t>(p.size()) == net.parameter_count());
    p.array() += 0.5;
    net.set_parameters(p);
    CHECK(net.parameters() == p);
    CHECK_THROWS_AS(net.set_parameters(Eigen::VectorXd::Zero(3)), DimensionError);
  }

  TEST_CASE("factory shapes") {
    Rng rng(4);
    const auto g = make_generator(7, rng);
    CHECK(g.input_dim() == 7);
    CHECK(g.output_dim() == 7);
    CHECK(g.layers().back().activation == Activation::kIdentity);
    const auto d = make_critic(7, rng);
    CHECK(d.output_dim() == 1);
    CHECK(d.layers().back().activation == Activation::kSigmoid);
    for (const auto& layer : g.layers()) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weights.cols()));
      CHECK(layer.weights.cwiseAbs().maxCoeff() <= bound);
    }
  }

  TEST_CASE("adam first step moves by the learning rate") {
    Adam adam(3, {0.1});
    Eigen::VectorXd p = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd g(3);
    g << 2.0, -0.5, 0.0;
    adam.step(p, g);
    // Bias-corrected moments give m/sqrt(v) = sign(g) on the first step.
    CHECK(p(0) == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(p(1) == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(p(2) == 0.0);
    CHECK(adam.steps() == 1);
  }

  TEST_CASE("adam second step follows the moment recursions") {
    AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
    Adam adam(1, cfg);
    Eigen::VectorXd p = Eigen::VectorXd::Constant(1, 1.0);
    adam.step(p, Eigen::VectorXd::Constant(1, 1.0));
    adam.step(p, Eigen::VectorXd::Constant(1, 3.0));
    const double m = 0.9 * 0.1 + 0.1 * 3.0;
    const double v = 0.999 * 0.001 + 0.001 * 9.0;
    const double mhat = m / (1 - 0.81);
    const double vhat = v / (1 - 0.999 * 0.999);
    const double expected = 1.0 - 0.01 - 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(p(0) == doctest::Approx(expected).epsilon(1e-9));
  }

  TEST_CASE("adam descends a quadratic bowl") {
    Adam adam(2, {0.05});
    Eigen::VectorXd p(2);
    p << 3.0, -2.0;
    Eigen::VectorXd center(2);
    center << 0.5, 1.5;
    for (int i = 0; i < 2000; ++i) {
      Eigen::VectorXd grad = 2.0 * (p - center);
      grad(1) *= 10.0;
      adam.step(p, grad);
    }
    CHECK((p - center).norm() < 1e-3);
  }

  TEST_CASE("binary cross-entropy values and gradient") {
    Eigen::RowVectorXd p(3), y(3), grad;
    p << 0.9, 0.2, 0.5;
    y << 1.0, 0.0, 0.3;
    const double loss = binary_cross_entropy(p, y, &grad);
    const double expected =
        -(std::log(0.9) + std::log(0.8) + 0.3 * std::log(0.5) + 0.7 * std::log(0.5)) / 3.0;
    CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
    for (int i = 0; i < 3; ++i) {
      Eigen::RowVectorXd hi = p, lo = p;
      hi(i) += 1e-7;
      lo(i) -= 1e-7;
      const double numeric =
          (binary_cross_entropy(hi, y) - binary_cross_entropy(lo, y)) / 2e-7;
      CHECK(grad(i) == doctest::Approx(numeric).epsilon(1e-5));
    }
    Eigen::RowVectorXd saturated(1), target(1);
    saturated << 0.0;
    target << 1.0;
    CHECK(std::isfinite(binary_cross_entropy(saturated, target)));
    CHECK_THROWS_AS(binary_cross_entropy(p, Eigen::RowVectorXd::Zero(2)), DimensionError);
  }

  TEST_CASE("json round trip is exact") {
    Rng rng(6);
    const Mlp net = make_generator(4, rng, 8);
    const Mlp back = Mlp::from_json(nlohmann::json::parse(net.to_json().dump()));
    CHECK(back.parameters() == net.parameters());
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      CHECK(back.layers()[l].activation == net.layers()[l].activation);
    }
    auto doc = net.to_json();
    doc["format"] = "other";
    CHECK_THROWS_AS(Mlp::from_json(doc), ParseError);
    CHECK_THROWS_AS(parse_activation("swish"), ParseError);
  }
}
