#include <doctest.h>

#include <thread>

#include "churnrec/tools/service.hpp"
#include "support.hpp"

// After Eigen: <resolv.h> defines a _res macro that clashes with Eigen internals.
#include <httplib.h>

using namespace churnrec;
using namespace churnrec::tools;
using nlohmann::json;

namespace {

// One split on f0 at 0.5; the generator always proposes (+0.6, +0.1, +0.3)
// and f2 is immutable.
ServiceState toy_state() {
  ServiceState state;
  state.meta = testing::plain_meta(3);
  state.meta[2].actionable = false;
  auto forest = std::make_shared<const ChurnClassifier>(testing::one_split_forest(3));
  state.forest = forest;

  auto gan = std::make_shared<CounterGanModel>();
  nn::DenseLayer layer{Eigen::MatrixXd::Zero(3, 3), Eigen::VectorXd(3), nn::Activation::kIdentity};
  layer.bias << 0.6, 0.1, 0.3;
  gan->generator = nn::Mlp({layer});
  gan->classifier = forest;
  gan->constraints = state.meta;
  state.gan = gan;
  return state;
}

json body(std::vector<double> x) { return json{{"features", x}}; }

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("features lists the meta in order") {
    const auto state = toy_state();
    const auto r = handle_features(state);
    CHECK(r.status == 200);
    REQUIRE(r.body.size() == 3);
    CHECK(r.body[0]["name"] == "f0");
    CHECK(r.body[2]["actionable"] == false);
    CHECK(r.body[1]["direction"] == "free");
    CHECK(r.body[1]["lower_bound"] == 0.0);
    CHECK(r.body[1]["upper_bound"] == 1.0);
  }

  TEST_CASE("predict reports class, median, and curve") {
    const auto state = toy_state();
    const auto low = handle_predict(state, body({0.2, 0.5, 0.5}).dump());
    CHECK(low.status == 200);
    CHECK(low.body["class"] == 0);
    CHECK(low.body["score"] == 0.0);
    CHECK(low.body["median_lifetime_days"] == 30.0);
    CHECK(low.body["median_truncated"] == false);
    CHECK(low.body["threshold_days"] == 90.0);
    CHECK(low.body["survival_curve"]["times"] == json::array({30.0}));
    CHECK(low.body["survival_curve"]["probs"] == json::array({0.0}));
    const auto high = handle_predict(state, body({0.8, 0.5, 0.5}).dump());
    CHECK(high.body["class"] == 1);
    CHECK(high.body["score"] == 1.0);
    CHECK(high.body["median_truncated"] == true);
  }

  TEST_CASE("malformed inputs get a 400 naming the feature") {
    const auto state = toy_state();
    auto expect = [&](const std::string& text, const std::string& error,
                      const std::string& needle) {
      for (auto* handler : {&handle_predict, &handle_recourse, &handle_whatif}) {
        const auto r = (*handler)(state, text);
        CHECK(r.status == 400);
        CHECK(r.body["error"] == error);
        CHECK(r.body["detail"].get<std::string>().find(needle) != std::string::npos);
      }
    };
    expect(body({0.1, 0.2}).dump(), "dimension_mismatch", "expected 3");
    expect(R"({"features": [0.1, "x", 0.2]})", "invalid_features", "feature 1 'f1'");
    expect(R"({"features": [0.1, 0.2, null]})", "invalid_features", "'f2'");
    expect(body({0.1, 0.2, 1.5}).dump(), "out_of_bounds", "feature 2 'f2'");
    expect("{not json", "invalid_json", "JSON object");
    expect("[1, 2, 3]", "invalid_json", "JSON object");
    expect(R"({"x": [1]})", "invalid_features", "'features'");
  }

  TEST_CASE("recourse returns the projected action") {
    const auto state = toy_state();
    const auto r = handle_recourse(state, body({0.2, 0.5, 0.5}).dump());
    REQUIRE(r.status == 200);
    CHECK(r.body["pre_class"] == 0);
    CHECK(r.body["post_class"] == 1);
    CHECK(r.body["delta"][0].get<double>() == doctest::Approx(0.6));
    CHECK(r.body["delta"][1].get<double>() == doctest::Approx(0.1));
    CHECK(r.body["delta"][2] == 0.0);
    CHECK(r.body["cost_sq"].get<double>() == doctest::Approx(0.37));
    const auto& changes = r.body["per_feature_changes"];
    REQUIRE(changes.size() == 2);
    CHECK(changes[0]["name"] == "f0");
    CHECK(changes[0]["required"].get<double>() == doctest::Approx(0.8));
    CHECK(changes[1]["name"] == "f1");
    CHECK(changes[1]["original"] == 0.5);

    // Clamped at the upper bound.
    const auto clamped = handle_recourse(state, body({0.5, 0.95, 0.5}).dump());
    CHECK(clamped.body["counterfactual"][0] == 1.0);
    CHECK(clamped.body["delta"][1].get<double>() == doctest::Approx(0.05));
    CHECK(clamped.body["per_feature_changes"][0]["name"] == "f0");
  }

  TEST_CASE("recourse is refused for retained users") {
    const auto state = toy_state();
    const auto r = handle_recourse(state, body({0.9, 0.5, 0.5}).dump());
    CHECK(r.status == 409);
    CHECK(r.body["error"] == "recourse_not_applicable");
  }

  TEST_CASE("what-if applies edits and reports violations") {
    const auto state = toy_state();
    const json flip = {{"features", {0.2, 0.5, 0.5}}, {"edits", {{"f0", 0.9}}}};
    const auto a = handle_whatif(state, flip.dump());
    REQUIRE(a.status == 200);
    CHECK(a.body["class"] == 1);
    CHECK(a.body["features"] == json::array({0.9, 0.5, 0.5}));
    CHECK(a.body["violated_constraints"].empty());

    const json frozen = {{"features", {0.2, 0.5, 0.5}}, {"edits", {{"f2", 0.1}, {"f1", 2.0}}}};
    const auto b = handle_whatif(state, frozen.dump());
    REQUIRE(b.status == 200);
    REQUIRE(b.body["violated_constraints"].size() == 2);
    CHECK(b.body["violated_constraints"][0]["kind"] == "out_of_bounds");
    CHECK(b.body["violated_constraints"][0]["feature"] == "f1");
    CHECK(b.body["violated_constraints"][1]["kind"] == "not_actionable");

    const auto none = handle_whatif(state, body({0.2, 0.5, 0.5}).dump());
    CHECK(none.body["class"] == 0);

    const json unknown = {{"features", {0.2, 0.5, 0.5}}, {"edits", {{"zz", 0.1}}}};
    const auto c = handle_whatif(state, unknown.dump());
    CHECK(c.status == 400);
    CHECK(c.body["error"] == "unknown_feature");
    const json bad = {{"features", {0.2, 0.5, 0.5}}, {"edits", {{"f0", "high"}}}};
    CHECK(handle_whatif(state, bad.dump()).body["error"] == "invalid_edits");
  }

  TEST_CASE("endpoints agree with each other") {
    const auto state = toy_state();
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
      const auto x = testing::random_point(rng, state.meta);
      const auto p = handle_predict(state, body(x).dump());
      CHECK(p.body["class"] == state.forest->classify(x));
      json empty_edit = {{"features", x}, {"edits", json::object()}};
      const auto w = handle_whatif(state, empty_edit.dump());
      CHECK(w.body["class"] == p.body["class"]);
      CHECK(w.body["score"] == p.body["score"]);
      const auto r = handle_recourse(state, body(x).dump());
      if (p.body["class"] == 1) {
        CHECK(r.status == 409);
        continue;
      }
      REQUIRE(r.status == 200);
      const auto cf = r.body["counterfactual"].get<std::vector<double>>();
      CHECK(handle_predict(state, body(cf).dump()).body["class"] == r.body["post_class"]);
      json edits = json::object();
      for (std::size_t j = 0; j < cf.size(); ++j) edits[state.meta[j].name] = cf[j];
      const auto applied = handle_whatif(state, json{{"features", x}, {"edits", edits}}.dump());
      CHECK(applied.body["class"] == r.body["post_class"]);
      CHECK(applied.body["violated_constraints"].empty());
    }
  }

  TEST_CASE("http front end serves the handlers") {
    const auto state = toy_state();
    Service service(state);
    const int port = service.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread runner([&] { service.run(); });
    service.wait_until_ready();

    httplib::Client client("127.0.0.1", port);
    const auto features = client.Get("/features");
    REQUIRE(features);
    CHECK(features->status == 200);
    CHECK(features->get_header_value("Access-Control-Allow-Origin") == "*");
    CHECK(json::parse(features->body).size() == 3);

    const auto predict = client.Post("/predict", body({0.2, 0.5, 0.5}).dump(), "application/json");
    REQUIRE(predict);
    CHECK(json::parse(predict->body)["class"] == 0);

    const auto rejected = client.Post("/recourse", body({0.9, 0.5, 0.5}).dump(),
                                      "application/json");
    REQUIRE(rejected);
    CHECK(rejected->status == 409);

    const auto preflight = client.Options("/whatif");
    REQUIRE(preflight);
    CHECK(preflight->status == 204);
    CHECK(preflight->get_header_value("Access-Control-Allow-Methods").find("POST") !=
          std::string::npos);

    const auto missing = client.Get("/nope");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    CHECK(json::parse(missing->body)["error"] == "not_found");

    service.stop();
    runner.join();
  }
}
