#include "churnrec/tools/service.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <httplib.h>

#include "churnrec/error.hpp"
#include "churnrec/tools/pipeline.hpp"

namespace churnrec::tools {

namespace {

using nlohmann::json;

// Request problems surface as 400 responses carrying this detail.
struct BadRequest {
  std::string error;
  std::string detail;
};

Response error_response(int status, std::string error, std::string detail) {
  return {status, {{"error", std::move(error)}, {"detail", std::move(detail)}}};
}

json parse_body(std::string_view body) {
  json doc = json::parse(body.begin(), body.end(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    throw BadRequest{"invalid_json", "request body must be a JSON object"};
  }
  return doc;
}

std::string describe(const FeatureMeta& m, std::size_t index) {
  return "feature " + std::to_string(index) + " '" + m.name + "'";
}

std::vector<double> parse_features(const ServiceState& state, const json& doc) {
  if (!doc.contains("features") || !doc.at("features").is_array()) {
    throw BadRequest{"invalid_features", "body must contain a 'features' array"};
  }
  const auto& array = doc.at("features");
  if (array.size() != state.meta.size()) {
    throw BadRequest{"dimension_mismatch", "expected " + std::to_string(state.meta.size()) +
                                               " features, got " + std::to_string(array.size())};
  }
  std::vector<double> x(array.size());
  for (std::size_t j = 0; j < array.size(); ++j) {
    const auto& m = state.meta[j];
    if (!array[j].is_number()) {
      throw BadRequest{"invalid_features", describe(m, j) + " is not a number"};
    }
    x[j] = array[j].get<double>();
    if (!std::isfinite(x[j])) {
      throw BadRequest{"invalid_features", describe(m, j) + " is not finite"};
    }
    if (x[j] < m.lower_bound || x[j] > m.upper_bound) {
      throw BadRequest{"out_of_bounds", describe(m, j) + " value " + json(x[j]).dump() +
                                            " outside [" + json(m.lower_bound).dump() + ", " +
                                            json(m.upper_bound).dump() + "]"};
    }
  }
  return x;
}

json meta_json(const FeatureMeta& m) {
  return {{"name", m.name},
          {"actionable", m.actionable},
          {"direction", std::string(to_string(m.direction))},
          {"lower_bound", m.lower_bound},
          {"upper_bound", m.upper_bound},
          {"aggregation_window", std::string(to_string(m.window))}};
}

json prediction_json(const ChurnClassifier& forest, std::span<const double> x) {
  const SurvivalCurve curve = forest.predict_curve(x);
  const MedianLifetime median = median_lifetime(curve);
  return {{"class", classify_lifetime(median.days, forest.threshold_days())},
          {"score", score_at_threshold(curve, forest.threshold_days())},
          {"median_lifetime_days", median.days},
          {"median_truncated", median.truncated},
          {"threshold_days", forest.threshold_days()},
          {"survival_curve", {{"times", curve.times}, {"probs", curve.probs}}}};
}

template <typename Handler>
Response guarded(Handler&& handler) {
  try {
    return handler();
  } catch (const BadRequest& e) {
    return error_response(400, e.error, e.detail);
  } catch (const DimensionError& e) {
    return error_response(400, "dimension_mismatch", e.what());
  } catch (const NumericalError& e) {
    return error_response(500, "numerical_failure", e.what());
  }
}

}  // namespace

ServiceState load_service_state(const std::filesystem::path& forest,
                                const std::filesystem::path& gan_dir,
                                const std::filesystem::path& meta) {
  ServiceState state;
  state.forest = std::make_shared<const ChurnClassifier>(load_forest(forest));
  if (!std::filesystem::exists(meta)) throw MissingArtifactError(meta, "generate-data");
  state.meta = load_meta(meta);
  expect_dimension(state.meta.size(), state.forest->num_features(), "meta vs forest");
  if (!std::filesystem::exists(gan_dir / "model.json")) {
    throw MissingArtifactError(gan_dir / "model.json", "train-gan");
  }
  state.gan = std::make_shared<const CounterGanModel>(load_bundle(gan_dir, state.forest));
  return state;
}

Response handle_features(const ServiceState& state) {
  json out = json::array();
  for (const auto& m : state.meta) out.push_back(meta_json(m));
  return {200, out};
}

Response handle_predict(const ServiceState& state, std::string_view body) {
  return guarded([&] {
    const auto x = parse_features(state, parse_body(body));
    return Response{200, prediction_json(*state.forest, x)};
  });
}

Response handle_recourse(const ServiceState& state, std::string_view body) {
  return guarded([&] {
    const auto x = parse_features(state, parse_body(body));
    if (state.forest->classify(x) != 0) {
      return error_response(409, "recourse_not_applicable",
                            "user is already predicted to be retained");
    }
    const RecourseAction action = generate_recourse(*state.gan, x);
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(action.delta[a]) > std::abs(action.delta[b]);
    });
    json changes = json::array();
    for (std::size_t j : order) {
      if (action.delta[j] == 0.0) continue;
      changes.push_back({{"name", state.meta[j].name},
                         {"index", j},
                         {"original", action.original[j]},
                         {"required", action.counterfactual[j]},
                         {"delta", action.delta[j]}});
    }
    return Response{200,
                    {{"delta", action.delta},
                     {"counterfactual", action.counterfactual},
                     {"pre_class", action.pre_class},
                     {"post_class", action.post_class},
                     {"cost_sq", action.cost_sq},
                     {"per_feature_changes", changes}}};
  });
}

Response handle_whatif(const ServiceState& state, std::string_view body) {
  return guarded([&] {
    const json doc = parse_body(body);
    const auto x = parse_features(state, doc);
    std::vector<double> edited = x;
    if (doc.contains("edits")) {
      const auto& edits = doc.at("edits");
      if (!edits.is_object()) {
        throw BadRequest{"invalid_edits", "'edits' must map feature names to values"};
      }
      for (const auto& [name, value] : edits.items()) {
        const auto it = std::find_if(state.meta.begin(), state.meta.end(),
                                     [&](const FeatureMeta& m) { return m.name == name; });
        if (it == state.meta.end()) throw BadRequest{"unknown_feature", "unknown feature '" + name + "'"};
        if (!value.is_number() || !std::isfinite(value.get<double>())) {
          throw BadRequest{"invalid_edits", "edit for '" + name + "' is not a finite number"};
        }
        edited[static_cast<std::size_t>(it - state.meta.begin())] = value.get<double>();
      }
    }
    json out = prediction_json(*state.forest, edited);
    json violations = json::array();
    for (const auto& v : check_constraints(x, edited, state.meta)) {
      violations.push_back({{"feature", state.meta[v.feature].name},
                            {"index", v.feature},
                            {"kind", v.kind}});
    }
    out["violated_constraints"] = violations;
    out["features"] = edited;
    return Response{200, out};
  });
}

struct Service::Impl {
  httplib::Server server;
};

Service::Service(const ServiceState& state) : impl_(std::make_unique<Impl>()) {
  auto& server = impl_->server;
  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body.dump(), "application/json");
  };
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.status = 204;
  });
  server.Get("/features", [&state, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, handle_features(state));
  });
  server.Post("/predict", [&state, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_predict(state, req.body));
  });
  server.Post("/recourse", [&state, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_recourse(state, req.body));
  });
  server.Post("/whatif", [&state, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_whatif(state, req.body));
  });
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(json{{"error", "not_found"}, {"detail", "no such endpoint"}}.dump(),
                    "application/json");
  });
}

Service::~Service() = default;

int Service::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool Service::run() { return impl_->server.listen_after_bind(); }

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

void Service::stop() { impl_->server.stop(); }

bool serve(const ServiceState& state, const std::string& host, int port) {
  Service service(state);
  if (service.bind(host, port) < 0) return false;
  return service.run();
}

}  // namespace churnrec::tools
