#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "churnrec/error.hpp"
#include "churnrec/recourse.hpp"
#include "support.hpp"

using namespace churnrec;

namespace {

std::vector<FeatureMeta> mixed_meta() {
  auto meta = testing::plain_meta(4);
  meta[0].direction = Direction::kIncreaseOnly;
  meta[0].upper_bound = 4.0;
  meta[1].direction = Direction::kDecreaseOnly;
  meta[2].actionable = false;
  return meta;
}

bool near(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t j = 0; j < a.size(); ++j) {
    if (std::abs(a[j] - b[j]) > 1e-12) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("recourse") {
  TEST_CASE("projection examples") {
    const auto meta = mixed_meta();
    const std::vector<double> x{1.0, 0.5, 0.5, 0.5};
    CHECK(near(project_action(x, std::vector<double>{0.5, -0.2, 0.3, 0.1}, meta),
               {0.5, -0.2, 0.0, 0.1}));
    // Wrong-signed directional moves and the immutable feature are zeroed.
    CHECK(near(project_action(x, std::vector<double>{-0.5, 0.2, -0.3, -0.1}, meta),
               {0.0, 0.0, 0.0, -0.1}));
    // Overshoots stop at the bounds.
    const auto p = project(x, std::vector<double>{9.0, -9.0, 0.0, 9.0}, meta);
    CHECK(p.counterfactual == std::vector<double>{4.0, 0.0, 0.5, 1.0});
    CHECK(near(p.delta, {3.0, -0.5, 0.0, 0.5}));
  }

  TEST_CASE("projection errors") {
    const auto meta = mixed_meta();
    CHECK_THROWS_AS(project_action(std::vector<double>{0, 0, 0}, std::vector<double>{0, 0, 0},
                                   meta),
                    DimensionError);
    CHECK_THROWS_AS(project_action(std::vector<double>{0, 0, 0, 0},
                                   std::vector<double>{NAN, 0, 0, 0}, meta),
                    NumericalError);
  }

  TEST_CASE("projection properties on random inputs") {
    Rng rng(31);
    for (int trial = 0; trial < 2000; ++trial) {
      auto meta = testing::plain_meta(6);
      for (auto& m : meta) {
        m.actionable = rng.uniform() < 0.8;
        const auto d = rng.below(3);
        m.direction = d == 0 ? Direction::kFree
                             : (d == 1 ? Direction::kIncreaseOnly : Direction::kDecreaseOnly);
        m.lower_bound = rng.uniform(-1.0, 0.0);
        m.upper_bound = rng.uniform(0.5, 2.0);
      }
      const auto x = testing::random_point(rng, meta);
      std::vector<double> raw(6);
      for (auto& r : raw) r = rng.uniform(-3.0, 3.0);
      const auto p = project(x, raw, meta);
      CHECK(check_constraints(x, p.counterfactual, meta).empty());
      for (std::size_t j = 0; j < 6; ++j) {
        CHECK(std::abs(p.counterfactual[j] - (x[j] + p.delta[j])) <= 1e-12);
        // Never moves further than asked, never against the request.
        CHECK(std::abs(p.delta[j]) <= std::abs(raw[j]) + 1e-12);
        CHECK(p.delta[j] * raw[j] >= 0.0);
      }
      // Idempotent: projecting the projected delta changes nothing.
      const auto again = project(x, p.delta, meta);
      for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(again.delta[j] - p.delta[j]) <= 1e-12);
    }
  }

  TEST_CASE("batched projection agrees with the scalar path") {
    Rng rng(5);
    const auto meta = mixed_meta();
    Eigen::MatrixXd x(4, 20), raw(4, 20), pass;
    for (Eigen::Index c = 0; c < 20; ++c) {
      const auto point = testing::random_point(rng, meta);
      for (Eigen::Index r = 0; r < 4; ++r) {
        x(r, c) = point[static_cast<std::size_t>(r)];
        raw(r, c) = rng.uniform(-2.0, 2.0);
      }
    }
    const Eigen::MatrixXd cf = project_batch(x, raw, meta, &pass);
    for (Eigen::Index c = 0; c < 20; ++c) {
      std::vector<double> xc(4), rc(4);
      for (Eigen::Index r = 0; r < 4; ++r) {
        xc[static_cast<std::size_t>(r)] = x(r, c);
        rc[static_cast<std::size_t>(r)] = raw(r, c);
      }
      const auto p = project(xc, rc, meta);
      for (Eigen::Index r = 0; r < 4; ++r) {
        const auto j = static_cast<std::size_t>(r);
        CHECK(cf(r, c) == p.counterfactual[j]);
        CHECK(pass(r, c) == (std::abs(p.delta[j] - rc[j]) <= 1e-12 ? 1.0 : 0.0));
      }
    }
    CHECK(pass.row(2).sum() == 0.0);
  }

  TEST_CASE("constraint checks name each violated rule") {
    const auto meta = mixed_meta();
    const std::vector<double> x{1.0, 0.5, 0.5, 0.5};
    const auto v = check_constraints(x, std::vector<double>{0.5, 0.9, 0.6, 1.5}, meta);
    REQUIRE(v.size() == 4);
    CHECK(v[0].feature == 0);
    CHECK(v[0].kind == "increase_only");
    CHECK(v[1].kind == "decrease_only");
    CHECK(v[2].kind == "not_actionable");
    CHECK(v[3].kind == "out_of_bounds");
    CHECK(check_constraints(x, x, meta).empty());
  }

  TEST_CASE("actions and timings round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "churnrec_test_actions";
    std::filesystem::create_directories(dir);
    const auto meta = testing::plain_meta(2);
    std::vector<RecourseAction> actions(2);
    actions[0] = {"a", RecourseMethod::kGan, {0.1, 0.2}, {0.3, 0.0}, {0.4, 0.2}, 0, 1,
                  0.09, Label::kChurned, 1, 0.0, 1e-5};
    actions[1] = {"b", RecourseMethod::kRgd, {0.5, 0.6}, {0.0, -0.1 / 3}, {0.5, 0.6 - 0.1 / 3},
                  0, 0, 1.0 / 900, Label::kIndeterminate, 17, 1e-5, 0.25};
    save_actions(actions, meta, dir / "a.csv");
    save_timings(actions, dir / "t.csv");
    auto back = load_actions(dir / "a.csv", meta);
    load_timings(back, dir / "t.csv");
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(back[i].user_id == actions[i].user_id);
      CHECK(back[i].method == actions[i].method);
      CHECK(back[i].original == actions[i].original);
      CHECK(back[i].delta == actions[i].delta);
      CHECK(back[i].counterfactual == actions[i].counterfactual);
      CHECK(back[i].pre_class == actions[i].pre_class);
      CHECK(back[i].post_class == actions[i].post_class);
      CHECK(back[i].cost_sq == actions[i].cost_sq);
      CHECK(back[i].true_label == actions[i].true_label);
      CHECK(back[i].steps == actions[i].steps);
      CHECK(back[i].seconds() == actions[i].seconds());
    }
    CHECK_THROWS_AS(load_actions(dir / "a.csv", testing::plain_meta(3)), ParseError);
    CHECK_THROWS_AS(load_actions(dir / "missing.csv", meta), ParseError);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("method names") {
    CHECK(parse_method("gan") == RecourseMethod::kGan);
    CHECK(parse_method("rgd") == RecourseMethod::kRgd);
    CHECK(to_string(RecourseMethod::kRgd) == "rgd");
    CHECK_THROWS_AS(parse_method("dice"), ParseError);
  }
}
