#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "churnrec/error.hpp"
#include "churnrec/forest.hpp"
#include "churnrec/survival.hpp"
#include "support.hpp"

using namespace churnrec;

namespace {

// Product formula evaluated directly: S(t) = prod over event times t_j <= t
// of (1 - d_j / n_j), with n_j counting every subject whose time is >= t_j.
double product_limit(const std::vector<Observation>& obs, double t) {
  std::map<double, int> deaths;
  for (const auto& o : obs) {
    if (o.event) ++deaths[o.time];
  }
  double s = 1.0;
  for (const auto& [time, d] : deaths) {
    if (time > t) break;
    int at_risk = 0;
    for (const auto& o : obs) at_risk += o.time >= time ? 1 : 0;
    s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
  }
  return s;
}

std::vector<double> distinct_times(const std::vector<Observation>& obs) {
  std::vector<double> t;
  for (const auto& o : obs) t.push_back(o.time);
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

}  // namespace

TEST_SUITE("survival") {
  TEST_CASE("km on three events steps by thirds") {
    const std::vector<Observation> obs = {{1, true}, {2, true}, {3, true}};
    const auto curve = km_estimate(obs);
    CHECK(curve.at(1) == doctest::Approx(2.0 / 3.0));
    CHECK(curve.at(2) == doctest::Approx(1.0 / 3.0));
    CHECK(curve.at(3) == 0.0);
    CHECK(curve.at(0.5) == 1.0);
  }

  TEST_CASE("km with a censored subject in the middle") {
    const std::vector<Observation> obs = {{1, true}, {2, false}, {3, true}};
    const auto curve = km_estimate(obs);
    CHECK(curve.at(1) == doctest::Approx(2.0 / 3.0));
    CHECK(curve.at(2) == doctest::Approx(2.0 / 3.0));
    // One subject at risk at t = 3 and it dies.
    CHECK(curve.at(3) == 0.0);
  }

  TEST_CASE("km with everything censored stays at one") {
    const std::vector<Observation> obs = {{4, false}, {7, false}, {9, false}};
    const auto curve = km_estimate(obs);
    for (double p : curve.probs) CHECK(p == 1.0);
  }

  TEST_CASE("km rejects empty or negative input") {
    CHECK_THROWS_AS(km_estimate(std::vector<Observation>{}), PreconditionError);
    CHECK_THROWS(km_estimate(std::vector<Observation>{{-1.0, true}}));
  }

  TEST_CASE("km matches the product formula on every event pattern up to 8 subjects") {
    std::size_t cases = 0;
    double worst = 0.0;
    for (std::size_t n = 1; n <= 8; ++n) {
      // Distinct times, then heavy ties (pairs share a time).
      for (int tie_mode = 0; tie_mode < 2; ++tie_mode) {
        for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
          std::vector<Observation> obs;
          for (std::size_t i = 0; i < n; ++i) {
            const double time = tie_mode == 0 ? static_cast<double>(n - i)
                                              : static_cast<double>(i / 2 + 1);
            obs.push_back({time, ((mask >> i) & 1u) != 0});
          }
          const auto curve = km_estimate(obs);
          REQUIRE(curve.times == distinct_times(obs));
          for (double t : curve.times) {
            for (double q : {t - 0.5, t, t + 0.25}) {
              worst = std::max(worst, std::abs(curve.at(q) - product_limit(obs, q)));
            }
          }
          ++cases;
        }
      }
    }
    CHECK(cases == 2 * 510);
    CHECK(worst <= 1e-12);
  }

  TEST_CASE("logrank of identical samples is zero") {
    const std::vector<Observation> a = {{1, true}, {4, false}, {6, true}};
    CHECK(logrank_statistic(a, a) == doctest::Approx(0.0).epsilon(1e-15));
  }

  TEST_CASE("logrank fixture: early versus late deaths") {
    // Hand evaluation: O-E = 7/6 and V = 17/36 give 49/17.
    const std::vector<Observation> a = {{1, true}, {2, true}};
    const std::vector<Observation> b = {{10, true}, {11, true}};
    const double stat = logrank_statistic(a, b);
    CHECK(stat > 0.0);
    CHECK(std::abs(stat - 49.0 / 17.0) <= 1e-10);
  }

  TEST_CASE("logrank fixture: one shared event time") {
    // n = 4, n_a = 2, d = 1 in group a: E = 0.5, V = 0.25, statistic 1.
    const std::vector<Observation> a = {{5, true}, {9, false}};
    const std::vector<Observation> b = {{5, false}, {9, false}};
    CHECK(std::abs(logrank_statistic(a, b) - 1.0) <= 1e-10);
  }

  TEST_CASE("logrank fixture: ties and censoring") {
    // O-E = 1/42 and V = 1553/1764, so the statistic is 1/1553.
    const std::vector<Observation> a = {{2, true}, {3, false}, {5, true}, {5, true}};
    const std::vector<Observation> b = {{2, true}, {4, true}, {6, false}};
    CHECK(std::abs(logrank_statistic(a, b) - 1.0 / 1553.0) <= 1e-10);
    CHECK(std::abs(logrank_statistic(b, a) - 1.0 / 1553.0) <= 1e-10);
  }

  TEST_CASE("logrank without events or variance returns zero") {
    const std::vector<Observation> a = {{1, false}};
    const std::vector<Observation> b = {{2, false}};
    CHECK(logrank_statistic(a, b) == 0.0);
  }

  TEST_CASE("average of one curve is that curve; two curves average pointwise") {
    const SurvivalCurve s1{{10, 20}, {0.8, 0.2}};
    const SurvivalCurve s2{{15, 20}, {0.6, 0.4}};
    const SurvivalCurve* one[] = {&s1};
    CHECK(average_curves(one) == s1);
    const SurvivalCurve* two[] = {&s1, &s2};
    const auto mean = average_curves(two);
    CHECK(mean.times == std::vector<double>{10, 15, 20});
    for (double t : {5.0, 10.0, 12.0, 15.0, 20.0, 30.0}) {
      CHECK(mean.at(t) == doctest::Approx((s1.at(t) + s2.at(t)) / 2.0));
    }
  }

  TEST_CASE("averaged random step curves are non-increasing") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<SurvivalCurve> curves(1 + rng.below(6));
      for (auto& c : curves) {
        double t = 0.0;
        double p = 1.0;
        for (std::uint64_t k = 0, n = 1 + rng.below(8); k < n; ++k) {
          t += 1.0 + static_cast<double>(rng.below(20));
          p *= rng.uniform();
          c.times.push_back(t);
          c.probs.push_back(p);
        }
      }
      std::vector<const SurvivalCurve*> ptrs;
      for (const auto& c : curves) ptrs.push_back(&c);
      const auto mean = average_curves(ptrs);
      CHECK(std::is_sorted(mean.probs.rbegin(), mean.probs.rend()));
      CHECK(mean.probs.front() <= 1.0);
    }
  }

  TEST_CASE("median lifetime rule") {
    CHECK(median_lifetime({{30, 100}, {0.8, 0.4}}).days == 100);
    CHECK(median_lifetime({{10}, {0.5}}).days == 10);
    const auto truncated = median_lifetime({{30, 365}, {0.6, 0.6}});
    CHECK(truncated.days == 365);
    CHECK(truncated.truncated);
  }

  TEST_CASE("score at threshold uses the left limit") {
    CHECK(score_at_threshold({{50, 120}, {0.7, 0.3}}, 90) == doctest::Approx(0.7));
    CHECK(score_at_threshold({{90}, {0.2}}, 90) == 1.0);
    // Follow-up ends before the threshold: the median falls short of it.
    CHECK(score_at_threshold({{20, 60}, {0.9, 0.8}}, 90) == 0.0);
    CHECK(score_at_threshold({{10, 40}, {0.5, 0.0}}, 90) == 0.0);
  }

  TEST_CASE("score and median agree on random curves") {
    Rng rng(5);
    for (int trial = 0; trial < 2000; ++trial) {
      SurvivalCurve c;
      double t = 0.0;
      double p = 1.0;
      for (std::uint64_t k = 0, n = 1 + rng.below(6); k < n; ++k) {
        t += static_cast<double>(1 + rng.below(60));
        // Land on 0.5 and on day 90 exactly now and then.
        p = rng.below(5) == 0 ? std::min(p, 0.5) : p * rng.uniform(0.3, 1.0);
        c.times.push_back(rng.below(7) == 0 && t < 90 ? (t = 90) : t);
        c.probs.push_back(p);
      }
      const bool retained = median_lifetime(c).days >= 90.0;
      CHECK(retained == (score_at_threshold(c, 90.0) > 0.5));
    }
  }

  TEST_CASE("classifier examples on the lifetime rule") {
    CHECK(classify_lifetime(120, 90) == 1);
    CHECK(classify_lifetime(89.9, 90) == 0);
    CHECK(classify_lifetime(90, 90) == 1);
  }
}
