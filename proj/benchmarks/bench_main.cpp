#include <benchmark/benchmark.h>

#include <memory>

#include "churnrec/countergan.hpp"
#include "churnrec/forest.hpp"
#include "churnrec/rgd.hpp"

namespace {

using namespace churnrec;

struct Setup {
  Dataset data;
  std::shared_ptr<const ChurnClassifier> forest;
  CounterGanModel gan;
  std::vector<std::size_t> denied;
};

const Setup& setup() {
  static const Setup s = [] {
    Setup out;
    SynthConfig sc;
    sc.n_users = 1000;
    sc.seed = 5;
    out.data = synthesize(sc);
    ForestConfig fc;
    fc.n_trees = 20;
    out.forest = std::make_shared<const ChurnClassifier>(fit_forest(out.data, fc));
    TrainConfig tc;
    tc.max_iterations = 100;
    tc.surrogate.epochs = 10;
    out.gan = train_countergan(out.data, out.forest, tc);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      if (out.forest->classify(out.data.records[i].features) == 0) out.denied.push_back(i);
    }
    return out;
  }();
  return s;
}

void BM_ForestFit(benchmark::State& state) {
  const auto& s = setup();
  ForestConfig fc;
  fc.n_trees = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(fit_forest(s.data, fc));
}
BENCHMARK(BM_ForestFit)->Arg(1)->Arg(5)->Unit(benchmark::kMillisecond);

void BM_PredictCurve(benchmark::State& state) {
  const auto& s = setup();
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(s.forest->predict_curve(s.data.records[i++ % s.data.size()].features));
  }
}
BENCHMARK(BM_PredictCurve);

void BM_ClassScore(benchmark::State& state) {
  const auto& s = setup();
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(s.forest->class_score(s.data.records[i++ % s.data.size()].features));
  }
}
BENCHMARK(BM_ClassScore);

void BM_GanRecourse(benchmark::State& state) {
  const auto& s = setup();
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& r = s.data.records[s.denied[i++ % s.denied.size()]];
    benchmark::DoNotOptimize(generate_recourse(s.gan, r.features, r.user_id));
  }
}
BENCHMARK(BM_GanRecourse);

void BM_RgdRecourse(benchmark::State& state) {
  const auto& s = setup();
  RgdConfig cfg;
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& r = s.data.records[s.denied[i++ % s.denied.size()]];
    benchmark::DoNotOptimize(rgd_counterfactual(*s.forest, r.features, s.data.meta, cfg, r.user_id));
  }
}
BENCHMARK(BM_RgdRecourse)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
