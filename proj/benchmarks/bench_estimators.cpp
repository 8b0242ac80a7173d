#include <benchmark/benchmark.h>

#include "wmax/estimators.hpp"
#include "wmax/network.hpp"
#include "wmax/rng.hpp"

namespace {

using namespace wmax;

struct Fixture {
  NetworkParams params;
  ForwardTrace trace;
  Rng rng{12345};

  explicit Fixture(int width) {
    const std::vector<int> sizes = {20, width, width, 1};
    params = init_params(sizes, InitScheme::uniform_fan_in(), 1);
    VectorXd input(20);
    Rng in_rng(7);
    for (int i = 0; i < input.size(); ++i) {
      input(i) = in_rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    trace = forward_sample(params, input, rng);
  }
};

void BM_ForwardSample(benchmark::State& state) {
  Fixture fx(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto trace = forward_sample(fx.params, fx.trace.input, fx.rng);
    benchmark::DoNotOptimize(trace);
  }
}
BENCHMARK(BM_ForwardSample)->Arg(16)->Arg(64);

void BM_Reinforce(benchmark::State& state) {
  Fixture fx(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto grad = estimate_reinforce(fx.params, fx.trace, 1.0);
    benchmark::DoNotOptimize(grad);
  }
}
BENCHMARK(BM_Reinforce)->Arg(16)->Arg(64);

void BM_Ste(benchmark::State& state) {
  Fixture fx(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto grad = estimate_ste(fx.params, fx.trace, 1.0);
    benchmark::DoNotOptimize(grad);
  }
}
BENCHMARK(BM_Ste)->Arg(16)->Arg(64);

void BM_WeightMax(benchmark::State& state) {
  Fixture fx(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto grad = estimate_weight_max(fx.params, fx.trace, 1.0);
    benchmark::DoNotOptimize(grad);
  }
}
BENCHMARK(BM_WeightMax)->Arg(16)->Arg(64);

void BM_POrder(benchmark::State& state) {
  Fixture fx(16);
  const int order = static_cast<int>(state.range(0));
  for (auto _ : state) {
    auto grad = estimate_p_order(fx.params, fx.trace, 1.0, order);
    benchmark::DoNotOptimize(grad);
  }
}
BENCHMARK(BM_POrder)->Arg(2)->Arg(4)->Arg(8);

void BM_UnbiasedWm(benchmark::State& state) {
  Fixture fx(static_cast<int>(state.range(0)));
  EstimatorConfig config;
  config.kind = EstimatorKind::unbiased_wm;
  for (auto _ : state) {
    auto grad = estimate_unbiased_wm(fx.params, fx.trace, 1.0, config, fx.rng);
    benchmark::DoNotOptimize(grad);
  }
}
BENCHMARK(BM_UnbiasedWm)->Arg(16)->Arg(64);

}  // namespace

BENCHMARK_MAIN();
