// Parallel kernels against their serial references. Results are identical;
// only the wall time differs.
#include "memlens/loss.hpp"
#include "memlens/minibatch.hpp"

#include <benchmark/benchmark.h>

using namespace memlens;

namespace {

const MiniBatchFamily& family(std::size_t batches) {
  static std::map<std::size_t, MiniBatchFamily> cache;
  auto it = cache.find(batches);
  if (it == cache.end()) it = cache.emplace(batches, make_minibatch_quadratics(batches, 20, 0.5, 11)).first;
  return it->second;
}

const ParamVector theta = ParamVector::Constant(20, 0.3);

void exhaustive(benchmark::State& state) {
  const auto& f = family(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(expected_correction_exhaustive(f, 0.9, theta, 0.01));
}

void exhaustive_serial(benchmark::State& state) {
  const auto& f = family(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(expected_correction_exhaustive_serial(f, 0.9, theta, 0.01));
}

void monte_carlo(benchmark::State& state) {
  const auto& f = family(8);
  for (auto _ : state) benchmark::DoNotOptimize(expected_correction_mc(f, 0.9, theta, 0.01, state.range(0), 5));
}

void monte_carlo_serial(benchmark::State& state) {
  const auto& f = family(8);
  for (auto _ : state) benchmark::DoNotOptimize(expected_correction_mc_serial(f, 0.9, theta, 0.01, state.range(0), 5));
}

}  // namespace

BENCHMARK(exhaustive)->DenseRange(5, 7)->Unit(benchmark::kMillisecond);
BENCHMARK(exhaustive_serial)->DenseRange(5, 7)->Unit(benchmark::kMillisecond);
BENCHMARK(monte_carlo)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK(monte_carlo_serial)->Arg(10000)->Arg(100000)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
