#include <benchmark/benchmark.h>

#include "ratspn/circuit.hpp"
#include "ratspn/inference.hpp"
#include "ratspn/random.hpp"
#include "ratspn/region_graph.hpp"
#include "ratspn/synthetic.hpp"
#include "ratspn/training.hpp"

using namespace ratspn;

namespace {

// Desk-task shape: 12x12 glyphs, 10 classes.
struct Setup {
  Circuit circuit;
  ParameterSet params;
  Dataset data;
};

Setup make_setup(std::uint32_t depth, std::uint32_t reps, std::size_t width, std::size_t batch) {
  Setup s;
  s.data = scale_features(to_dataset(make_glyphs(batch, {}, 3)), ScalingMode::DivMax);
  const auto graph = random_region_graph(static_cast<std::uint32_t>(s.data.num_features()), depth,
                                         reps, 5);
  s.circuit = construct_circuit(graph, 10, width, width);
  Rng rng(9);
  s.params = init_parameters(s.circuit, {}, rng);
  return s;
}

void BM_RegionGraph(benchmark::State& state) {
  const auto depth = static_cast<std::uint32_t>(state.range(0));
  const auto reps = static_cast<std::uint32_t>(state.range(1));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    auto g = random_region_graph(784, depth, reps, ++seed);
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(BM_RegionGraph)->Args({2, 8})->Args({3, 20})->Args({4, 40});

void BM_Forward(benchmark::State& state) {
  const auto s = make_setup(2, 8, static_cast<std::size_t>(state.range(0)), 100);
  for (auto _ : state) {
    auto roots = forward_log(s.circuit, s.params, s.data.features);
    benchmark::DoNotOptimize(roots);
  }
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_Forward)->Arg(4)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_ForwardMasked(benchmark::State& state) {
  const auto s = make_setup(2, 8, 8, 100);
  const auto mask = random_missing_mask(s.data, 0.5, 1);
  for (auto _ : state) {
    auto roots = forward_log(s.circuit, s.params, s.data.features, mask);
    benchmark::DoNotOptimize(roots);
  }
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_ForwardMasked)->Unit(benchmark::kMillisecond);

void BM_Backward(benchmark::State& state) {
  const auto s = make_setup(2, 8, static_cast<std::size_t>(state.range(0)), 100);
  for (auto _ : state) {
    auto g = backward_gradients(s.circuit, s.params, s.data.features, s.data.labels, 0.5);
    benchmark::DoNotOptimize(g);
  }
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_Backward)->Arg(4)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_BackwardWithDropout(benchmark::State& state) {
  const auto s = make_setup(2, 8, 8, 100);
  Rng rng(4);
  for (auto _ : state) {
    const auto in = sample_input_dropout_mask(s.circuit.num_vars(), 100, 0.8, rng);
    const auto sd = sample_sum_dropout_mask(s.circuit, 0.5, 100, rng);
    auto g = backward_gradients(s.circuit, s.params, s.data.features, s.data.labels, 1.0, in, sd);
    benchmark::DoNotOptimize(g);
  }
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_BackwardWithDropout)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
