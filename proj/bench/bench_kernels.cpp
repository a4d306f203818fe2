#include <benchmark/benchmark.h>

#include <vector>

#include "promptkd/kernels.hpp"
#include "promptkd/rng.hpp"

namespace {

using namespace promptkd;

std::vector<double> random_matrix(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

template <auto Kernel>
void run(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_matrix(m * k, 1);
  const auto b = random_matrix(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Kernel(a, b, c, m, k, n, false);
    benchmark::DoNotOptimize(c.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * m * k * n));
}

// Shapes of the transformer projections: (sequence, d_model, 3 d_model),
// (sequence, d_model, 4 d_model) and a large square case.
void shapes(benchmark::internal::Benchmark* b) {
  b->Args({40, 64, 192})->Args({40, 64, 256})->Args({40, 128, 512})->Args({256, 256, 256});
}

}  // namespace

BENCHMARK(run<kernels::serial::gemm_nn>)->Name("gemm_nn/serial")->Apply(shapes);
BENCHMARK(run<kernels::gemm_nn>)->Name("gemm_nn/openmp")->Apply(shapes);
BENCHMARK(run<kernels::serial::gemm_nt>)->Name("gemm_nt/serial")->Apply(shapes);
BENCHMARK(run<kernels::gemm_nt>)->Name("gemm_nt/openmp")->Apply(shapes);
BENCHMARK(run<kernels::serial::gemm_tn>)->Name("gemm_tn/serial")->Apply(shapes);
BENCHMARK(run<kernels::gemm_tn>)->Name("gemm_tn/openmp")->Apply(shapes);

BENCHMARK_MAIN();
