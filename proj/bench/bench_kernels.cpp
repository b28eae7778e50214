// Serial reference vs OpenMP kernels. Thread count follows OMP_NUM_THREADS.
//   ./bench_kernels --benchmark_filter=Gemm

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "peft/kernels.hpp"

namespace k = peft::kernels;
using peft::Scalar;

namespace {

std::vector<Scalar> values(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<Scalar> v(n);
  for (auto& x : v) x = static_cast<Scalar>(normal(rng));
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const k::GemmShape s{n, n, n, false, state.range(1) != 0};
  const auto a = values(n * n, 1), b = values(n * n, 2);
  std::vector<Scalar> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::gemm(s, a, b, c);
    else k::serial::gemm(s, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["threads"] = Parallel ? k::max_threads() : 1;
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_Softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1));
  const auto x = values(rows * n, 3);
  std::vector<Scalar> y(rows * n);
  for (auto _ : state) {
    if constexpr (Parallel) k::softmax_rows(rows, n, x, y);
    else k::serial::softmax_rows(rows, n, x, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.counters["threads"] = Parallel ? k::max_threads() : 1;
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows * n));
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("Gemm/serial")->ArgsProduct({{64, 128, 256, 512}, {0, 1}});
BENCHMARK(BM_Gemm<true>)->Name("Gemm/openmp")->ArgsProduct({{64, 128, 256, 512}, {0, 1}});
BENCHMARK(BM_Softmax<false>)->Name("Softmax/serial")->ArgsProduct({{256, 4096}, {64, 512}});
BENCHMARK(BM_Softmax<true>)->Name("Softmax/openmp")->ArgsProduct({{256, 4096}, {64, 512}});

BENCHMARK_MAIN();
