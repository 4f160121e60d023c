// Parallel vs serial reference kernels at the shapes the model actually runs:
// token projections, FFN layers, attention scores, and stem convolutions.

#include <benchmark/benchmark.h>

#include <vector>

#include "dimask/kernels.hpp"
#include "dimask/rng.hpp"

namespace {

std::vector<double> filled(std::size_t n) {
  dimask::Rng rng(1);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1, 1);
  return v;
}

template <bool kParallel>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto k = static_cast<std::size_t>(state.range(2));
  const auto a = filled(m * k), b = filled(k * n);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    if constexpr (kParallel) {
      dimask::kernels::gemm(false, false, m, n, k, a.data(), b.data(), c.data(), false);
    } else {
      dimask::kernels::reference::gemm(false, false, m, n, k, a.data(), b.data(), c.data(), false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * m * n * k));
}

template <bool kParallel>
void BM_Im2col(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const auto ch = static_cast<std::size_t>(state.range(1));
  const auto img = filled(side * side * ch);
  const std::size_t out = dimask::kernels::conv_out_extent(side, 3, 2, 1);
  std::vector<double> cols(out * out * 9 * ch);
  for (auto _ : state) {
    if constexpr (kParallel) {
      dimask::kernels::im2col(img.data(), side, side, ch, 3, 2, 1, cols.data());
    } else {
      dimask::kernels::reference::im2col(img.data(), side, side, ch, 3, 2, 1, cols.data());
    }
    benchmark::DoNotOptimize(cols.data());
  }
}

void GemmShapes(benchmark::internal::Benchmark* b) {
  b->Args({80, 64, 64});    // token projection
  b->Args({80, 256, 64});   // FFN expand
  b->Args({30, 80, 16});    // per-head attention scores
  b->Args({1024, 16, 27});  // first stem conv
  b->Args({256, 256, 256});
}

}  // namespace

BENCHMARK(BM_Gemm<true>)->Apply(GemmShapes);
BENCHMARK(BM_Gemm<false>)->Apply(GemmShapes);
BENCHMARK(BM_Im2col<true>)->Args({64, 3})->Args({32, 16});
BENCHMARK(BM_Im2col<false>)->Args({64, 3})->Args({32, 16});

BENCHMARK_MAIN();
