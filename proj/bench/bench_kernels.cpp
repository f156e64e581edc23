// Serial reference kernels against their OpenMP counterparts, at the shapes
// the networks use (batch x width).

#include "grimrepr/kernels.hpp"
#include "grimrepr/rng.hpp"

#include <benchmark/benchmark.h>

#include <vector>

using namespace grimrepr;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

template <bool Parallel>
void bm_gemm(benchmark::State& state)
{
    const kernels::GemmDims d{static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)),
                              static_cast<std::size_t>(state.range(2)), state.range(3) != 0, false};
    const auto a = filled(d.m * d.k, 1);
    const auto b = filled(d.k * d.n, 2);
    std::vector<double> c(d.m * d.n);
    for (auto _ : state) {
        if constexpr (Parallel)
            kernels::gemm_parallel(a, b, c, d);
        else
            kernels::gemm_serial(a, b, c, d);
        benchmark::DoNotOptimize(c.data());
    }
    state.counters["flops"] = benchmark::Counter(2.0 * static_cast<double>(d.m * d.n * d.k),
                                                 benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Parallel>
void bm_affine(benchmark::State& state)
{
    const auto rows = static_cast<std::size_t>(state.range(0));
    const auto in = static_cast<std::size_t>(state.range(1));
    const auto out = static_cast<std::size_t>(state.range(2));
    const auto x = filled(rows * in, 3);
    const auto w = filled(in * out, 4);
    const auto bias = filled(out, 5);
    std::vector<double> y(rows * out);
    for (auto _ : state) {
        if constexpr (Parallel)
            kernels::affine_parallel(x, w, bias, y, rows, in, out);
        else
            kernels::affine_serial(x, w, bias, y, rows, in, out);
        benchmark::DoNotOptimize(y.data());
    }
    state.counters["flops"] = benchmark::Counter(2.0 * static_cast<double>(rows * in * out),
                                                 benchmark::Counter::kIsIterationInvariantRate);
}

void gemm_shapes(benchmark::internal::Benchmark* b)
{
    // {m, n, k, trans_a}: forward layers, a weight-gradient product, and a large square case.
    b->Args({32, 128, 128, 0})->Args({32, 128, 64, 0})->Args({128, 128, 32, 1})->Args({512, 512, 512, 0});
}

void affine_shapes(benchmark::internal::Benchmark* b)
{
    b->Args({32, 64, 128})->Args({32, 128, 128})->Args({1000, 128, 128});
}

} // namespace

BENCHMARK(bm_gemm<false>)->Name("gemm_serial")->Apply(gemm_shapes);
BENCHMARK(bm_gemm<true>)->Name("gemm_parallel")->Apply(gemm_shapes)->UseRealTime();
BENCHMARK(bm_affine<false>)->Name("affine_serial")->Apply(affine_shapes);
BENCHMARK(bm_affine<true>)->Name("affine_parallel")->Apply(affine_shapes)->UseRealTime();

BENCHMARK_MAIN();
