#include <benchmark/benchmark.h>

#include "kiwi/kernels.hpp"
#include "kiwi/rng.hpp"

// Serial reference vs OpenMP kernels over the sizes the model actually uses
// (token counts x model dims). Run: ./bench/bench_kernels

using namespace kiwi;

namespace {

void bench_matmul(benchmark::State& state, bool parallel) {
    const int64_t n = state.range(0);
    Rng rng(1);
    const Tensor a = rng.randn({n, n});
    const Tensor b = rng.randn({n, n});
    Tensor c({n, n});
    for (auto _ : state) {
        if (parallel)
            kernels::matmul_omp(a.data(), b.data(), c.data(), n, n, n);
        else
            kernels::matmul_serial(a.data(), b.data(), c.data(), n, n, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}

void bench_softmax(benchmark::State& state, bool parallel) {
    const int64_t rows = state.range(0);
    Rng rng(2);
    const Tensor x = rng.randn({rows, 512});
    Tensor y = x;
    for (auto _ : state) {
        y = x;
        if (parallel)
            kernels::softmax_rows_omp(y.data(), rows, 512);
        else
            kernels::softmax_rows_serial(y.data(), rows, 512);
        benchmark::DoNotOptimize(y.data());
    }
}

void bench_matmul_tn(benchmark::State& state, bool parallel) {
    const int64_t n = state.range(0);
    Rng rng(3);
    const Tensor a = rng.randn({n, n});
    const Tensor b = rng.randn({n, n});
    Tensor c = Tensor::zeros({n, n});
    for (auto _ : state) {
        if (parallel)
            kernels::matmul_tn_acc_omp(a.data(), b.data(), c.data(), n, n, n);
        else
            kernels::matmul_tn_acc_serial(a.data(), b.data(), c.data(), n, n, n);
        benchmark::DoNotOptimize(c.data());
    }
}

} // namespace

BENCHMARK_CAPTURE(bench_matmul, serial, false)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK_CAPTURE(bench_matmul, omp, true)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK_CAPTURE(bench_matmul_tn, serial, false)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK_CAPTURE(bench_matmul_tn, omp, true)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK_CAPTURE(bench_softmax, serial, false)->Arg(128)->Arg(1024);
BENCHMARK_CAPTURE(bench_softmax, omp, true)->Arg(128)->Arg(1024);
