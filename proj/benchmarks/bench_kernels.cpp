#include <benchmark/benchmark.h>

#include "npusim/kernels.hpp"
#include "npusim/rng.hpp"

using namespace npusim;

namespace {

Tensor random_tensor(Rng& rng, int rows, int cols) {
  Tensor t(rows, cols);
  for (auto& v : t.data()) v = rng.normal_f();
  return t;
}

void BM_matmul_f32(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng = Rng::stream(1, "bench");
  Tensor a = random_tensor(rng, n, n);
  Tensor b = random_tensor(rng, n, n);
  for (auto _ : state) benchmark::DoNotOptimize(matmul_f32(a, b));
  state.SetItemsProcessed(state.iterations() * 2ll * n * n * n);
}

void BM_matmul_i8(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng = Rng::stream(2, "bench");
  QTensor a = quantize_clamp(random_tensor(rng, n, n), 0.03f);
  QTensor b = quantize_clamp(random_tensor(rng, n, n), 0.03f);
  for (auto _ : state) benchmark::DoNotOptimize(matmul_i8(a, b));
  state.SetItemsProcessed(state.iterations() * 2ll * n * n * n);
}

void BM_quantize_clamp(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng = Rng::stream(3, "bench");
  Tensor x = random_tensor(rng, n, n);
  for (auto _ : state) benchmark::DoNotOptimize(quantize_clamp(x, 0.02f));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n) * n);
}

void BM_causal_attention(benchmark::State& state) {
  const int kv = static_cast<int>(state.range(0));
  const int chunk = 64, hidden = 256, heads = 8;
  Rng rng = Rng::stream(4, "bench");
  Tensor q = random_tensor(rng, chunk, hidden);
  Tensor k = random_tensor(rng, kv, hidden);
  Tensor v = random_tensor(rng, kv, hidden);
  for (auto _ : state)
    benchmark::DoNotOptimize(causal_attention(q, k, v, kv - chunk, heads));
}

void BM_rmsnorm(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0));
  Rng rng = Rng::stream(5, "bench");
  Tensor x = random_tensor(rng, rows, 256);
  Tensor gamma(1, 256, 1.0f);
  for (auto _ : state) benchmark::DoNotOptimize(rmsnorm(x, gamma));
}

BENCHMARK(BM_matmul_f32)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_matmul_i8)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK(BM_quantize_clamp)->Arg(128)->Arg(512);
BENCHMARK(BM_causal_attention)->Arg(64)->Arg(256)->Arg(1024);
BENCHMARK(BM_rmsnorm)->Arg(64)->Arg(256);

}  // namespace
