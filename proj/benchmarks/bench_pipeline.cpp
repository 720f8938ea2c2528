#include <benchmark/benchmark.h>

#include <filesystem>

#include "npusim/cost_model.hpp"
#include "npusim/graph.hpp"
#include "npusim/rng.hpp"
#include "npusim/scheduler.hpp"
#include "npusim/shadow.hpp"

using namespace npusim;

namespace {

Tensor random_tensor(Rng& rng, int rows, int cols, float stddev = 1.0f) {
  Tensor t(rows, cols);
  for (auto& v : t.data()) v = rng.normal_f(0.0f, stddev);
  return t;
}

void BM_split_outliers(benchmark::State& state) {
  const int rows = static_cast<int>(state.range(0));
  Rng rng = Rng::stream(10, "bench");
  Tensor x = random_tensor(rng, rows, 256, 0.3f);
  for (int i = 0; i < 4; ++i)
    x.at(static_cast<int>(rng.uniform_int(0, rows - 1)),
         static_cast<int>(rng.uniform_int(0, 255))) = 60.0f;
  for (auto _ : state) benchmark::DoNotOptimize(split_outliers(x, 0.02f));
}

void BM_shadow_matmul(benchmark::State& state) {
  const auto dir = std::filesystem::temp_directory_path() / "npusim_bench_store";
  std::filesystem::create_directories(dir);
  Rng rng = Rng::stream(11, "bench");
  Tensor w = random_tensor(rng, 256, 256);
  std::vector<int> hot;
  for (int c = 0; c < 256; c += 16) hot.push_back(c);
  ShadowLinear sl =
      make_shadow_linear(0, "qkv", w, hot, (dir / "w.bin").string());

  Tensor x = random_tensor(rng, 64, 256, 0.3f);
  for (int c : {16, 48, 112}) x.at(5, c) = 70.0f;  // hot-resident outliers
  for (auto _ : state) benchmark::DoNotOptimize(shadow_matmul(x, sl, 0.02f));
  std::filesystem::remove_all(dir);
}

// trace-shaped scheduling instance: N chunks of the default 20-stage pipeline
DependencyGraph pipeline_graph(int num_chunks) {
  ModelConfig cfg;
  const int M = cfg.layers * kStagesPerLayer;
  std::vector<StageKind> kinds;
  std::vector<Processor> procs;
  std::vector<TraceEvent> trace;
  for (int j = 0; j < M; ++j) {
    kinds.push_back(stage_kind_at(j));
    procs.push_back(stage_processor(kinds.back()));
  }
  for (int i = 0; i < num_chunks; ++i)
    for (int j = 0; j < M; ++j) {
      std::string key = std::string(stage_kind_name(kinds[j])) + "/c256x256";
      if (kinds[j] == StageKind::Attention)
        key += "/kv" + std::to_string(256 * (i + 1));
      trace.push_back({i, j, procs[j], key});
    }
  const CostModel costs = derive_costs(trace, cfg, CostMode::Synthetic);
  return dependencies_from_trace(trace, costs);
}

void BM_schedule_greedy(benchmark::State& state) {
  DependencyGraph g = pipeline_graph(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(schedule_greedy(g));
  state.SetLabel(std::to_string(g.size()) + " nodes");
}

void BM_schedule_inorder(benchmark::State& state) {
  DependencyGraph g = pipeline_graph(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(schedule_inorder(g));
}

void BM_chunked_prefill_float32(benchmark::State& state) {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 128;
  cfg.heads = 4;
  cfg.vocab = 256;
  cfg.chunk_len = static_cast<int>(state.range(0));
  Model m = build_model(cfg);
  Rng rng = Rng::stream(12, "bench");
  std::vector<int> tokens(256);
  for (auto& t : tokens) t = static_cast<int>(rng.uniform_int(0, cfg.vocab - 1));
  const ChunkPlan plan = plan_chunks(256, cfg.chunk_len);
  for (auto _ : state)
    benchmark::DoNotOptimize(chunked_prefill(m, tokens, plan, QuantMode::Float32));
  state.SetItemsProcessed(state.iterations() * 256);  // tokens prefilled
}

BENCHMARK(BM_split_outliers)->Arg(64)->Arg(256);
BENCHMARK(BM_shadow_matmul);
BENCHMARK(BM_schedule_greedy)->Arg(4)->Arg(16)->Arg(64);
BENCHMARK(BM_schedule_inorder)->Arg(4)->Arg(64);
BENCHMARK(BM_chunked_prefill_float32)->Arg(32)->Arg(256);

}  // namespace
