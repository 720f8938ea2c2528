#include "npusim/cost_model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "npusim/kernels.hpp"
#include "npusim/rng.hpp"

namespace npusim {

namespace {

struct ParsedKey {
  StageKind kind;
  uint64_t chunk_len = 0;
  uint64_t hidden = 0;
  uint64_t kv_len = 0;
};

ParsedKey parse_key(const std::string& key) {
  ParsedKey p;
  const size_t slash = key.find('/');
  if (slash == std::string::npos)
    throw ValueError("cost key missing kind: " + key);
  const std::string kind = key.substr(0, slash);
  if (kind == "qkv") p.kind = StageKind::LinearQkv;
  else if (kind == "attn") p.kind = StageKind::Attention;
  else if (kind == "o") p.kind = StageKind::LinearO;
  else if (kind == "norm") p.kind = StageKind::Norm;
  else if (kind == "ffn") p.kind = StageKind::Ffn;
  else throw ValueError("cost key with unknown kind: " + key);

  if (std::sscanf(key.c_str() + slash, "/c%lux%lu/kv%lu", &p.chunk_len,
                  &p.hidden, &p.kv_len) < 2)
    throw ValueError("malformed cost key: " + key);
  if (p.kind == StageKind::Attention && p.kv_len == 0)
    throw ValueError("attention cost key missing kv length: " + key);
  return p;
}

uint64_t flops_for(const ParsedKey& k, uint64_t ffn_width) {
  const uint64_t c = k.chunk_len, h = k.hidden, f = ffn_width;
  switch (k.kind) {
    case StageKind::LinearQkv: return 6 * c * h * h + 6 * c * h;
    case StageKind::Attention: return 4 * c * k.kv_len * h + 5 * c * k.kv_len + 3 * c * h;
    case StageKind::LinearO: return 2 * c * h * h + 2 * c * h;
    case StageKind::Norm: return 4 * c * h;
    case StageKind::Ffn: return 6 * c * h * f + 6 * c * f + 2 * c * h;
  }
  return 0;
}

int64_t duration_from_flops(uint64_t flops, double rate) {
  return std::max<int64_t>(1, std::llround(static_cast<double>(flops) / rate));
}

/// Median wall-clock microseconds of `fn` over five runs.
template <typename Fn>
int64_t measure_us(Fn&& fn) {
  std::vector<int64_t> samples;
  for (int rep = 0; rep < 5; ++rep) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(
        std::chrono::duration_cast<std::chrono::microseconds>(t1 - t0).count());
  }
  std::sort(samples.begin(), samples.end());
  return std::max<int64_t>(1, samples[samples.size() / 2]);
}

int64_t measured_duration(const ParsedKey& k, const ModelConfig& cfg) {
  Rng rng = Rng::stream(cfg.seed, "cost-measure");
  const int c = static_cast<int>(k.chunk_len);
  const int h = static_cast<int>(k.hidden);
  auto rand_tensor = [&](int r, int cc) {
    Tensor t(r, cc);
    for (auto& v : t.data()) v = rng.normal_f();
    return t;
  };
  switch (k.kind) {
    case StageKind::LinearQkv: {
      QTensor a = quantize_clamp(rand_tensor(c, h), 0.05f);
      QTensor b = quantize_clamp(rand_tensor(h, 3 * h), 0.05f);
      return measure_us([&] { matmul_i8(a, b); });
    }
    case StageKind::LinearO: {
      QTensor a = quantize_clamp(rand_tensor(c, h), 0.05f);
      QTensor b = quantize_clamp(rand_tensor(h, h), 0.05f);
      return measure_us([&] { matmul_i8(a, b); });
    }
    case StageKind::Ffn: {
      QTensor a = quantize_clamp(rand_tensor(c, h), 0.05f);
      QTensor b = quantize_clamp(rand_tensor(h, 3 * cfg.ffn()), 0.05f);
      return measure_us([&] { matmul_i8(a, b); });
    }
    case StageKind::Attention: {
      const int kv = static_cast<int>(k.kv_len);
      Tensor q = rand_tensor(c, h);
      Tensor key = rand_tensor(kv, h);
      Tensor val = rand_tensor(kv, h);
      return measure_us([&] { causal_attention(q, key, val, kv - c, 1); });
    }
    case StageKind::Norm: {
      Tensor x = rand_tensor(c, h);
      Tensor gamma(1, h, 1.0f);
      return measure_us([&] { rmsnorm(x, gamma); });
    }
  }
  return 1;
}

}  // namespace

CostParams CostParams::anchored(const ModelConfig& cfg, const ChunkPlan& plan,
                                double npu_over_cpu) {
  if (npu_over_cpu <= 0.0) throw ValueError("anchored: ratio must be positive");
  uint64_t npu_flops = 0, cpu_flops = 0;
  for (int i = 0; i < plan.num_chunks; ++i) {
    for (int pos = 0; pos < kStagesPerLayer; ++pos) {
      ParsedKey k;
      k.kind = stage_kind_at(pos);
      k.chunk_len = static_cast<uint64_t>(plan.chunk_len);
      k.hidden = static_cast<uint64_t>(cfg.hidden);
      k.kv_len = static_cast<uint64_t>(i + 1) * plan.chunk_len;
      const uint64_t fl =
          flops_for(k, static_cast<uint64_t>(cfg.ffn())) * cfg.layers;
      (stage_processor(k.kind) == Processor::NPU ? npu_flops : cpu_flops) += fl;
    }
  }
  CostParams p;
  // npu_time = npu_flops / npu_rate; solve cpu_rate for the requested ratio.
  const double npu_time =
      static_cast<double>(npu_flops) / p.npu_int8_flops_per_unit;
  p.cpu_float_flops_per_unit =
      static_cast<double>(cpu_flops) / (npu_time / npu_over_cpu);
  return p;
}

void CostModel::insert(const std::string& key, Processor proc, int64_t duration) {
  entries_[key] = Entry{proc, duration};
}

int64_t CostModel::lookup(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ValueError("cost model: no entry for " + key);
  return it->second.duration;
}

void CostModel::validate() const {
  for (const auto& [key, e] : entries_)
    if (e.duration <= 0)
      throw ValueError("cost model: zero or negative duration for " + key);
}

uint64_t stage_flops(const std::string& cost_key, const ModelConfig& cfg) {
  return flops_for(parse_key(cost_key), static_cast<uint64_t>(cfg.ffn()));
}

CostModel derive_costs(const std::vector<TraceEvent>& trace,
                       const ModelConfig& cfg, CostMode mode,
                       const CostParams& params) {
  CostModel cm;
  cm.mode = mode == CostMode::Synthetic ? "synthetic" : "measured";
  for (const auto& e : trace) {
    if (cm.contains(e.cost_key)) continue;
    const ParsedKey k = parse_key(e.cost_key);
    int64_t dur;
    if (mode == CostMode::Synthetic) {
      const double rate = e.processor == Processor::NPU
                              ? params.npu_int8_flops_per_unit
                              : params.cpu_float_flops_per_unit;
      dur = duration_from_flops(flops_for(k, static_cast<uint64_t>(cfg.ffn())),
                                rate);
    } else {
      dur = measured_duration(k, cfg);
    }
    cm.insert(e.cost_key, e.processor, dur);
  }
  cm.validate();
  return cm;
}

}  // namespace npusim
