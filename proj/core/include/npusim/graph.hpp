#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "npusim/model.hpp"
#include "npusim/quant.hpp"
#include "npusim/shadow.hpp"

namespace npusim {

struct ChunkPlan {
  int prompt_len = 0;
  int chunk_len = 0;
  int num_chunks = 0;  // ceil(prompt_len / chunk_len)
  int pad = 0;         // masked positions in the final chunk

  /// Real (non-padding) rows of chunk i.
  int real_rows(int chunk) const {
    return chunk + 1 == num_chunks ? chunk_len - pad : chunk_len;
  }
};

ChunkPlan plan_chunks(int prompt_len, int chunk_len);

enum class Processor { NPU, CPU };

inline const char* processor_name(Processor p) {
  return p == Processor::NPU ? "NPU" : "CPU";
}

/// Stage taxonomy of one transformer block, five stages per layer:
///   [RMSNorm + quantize + QKV linear]  NPU  static
///   [RoPE + attention]                 CPU  dynamic
///   [quantize + O linear]              NPU  static
///   [RMSNorm]                          CPU  static
///   [quantize + gated FFN]             NPU  static
/// Static stages depend only on the chunk length; the attention stage also
/// depends on the chunk position (growing KV), so it cannot be shared.
enum class StageKind { LinearQkv, Attention, LinearO, Norm, Ffn };

constexpr int kStagesPerLayer = 5;

const char* stage_kind_name(StageKind k);
StageKind stage_kind_at(int stage_index);      // stage_index in [0, 5*layers)
Processor stage_processor(StageKind k);
bool stage_is_static(StageKind k);

/// One subgraph of the chunk-sharing graph. A static subgraph is built once
/// and reused by every chunk; a dynamic subgraph keeps one activation buffer
/// per chunk, sized to that chunk's KV length.
struct SubgraphSpec {
  int stage = 0;  // global stage index
  int layer = 0;
  StageKind kind = StageKind::LinearQkv;
  bool is_static = true;
  Processor processor = Processor::NPU;
  std::vector<std::string> ops;
  uint64_t weight_bytes = 0;                // static subgraphs only
  std::vector<uint64_t> activation_bytes;   // per chunk (one entry if static)

  uint64_t activation_total() const {
    uint64_t t = 0;
    for (uint64_t b : activation_bytes) t += b;
    return t;
  }
};

struct SharingReport {
  int total_subgraphs = 0;
  int shared_subgraphs = 0;
  uint64_t static_bytes = 0;        // weights + shared activation buffers
  uint64_t dynamic_bytes = 0;       // per-chunk attention buffers
  uint64_t shared_total_bytes = 0;  // static + dynamic
  uint64_t naive_total_bytes = 0;   // num_chunks * static + dynamic

  double reduction_ratio() const {
    return shared_total_bytes == 0
               ? 1.0
               : static_cast<double>(naive_total_bytes) /
                     static_cast<double>(shared_total_bytes);
  }
};

struct PartitionResult {
  std::vector<SubgraphSpec> subgraphs;
  SharingReport report;
};

/// Classifies every operator of the model into exactly one subgraph and
/// accounts graph memory for the given plan, shared vs per-chunk-naive.
PartitionResult partition_sharing_graph(const Model& m, const ChunkPlan& plan);

enum class QuantMode { Float32, W8A8Naive, W8A8Shadow };

const char* quant_mode_name(QuantMode m);
QuantMode quant_mode_from_name(const std::string& name);

/// Per-layer quantized execution state: activation scales from calibration,
/// shadow linears for the hidden-space sites and the int8 down projection.
struct QuantLayerContext {
  float scale = 1.0f;       // hidden-space activation scale
  float down_scale = 1.0f;  // ffn-intermediate activation scale
  bool pruned = false;
  ShadowLinear qkv;
  ShadowLinear o;
  ShadowLinear ffn_in;  // fused gate+up
  QTensor down_q;       // down projection weights (no shadow path)
};

struct QuantContext {
  std::vector<QuantLayerContext> layers;
  ResidualMode residual_mode = ResidualMode::Exact;
};

/// Quantizes the model's matmul weights, builds the shadow cold store at
/// `store_path` and pins hot rows per the hot-channel table. Layers in
/// `pruned` skip the residual path at run time.
QuantContext prepare_quant_context(const Model& m,
                                   const std::vector<CalibrationProfile>& profiles,
                                   const HotChannelTable& hot,
                                   const std::set<int>& pruned,
                                   const std::string& store_path);

/// One executed (chunk, stage) pair; `cost_key` identifies the profiled
/// duration entry for the scheduler.
struct TraceEvent {
  int chunk = 0;
  int stage = 0;
  Processor processor = Processor::NPU;
  std::string cost_key;
};

struct PrefillResult {
  Tensor last_logits;  // 1 x vocab, last real token
  KVCache kv;
  std::vector<TraceEvent> trace;
  FetchLog fetch_log;  // populated in shadow mode
};

/// Processes the prompt chunk by chunk in causal order through the sharing
/// graph. Padding sits at the end of the final chunk only: padded rows run
/// through the fixed-shape stages, are masked from real rows by causality,
/// and never enter the KV cache. Quantized modes need a QuantContext.
PrefillResult chunked_prefill(const Model& m, const std::vector<int>& tokens,
                              const ChunkPlan& plan, QuantMode mode,
                              const QuantContext* qctx = nullptr);

}  // namespace npusim
