#include "npusim/graph.hpp"

#include <algorithm>
#include <cmath>

#include "npusim/kernels.hpp"

namespace npusim {

ChunkPlan plan_chunks(int prompt_len, int chunk_len) {
  if (prompt_len < 1) throw ValueError("plan_chunks: prompt_len must be >= 1");
  if (chunk_len < 1) throw ValueError("plan_chunks: chunk_len must be >= 1");
  ChunkPlan p;
  p.prompt_len = prompt_len;
  p.chunk_len = chunk_len;
  p.num_chunks = (prompt_len + chunk_len - 1) / chunk_len;
  p.pad = p.num_chunks * chunk_len - prompt_len;
  return p;
}

const char* stage_kind_name(StageKind k) {
  switch (k) {
    case StageKind::LinearQkv: return "qkv";
    case StageKind::Attention: return "attn";
    case StageKind::LinearO: return "o";
    case StageKind::Norm: return "norm";
    case StageKind::Ffn: return "ffn";
  }
  return "?";
}

StageKind stage_kind_at(int stage_index) {
  switch (stage_index % kStagesPerLayer) {
    case 0: return StageKind::LinearQkv;
    case 1: return StageKind::Attention;
    case 2: return StageKind::LinearO;
    case 3: return StageKind::Norm;
    default: return StageKind::Ffn;
  }
}

Processor stage_processor(StageKind k) {
  switch (k) {
    case StageKind::LinearQkv:
    case StageKind::LinearO:
    case StageKind::Ffn:
      return Processor::NPU;
    case StageKind::Attention:
    case StageKind::Norm:
      return Processor::CPU;
  }
  return Processor::CPU;
}

bool stage_is_static(StageKind k) { return k != StageKind::Attention; }

const char* quant_mode_name(QuantMode m) {
  switch (m) {
    case QuantMode::Float32: return "float32";
    case QuantMode::W8A8Naive: return "w8a8-naive";
    case QuantMode::W8A8Shadow: return "w8a8-shadow";
  }
  return "?";
}

QuantMode quant_mode_from_name(const std::string& name) {
  if (name == "float32") return QuantMode::Float32;
  if (name == "w8a8-naive") return QuantMode::W8A8Naive;
  if (name == "w8a8-shadow") return QuantMode::W8A8Shadow;
  throw ValueError("unknown quant mode: " + name);
}

namespace {

// Activation-buffer model: each subgraph owns its output buffers plus private
// scratch; inputs belong to the producing stage, KV rows to the cache arena.
// Attention streams one score row at a time, so its per-chunk scratch is the
// KV-length score row rather than a full score matrix.
uint64_t static_activation_bytes(StageKind k, const ModelConfig& cfg) {
  const uint64_t c = cfg.chunk_len, h = cfg.hidden, f = cfg.ffn();
  switch (k) {
    case StageKind::LinearQkv: return c * 3 * h * 4 + c * h;   // out + int8 staging
    case StageKind::LinearO: return c * h * 4 + c * h;
    case StageKind::Norm: return c * h * 4;
    case StageKind::Ffn:
      // gate+up out, silu*mul intermediate, down out, two int8 stagings
      return c * 2 * f * 4 + c * f * 4 + c * h * 4 + c * h + c * f;
    case StageKind::Attention: return 0;  // dynamic, sized per chunk
  }
  return 0;
}

uint64_t attention_activation_bytes(const ModelConfig& cfg, int chunk) {
  const uint64_t c = cfg.chunk_len, h = cfg.hidden;
  const uint64_t kv_len = static_cast<uint64_t>(chunk + 1) * c;
  return c * h * 4 + kv_len * 4;  // out buffer + streamed score row
}

uint64_t stage_weight_bytes(StageKind k, const ModelConfig& cfg) {
  const uint64_t h = cfg.hidden, f = cfg.ffn();
  switch (k) {
    case StageKind::LinearQkv: return h * 4 + h * 3 * h + 4;  // gamma + int8 + scale
    case StageKind::LinearO: return h * h + 4;
    case StageKind::Norm: return h * 4;
    case StageKind::Ffn: return h * 2 * f + f * h + 8;  // gate_up + down + scales
    case StageKind::Attention: return 0;
  }
  return 0;
}

std::vector<std::string> stage_ops(StageKind k, int layer) {
  const std::string p = "L" + std::to_string(layer) + ".";
  switch (k) {
    case StageKind::LinearQkv: return {p + "rmsnorm1", p + "quant_qkv", p + "linear_qkv"};
    case StageKind::Attention: return {p + "rope", p + "attention"};
    case StageKind::LinearO: return {p + "quant_o", p + "linear_o"};
    case StageKind::Norm: return {p + "rmsnorm2"};
    case StageKind::Ffn:
      return {p + "quant_ffn", p + "linear_gate_up", p + "silu_mul",
              p + "quant_down", p + "linear_down"};
  }
  return {};
}

std::string cost_key(StageKind k, const ModelConfig& cfg, int chunk) {
  std::string key = std::string(stage_kind_name(k)) + "/c" +
                    std::to_string(cfg.chunk_len) + "x" +
                    std::to_string(cfg.hidden);
  if (k == StageKind::Attention)
    key += "/kv" + std::to_string(static_cast<uint64_t>(chunk + 1) * cfg.chunk_len);
  return key;
}

}  // namespace

PartitionResult partition_sharing_graph(const Model& m, const ChunkPlan& plan) {
  ModelConfig cfg = m.cfg;
  cfg.chunk_len = plan.chunk_len;  // buffers are sized by the plan's chunks
  PartitionResult res;
  res.report.total_subgraphs = cfg.layers * kStagesPerLayer;

  for (int j = 0; j < cfg.layers * kStagesPerLayer; ++j) {
    const StageKind kind = stage_kind_at(j);
    SubgraphSpec sg;
    sg.stage = j;
    sg.layer = j / kStagesPerLayer;
    sg.kind = kind;
    sg.is_static = stage_is_static(kind);
    sg.processor = stage_processor(kind);
    sg.ops = stage_ops(kind, sg.layer);
    if (sg.is_static) {
      sg.weight_bytes = stage_weight_bytes(kind, cfg);
      sg.activation_bytes = {static_activation_bytes(kind, cfg)};
      res.report.shared_subgraphs += 1;
      res.report.static_bytes += sg.weight_bytes + sg.activation_bytes[0];
    } else {
      for (int i = 0; i < plan.num_chunks; ++i)
        sg.activation_bytes.push_back(attention_activation_bytes(cfg, i));
      res.report.dynamic_bytes += sg.activation_total();
    }
    res.subgraphs.push_back(std::move(sg));
  }

  res.report.shared_total_bytes =
      res.report.static_bytes + res.report.dynamic_bytes;
  // Without sharing, every chunk rebuilds the full static portion.
  res.report.naive_total_bytes =
      static_cast<uint64_t>(plan.num_chunks) * res.report.static_bytes +
      res.report.dynamic_bytes;
  return res;
}

QuantContext prepare_quant_context(const Model& m,
                                   const std::vector<CalibrationProfile>& profiles,
                                   const HotChannelTable& hot,
                                   const std::set<int>& pruned,
                                   const std::string& store_path) {
  if (static_cast<int>(profiles.size()) != m.cfg.layers)
    throw ValueError("prepare_quant_context: need one profile per layer");
  QuantContext ctx;
  ctx.layers.resize(m.cfg.layers);
  for (int l = 0; l < m.cfg.layers; ++l) {
    const auto& p = profiles[l];
    auto& qc = ctx.layers[l];
    qc.scale = p.scale;
    qc.down_scale = p.down_scale;
    qc.pruned = pruned.count(p.layer_id) > 0;

    std::vector<int> hot_channels;
    if (const HotChannelEntry* e = hot.find(p.layer_id)) hot_channels = e->channels;

    const auto& lw = m.layers[l];
    qc.qkv = make_shadow_linear(p.layer_id, "qkv", lw.w_qkv, hot_channels, store_path);
    qc.o = make_shadow_linear(p.layer_id, "o", lw.w_o, hot_channels, store_path);
    qc.ffn_in = make_shadow_linear(p.layer_id, "ffn_in", lw.w_gate_up,
                                   hot_channels, store_path);
    qc.qkv.pruned = qc.o.pruned = qc.ffn_in.pruned = qc.pruned;

    float max_abs = 0.0f;
    for (float v : lw.w_down.data()) max_abs = std::max(max_abs, std::fabs(v));
    qc.down_q = quantize_clamp(lw.w_down, max_abs > 0 ? max_abs / 127.0f : 1.0f);
  }
  return ctx;
}

namespace {

struct ChunkExecState {
  QuantMode mode;
  const QuantContext* qctx;
  FetchLog* log;
};

Tensor site_linear(const Tensor& x, const Tensor& w_float,
                   const ShadowLinear* sl, float scale,
                   const ChunkExecState& st) {
  if (st.mode == QuantMode::Float32) return matmul_f32(x, w_float);
  if (st.mode == QuantMode::W8A8Naive)
    return matmul_i8(quantize_clamp(x, scale), sl->weight_q);
  return shadow_matmul(x, *sl, scale, st.log,
                       st.qctx ? st.qctx->residual_mode : ResidualMode::Exact);
}

}  // namespace

PrefillResult chunked_prefill(const Model& m, const std::vector<int>& tokens,
                              const ChunkPlan& plan, QuantMode mode,
                              const QuantContext* qctx) {
  const auto& cfg = m.cfg;
  if (static_cast<int>(tokens.size()) != plan.prompt_len)
    throw ValueError("chunked_prefill: token count differs from plan");
  for (int t : tokens)
    if (t < 0 || t >= cfg.vocab)
      throw ValueError("chunked_prefill: token id out of vocab range");
  if (mode != QuantMode::Float32 &&
      (!qctx || static_cast<int>(qctx->layers.size()) != cfg.layers))
    throw ValueError("chunked_prefill: quantized mode needs a QuantContext");

  // Stage buffers are sized by plan.chunk_len, not cfg.chunk_len; run the
  // model at the plan's chunk length to keep the two in sync.
  ModelConfig run_cfg = cfg;
  run_cfg.chunk_len = plan.chunk_len;

  PrefillResult res;
  res.kv = KVCache::empty(cfg);
  const int h = cfg.hidden;
  const int f = cfg.ffn();
  const int c = plan.chunk_len;

  ChunkExecState st{mode, qctx, &res.fetch_log};
  Tensor last_hidden_row(1, h);

  for (int chunk = 0; chunk < plan.num_chunks; ++chunk) {
    const int offset = chunk * c;  // absolute position of the chunk's row 0
    const int real = plan.real_rows(chunk);

    // Fixed-shape chunk: pad the tail with token 0; padded rows are dropped
    // from the KV cache and from every output below.
    std::vector<int> chunk_tokens(static_cast<size_t>(c), 0);
    for (int i = 0; i < real; ++i) chunk_tokens[i] = tokens[offset + i];

    Tensor x(c, h);
    for (int i = 0; i < c; ++i)
      std::copy(m.embedding.row(chunk_tokens[i]),
                m.embedding.row(chunk_tokens[i]) + h, x.row(i));

    for (int l = 0; l < cfg.layers; ++l) {
      const auto& lw = m.layers[l];
      const QuantLayerContext* qc = qctx ? &qctx->layers[l] : nullptr;
      const int base_stage = l * kStagesPerLayer;

      // stage 0: norm + quantize + QKV linear (NPU)
      Tensor h1 = rmsnorm(x, lw.norm1_gamma);
      Tensor qkv = site_linear(h1, lw.w_qkv, qc ? &qc->qkv : nullptr,
                               qc ? qc->scale : 1.0f, st);
      res.trace.push_back({chunk, base_stage, Processor::NPU,
                           cost_key(StageKind::LinearQkv, run_cfg, chunk)});

      // stage 1: rope + attention over prior KV (CPU)
      Tensor q(c, h), k(c, h), v(c, h);
      for (int r = 0; r < c; ++r) {
        const float* src = qkv.row(r);
        std::copy(src, src + h, q.row(r));
        std::copy(src + h, src + 2 * h, k.row(r));
        std::copy(src + 2 * h, src + 3 * h, v.row(r));
      }
      q = rope(q, cfg.heads, offset);
      k = rope(k, cfg.heads, offset);

      Tensor k_all = res.kv.k[l];
      Tensor v_all = res.kv.v[l];
      k_all.append_rows(k);
      v_all.append_rows(v);
      Tensor attn = causal_attention(q, k_all, v_all, offset, cfg.heads);
      res.trace.push_back({chunk, base_stage + 1, Processor::CPU,
                           cost_key(StageKind::Attention, run_cfg, chunk)});

      // Real rows only enter the cache.
      res.kv.k[l].append_rows(k.slice_rows(0, real));
      res.kv.v[l].append_rows(v.slice_rows(0, real));

      // stage 2: O linear (NPU)
      Tensor o_out = site_linear(attn, lw.w_o, qc ? &qc->o : nullptr,
                                 qc ? qc->scale : 1.0f, st);
      for (size_t i = 0; i < x.size(); ++i) x.data()[i] += o_out.data()[i];
      res.trace.push_back({chunk, base_stage + 2, Processor::NPU,
                           cost_key(StageKind::LinearO, run_cfg, chunk)});

      // stage 3: norm (CPU)
      Tensor h2 = rmsnorm(x, lw.norm2_gamma);
      res.trace.push_back({chunk, base_stage + 3, Processor::CPU,
                           cost_key(StageKind::Norm, run_cfg, chunk)});

      // stage 4: gated FFN (NPU)
      Tensor gu = site_linear(h2, lw.w_gate_up, qc ? &qc->ffn_in : nullptr,
                              qc ? qc->scale : 1.0f, st);
      Tensor act(c, f);
      for (int r = 0; r < c; ++r) {
        const float* g = gu.row(r);
        float* dst = act.row(r);
        for (int col = 0; col < f; ++col) {
          const float gate = g[col];
          dst[col] = gate / (1.0f + std::exp(-gate)) * g[f + col];
        }
      }
      Tensor down_out =
          mode == QuantMode::Float32
              ? matmul_f32(act, lw.w_down)
              : matmul_i8(quantize_clamp(act, qc->down_scale), qc->down_q);
      for (size_t i = 0; i < x.size(); ++i) x.data()[i] += down_out.data()[i];
      res.trace.push_back({chunk, base_stage + 4, Processor::NPU,
                           cost_key(StageKind::Ffn, run_cfg, chunk)});
    }

    if (chunk + 1 == plan.num_chunks)
      last_hidden_row = x.slice_rows(real - 1, real);
  }

  res.last_logits =
      matmul_f32(rmsnorm(last_hidden_row, m.final_norm_gamma), m.lm_head);
  return res;
}

}  // namespace npusim
