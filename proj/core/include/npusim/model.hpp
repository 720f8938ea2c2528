#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "npusim/tensor.hpp"

namespace npusim {

struct ModelConfig {
  int layers = 4;
  int hidden = 256;
  int heads = 8;
  int ffn_mult = 4;
  int vocab = 1024;
  int chunk_len = 256;
  uint64_t seed = 42;

  int ffn() const { return ffn_mult * hidden; }
  int head_dim() const { return hidden / heads; }

  void validate() const {
    if (layers < 1 || hidden < 1 || heads < 1 || ffn_mult < 1 || vocab < 1)
      throw ValueError("ModelConfig: dimensions must be positive");
    if (hidden % heads != 0)
      throw ValueError("ModelConfig: hidden must be divisible by heads");
    if (head_dim() % 2 != 0)
      throw ValueError("ModelConfig: head dim must be even for rotary pairs");
    if (chunk_len < 1) throw ValueError("ModelConfig: chunk_len must be >= 1");
  }
};

struct LayerWeights {
  Tensor norm1_gamma;  // 1 x h
  Tensor w_qkv;        // h x 3h
  Tensor w_o;          // h x h
  Tensor norm2_gamma;  // 1 x h
  Tensor w_gate_up;    // h x 2f
  Tensor w_down;       // f x h
};

/// Decoder-only toy transformer. Block layout: RMSNorm -> fused QKV linear ->
/// RoPE -> causal attention -> O linear (+residual) -> RMSNorm -> gated SiLU
/// FFN (+residual); final RMSNorm and lm_head on top.
struct Model {
  ModelConfig cfg;
  Tensor embedding;        // vocab x h
  std::vector<LayerWeights> layers;
  Tensor final_norm_gamma; // 1 x h
  Tensor lm_head;          // h x vocab

  int64_t parameter_count() const;
};

/// Builds a model with deterministic weights derived from cfg.seed (named
/// stream "weights"); the same seed yields bit-identical weights.
Model build_model(const ModelConfig& cfg);

/// Scales the given embedding channels of the given token ids by `factor`.
/// Prompts containing those tokens then produce activation-channel outliers
/// that a calibration corpus without them will not have priced in.
void spike_embedding(Model& m, const std::vector<int>& token_ids,
                     const std::vector<int>& channels, float factor);

/// Per-layer key/value rows accumulated so far. Keys are stored after rotary
/// encoding; rows cover real (non-padding) tokens only.
struct KVCache {
  std::vector<Tensor> k;
  std::vector<Tensor> v;

  int rows() const { return k.empty() ? 0 : k.front().rows(); }
  static KVCache empty(const ModelConfig& cfg) {
    KVCache c;
    c.k.assign(cfg.layers, Tensor(0, cfg.hidden));
    c.v.assign(cfg.layers, Tensor(0, cfg.hidden));
    return c;
  }
};

/// Observation points inside the float32 forward pass, used by offline
/// calibration to pool the inputs of every quantized matmul site.
/// Sites: "qkv", "o", "ffn_in" (hidden-sized) and "down_in" (ffn-sized).
struct ForwardHooks {
  std::function<void(int layer, const std::string& site, const Tensor& x)>
      on_site_input;
};

/// Single-shot full-sequence float32 prefill; returns the logits of the last
/// token (1 x vocab). This is the reference path the chunked pipeline is
/// checked against, written without any chunk machinery.
Tensor full_prefill(const Model& m, const std::vector<int>& tokens,
                    KVCache* kv_out = nullptr,
                    const ForwardHooks* hooks = nullptr);

/// Deterministic argmax decoding (ties: lowest token id), float32 path.
/// `last_logits` are the logits of the final prefilled token; kv is extended
/// in place by the newly generated tokens.
std::vector<int> greedy_decode(const Model& m, KVCache& kv,
                               const Tensor& last_logits, int max_new);

}  // namespace npusim
