#include "npusim/model.hpp"

#include <cmath>

#include "npusim/kernels.hpp"
#include "npusim/rng.hpp"

namespace npusim {

namespace {

Tensor random_matrix(Rng& rng, int rows, int cols, float stddev) {
  Tensor t(rows, cols);
  for (auto& v : t.data()) v = rng.normal_f(0.0f, stddev);
  return t;
}

Tensor embed_tokens(const Model& m, const std::vector<int>& tokens) {
  Tensor x(static_cast<int>(tokens.size()), m.cfg.hidden);
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= m.cfg.vocab)
      throw ValueError("token id " + std::to_string(tokens[i]) +
                       " out of vocab range");
    std::copy(m.embedding.row(tokens[i]),
              m.embedding.row(tokens[i]) + m.cfg.hidden,
              x.row(static_cast<int>(i)));
  }
  return x;
}

void add_inplace(Tensor& x, const Tensor& delta) {
  for (size_t i = 0; i < x.size(); ++i) x.data()[i] += delta.data()[i];
}

}  // namespace

int64_t Model::parameter_count() const {
  const int64_t h = cfg.hidden, f = cfg.ffn(), v = cfg.vocab;
  const int64_t per_layer = h            // norm1 gamma
                            + h * 3 * h  // qkv
                            + h * h      // o
                            + h          // norm2 gamma
                            + h * 2 * f  // gate+up
                            + f * h;     // down
  return v * h + cfg.layers * per_layer + h + h * v;
}

Model build_model(const ModelConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  Rng rng = Rng::stream(cfg.seed, "weights");

  const float h_std = 1.0f / std::sqrt(static_cast<float>(cfg.hidden));
  const float f_std = 1.0f / std::sqrt(static_cast<float>(cfg.ffn()));

  // A few embedding channels get a wider distribution. The residual stream
  // keeps channel identity, so activation outliers concentrate on a small,
  // stable set of channel positions instead of spreading uniformly.
  std::vector<float> channel_std(cfg.hidden, 1.0f);
  for (auto& s : channel_std)
    if (rng.next_double() < 0.03) s = 3.5f;

  m.embedding = Tensor(cfg.vocab, cfg.hidden);
  for (int t = 0; t < cfg.vocab; ++t) {
    float* row = m.embedding.row(t);
    for (int c = 0; c < cfg.hidden; ++c)
      row[c] = rng.normal_f(0.0f, channel_std[c]);
  }
  m.layers.resize(cfg.layers);
  for (auto& lw : m.layers) {
    lw.norm1_gamma = Tensor(1, cfg.hidden, 1.0f);
    lw.w_qkv = random_matrix(rng, cfg.hidden, 3 * cfg.hidden, h_std);
    lw.w_o = random_matrix(rng, cfg.hidden, cfg.hidden, h_std);
    lw.norm2_gamma = Tensor(1, cfg.hidden, 1.0f);
    lw.w_gate_up = random_matrix(rng, cfg.hidden, 2 * cfg.ffn(), h_std);
    lw.w_down = random_matrix(rng, cfg.ffn(), cfg.hidden, f_std);
  }
  m.final_norm_gamma = Tensor(1, cfg.hidden, 1.0f);
  m.lm_head = random_matrix(rng, cfg.hidden, cfg.vocab, h_std);
  return m;
}

void spike_embedding(Model& m, const std::vector<int>& token_ids,
                     const std::vector<int>& channels, float factor) {
  for (int t : token_ids) {
    if (t < 0 || t >= m.cfg.vocab) throw ValueError("spike_embedding: bad token id");
    for (int c : channels) {
      if (c < 0 || c >= m.cfg.hidden)
        throw ValueError("spike_embedding: bad channel");
      m.embedding.at(t, c) *= factor;
    }
  }
}

Tensor full_prefill(const Model& m, const std::vector<int>& tokens,
                    KVCache* kv_out, const ForwardHooks* hooks) {
  if (tokens.empty()) throw ValueError("full_prefill: empty token list");
  const auto& cfg = m.cfg;
  const int h = cfg.hidden;

  Tensor x = embed_tokens(m, tokens);
  if (kv_out) *kv_out = KVCache::empty(cfg);

  for (int l = 0; l < cfg.layers; ++l) {
    const auto& lw = m.layers[l];

    Tensor h1 = rmsnorm(x, lw.norm1_gamma);
    if (hooks && hooks->on_site_input) hooks->on_site_input(l, "qkv", h1);
    Tensor qkv = matmul_f32(h1, lw.w_qkv);

    Tensor q(x.rows(), h), k(x.rows(), h), v(x.rows(), h);
    for (int r = 0; r < x.rows(); ++r) {
      const float* src = qkv.row(r);
      std::copy(src, src + h, q.row(r));
      std::copy(src + h, src + 2 * h, k.row(r));
      std::copy(src + 2 * h, src + 3 * h, v.row(r));
    }
    q = rope(q, cfg.heads, 0);
    k = rope(k, cfg.heads, 0);

    Tensor attn = causal_attention(q, k, v, 0, cfg.heads);
    if (hooks && hooks->on_site_input) hooks->on_site_input(l, "o", attn);
    add_inplace(x, matmul_f32(attn, lw.w_o));

    Tensor h2 = rmsnorm(x, lw.norm2_gamma);
    if (hooks && hooks->on_site_input) hooks->on_site_input(l, "ffn_in", h2);
    Tensor gu = matmul_f32(h2, lw.w_gate_up);
    const int f = cfg.ffn();
    Tensor act(x.rows(), f);
    for (int r = 0; r < x.rows(); ++r) {
      const float* g = gu.row(r);
      float* dst = act.row(r);
      for (int c = 0; c < f; ++c) {
        const float gate = g[c];
        dst[c] = gate / (1.0f + std::exp(-gate)) * g[f + c];
      }
    }
    if (hooks && hooks->on_site_input) hooks->on_site_input(l, "down_in", act);
    add_inplace(x, matmul_f32(act, lw.w_down));

    if (kv_out) {
      kv_out->k[l].append_rows(k);
      kv_out->v[l].append_rows(v);
    }
  }

  Tensor last = x.slice_rows(x.rows() - 1, x.rows());
  return matmul_f32(rmsnorm(last, m.final_norm_gamma), m.lm_head);
}

std::vector<int> greedy_decode(const Model& m, KVCache& kv,
                               const Tensor& last_logits, int max_new) {
  const auto& cfg = m.cfg;
  if (static_cast<int>(kv.k.size()) != cfg.layers)
    throw ValueError("greedy_decode: KV cache layer count mismatch");
  const int h = cfg.hidden;

  std::vector<int> out;
  Tensor logits = last_logits;
  for (int step = 0; step < max_new; ++step) {
    int best = 0;
    const float* row = logits.row(0);
    for (int t = 1; t < cfg.vocab; ++t)
      if (row[t] > row[best]) best = t;
    out.push_back(best);

    const int pos = kv.rows();
    Tensor x = embed_tokens(m, {best});
    for (int l = 0; l < cfg.layers; ++l) {
      const auto& lw = m.layers[l];
      Tensor h1 = rmsnorm(x, lw.norm1_gamma);
      Tensor qkv = matmul_f32(h1, lw.w_qkv);
      Tensor q(1, h), k(1, h), v(1, h);
      std::copy(qkv.row(0), qkv.row(0) + h, q.row(0));
      std::copy(qkv.row(0) + h, qkv.row(0) + 2 * h, k.row(0));
      std::copy(qkv.row(0) + 2 * h, qkv.row(0) + 3 * h, v.row(0));
      q = rope(q, cfg.heads, pos);
      k = rope(k, cfg.heads, pos);

      kv.k[l].append_rows(k);
      kv.v[l].append_rows(v);
      Tensor attn = causal_attention(q, kv.k[l], kv.v[l], pos, cfg.heads);
      add_inplace(x, matmul_f32(attn, lw.w_o));

      Tensor h2 = rmsnorm(x, lw.norm2_gamma);
      Tensor gu = matmul_f32(h2, lw.w_gate_up);
      const int f = cfg.ffn();
      Tensor act(1, f);
      for (int c = 0; c < f; ++c) {
        const float gate = gu.at(0, c);
        act.at(0, c) = gate / (1.0f + std::exp(-gate)) * gu.at(0, f + c);
      }
      add_inplace(x, matmul_f32(act, lw.w_down));
    }
    logits = matmul_f32(rmsnorm(x, m.final_norm_gamma), m.lm_head);
  }
  return out;
}

}  // namespace npusim
