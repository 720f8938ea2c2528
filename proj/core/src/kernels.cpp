#include "npusim/kernels.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <string>

namespace npusim {

namespace {

void check_finite(const Tensor& t, const char* kernel) {
  if (!t.all_finite())
    throw ValueError(std::string(kernel) + ": non-finite value in result");
}

}  // namespace

Tensor matmul_f32(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul_f32: inner dims " + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()));
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(m, n);
  // i-k-j order: per output element the k terms are added in ascending
  // order, same as a naive i-j-k loop, but the inner j loop vectorizes.
  for (int i = 0; i < m; ++i) {
    float* orow = out.row(i);
    const float* arow = a.row(i);
    for (int kk = 0; kk < k; ++kk) {
      const float aik = arow[kk];
      const float* brow = b.row(kk);
      for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  check_finite(out, "matmul_f32");
  return out;
}

Tensor matmul_i8(const QTensor& a, const QTensor& b) {
  if (a.cols() != b.rows())
    throw ShapeError("matmul_i8: inner dims " + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()));
  if (a.cols() > (1 << 15))
    throw ValueError("matmul_i8: inner dim exceeds 2^15 accumulator budget");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  const double dq = static_cast<double>(a.scale()) * static_cast<double>(b.scale());
  Tensor out(m, n);
  std::vector<int32_t> acc(static_cast<size_t>(n));
  for (int i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0);
    const int8_t* arow = a.row(i);
    for (int kk = 0; kk < k; ++kk) {
      const int32_t aik = arow[kk];
      const int8_t* brow = b.row(kk);
      for (int j = 0; j < n; ++j) acc[j] += aik * static_cast<int32_t>(brow[j]);
    }
    float* orow = out.row(i);
    for (int j = 0; j < n; ++j)
      orow[j] = static_cast<float>(dq * static_cast<double>(acc[j]));
  }
  check_finite(out, "matmul_i8");
  return out;
}

QTensor quantize_clamp(const Tensor& x, float scale) {
  if (scale <= 0.0f || !std::isfinite(scale))
    throw ValueError("quantize_clamp: scale must be positive");
  QTensor q(x.rows(), x.cols(), scale);
  const float* src = x.data().data();
  int8_t* dst = q.data().data();
  for (size_t i = 0; i < x.size(); ++i) {
    // nearbyintf under the default FP environment is round-half-to-even.
    float r = std::nearbyintf(src[i] / scale);
    r = std::min(127.0f, std::max(-127.0f, r));
    dst[i] = static_cast<int8_t>(r);
  }
  return q;
}

Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        int mask_offset, int num_heads) {
  if (mask_offset < 0) throw ValueError("causal_attention: negative mask_offset");
  if (k.rows() < mask_offset)
    throw ShapeError("causal_attention: KV shorter than mask_offset");
  if (k.rows() != mask_offset + q.rows() || v.rows() != k.rows())
    throw ShapeError("causal_attention: KV must hold mask_offset + q rows");
  if (q.cols() != k.cols() || q.cols() != v.cols())
    throw ShapeError("causal_attention: feature dims differ");
  if (num_heads < 1 || q.cols() % num_heads != 0)
    throw ShapeError("causal_attention: cols not divisible by num_heads");

  const int d = q.cols() / num_heads;
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(d));
  Tensor out(q.rows(), q.cols());
  std::vector<float> scores;

  for (int h = 0; h < num_heads; ++h) {
    const int off = h * d;
    for (int i = 0; i < q.rows(); ++i) {
      const int limit = mask_offset + i + 1;  // attend to positions [0, limit)
      scores.assign(static_cast<size_t>(limit), 0.0f);
      const float* qrow = q.row(i) + off;
      float smax = -1e30f;
      for (int j = 0; j < limit; ++j) {
        const float* krow = k.row(j) + off;
        float dot = 0.0f;
        for (int c = 0; c < d; ++c) dot += qrow[c] * krow[c];
        scores[j] = dot * inv_sqrt_d;
        smax = std::max(smax, scores[j]);
      }
      double denom = 0.0;
      for (int j = 0; j < limit; ++j) {
        scores[j] = std::exp(scores[j] - smax);
        denom += scores[j];
      }
      const float inv_denom = static_cast<float>(1.0 / denom);
      float* orow = out.row(i) + off;
      for (int c = 0; c < d; ++c) orow[c] = 0.0f;
      for (int j = 0; j < limit; ++j) {
        const float w = scores[j] * inv_denom;
        const float* vrow = v.row(j) + off;
        for (int c = 0; c < d; ++c) orow[c] += w * vrow[c];
      }
    }
  }
  check_finite(out, "causal_attention");
  return out;
}

Tensor rmsnorm(const Tensor& x, const Tensor& gamma, float eps) {
  if (gamma.cols() != x.cols() || gamma.rows() != 1)
    throw ShapeError("rmsnorm: gamma must be 1 x cols");
  Tensor out(x.rows(), x.cols());
  const float* g = gamma.row(0);
  for (int i = 0; i < x.rows(); ++i) {
    const float* src = x.row(i);
    double ms = 0.0;
    for (int c = 0; c < x.cols(); ++c) ms += static_cast<double>(src[c]) * src[c];
    const float inv_rms =
        static_cast<float>(1.0 / std::sqrt(ms / x.cols() + static_cast<double>(eps)));
    float* dst = out.row(i);
    for (int c = 0; c < x.cols(); ++c) dst[c] = src[c] * inv_rms * g[c];
  }
  check_finite(out, "rmsnorm");
  return out;
}

Tensor silu(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  for (size_t i = 0; i < x.size(); ++i) {
    const float v = x.data()[i];
    out.data()[i] = v / (1.0f + std::exp(-v));
  }
  check_finite(out, "silu");
  return out;
}

Tensor rope(const Tensor& x, int num_heads, int position_offset) {
  if (num_heads < 1 || x.cols() % num_heads != 0)
    throw ShapeError("rope: cols not divisible by num_heads");
  const int d = x.cols() / num_heads;
  if (d % 2 != 0) throw ShapeError("rope: head dim must be even");
  Tensor out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    const double pos = static_cast<double>(position_offset + i);
    const float* src = x.row(i);
    float* dst = out.row(i);
    for (int h = 0; h < num_heads; ++h) {
      const int off = h * d;
      for (int p = 0; p < d / 2; ++p) {
        const double theta =
            pos * std::pow(10000.0, -2.0 * static_cast<double>(p) / d);
        const float c = static_cast<float>(std::cos(theta));
        const float s = static_cast<float>(std::sin(theta));
        const float x0 = src[off + 2 * p];
        const float x1 = src[off + 2 * p + 1];
        dst[off + 2 * p] = c * x0 - s * x1;
        dst[off + 2 * p + 1] = s * x0 + c * x1;
      }
    }
  }
  check_finite(out, "rope");
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  Tensor out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    const float* src = x.row(i);
    float* dst = out.row(i);
    float m = -1e30f;
    for (int c = 0; c < x.cols(); ++c) m = std::max(m, src[c]);
    double denom = 0.0;
    for (int c = 0; c < x.cols(); ++c) {
      dst[c] = std::exp(src[c] - m);
      denom += dst[c];
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (int c = 0; c < x.cols(); ++c) dst[c] *= inv;
  }
  check_finite(out, "softmax_rows");
  return out;
}

}  // namespace npusim
