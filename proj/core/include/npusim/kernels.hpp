#pragma once

#include "npusim/tensor.hpp"

namespace npusim {

// Dense kernels every other module builds on. All kernels are pure functions
// over immutable inputs: identical inputs give bit-identical outputs. The
// accumulation order inside each kernel is fixed (row-major, ascending inner
// index), so results do not depend on build flags or call context.

/// float32 matmul, a[m x k] * b[k x n]. Throws ShapeError on inner-dim
/// mismatch.
Tensor matmul_f32(const Tensor& a, const Tensor& b);

/// int8 matmul with 32-bit integer accumulation, dequantized by
/// a.scale * b.scale. The inner dimension is capped at 2^15 so the int32
/// accumulator cannot overflow (127 * 127 * 2^15 < 2^31).
Tensor matmul_i8(const QTensor& a, const QTensor& b);

/// Symmetric per-tensor quantization: round-half-to-even of x/s, clamped to
/// [-127, 127]. Throws ValueError on non-positive scale.
QTensor quantize_clamp(const Tensor& x, float scale);

/// Causal multi-head attention over a concatenated KV prefix.
///
/// k and v hold mask_offset + q.rows() rows (prior KV first, current rows
/// last). Query row i attends to absolute positions [0, mask_offset + i].
/// Softmax is evaluated per row over exactly that prefix, so splitting the
/// queries across chunks reproduces the full-sequence result bit-for-bit.
Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        int mask_offset, int num_heads = 1);

/// RMS normalization with learned gain. gamma is 1 x cols.
Tensor rmsnorm(const Tensor& x, const Tensor& gamma, float eps = 1e-6f);

/// x * sigmoid(x), elementwise.
Tensor silu(const Tensor& x);

/// Rotary position embedding applied per head (adjacent-pair convention,
/// base 10000). The absolute position of row i is position_offset + i, so a
/// chunk at offset o matches rows [o, o+rows) of the full sequence.
Tensor rope(const Tensor& x, int num_heads, int position_offset);

/// Numerically stable softmax over each row.
Tensor softmax_rows(const Tensor& x);

}  // namespace npusim
