#pragma once

#include <span>

#include "promptkd/tensor.hpp"

// Differentiable operations over Tensor. Every op records a graph node when
// grad mode is on and some input requires grad.
namespace promptkd {

// [r x k] * [k x c] -> [r x c]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor exp(const Tensor& a);
// Throws NumericError on non-positive input.
Tensor log(const Tensor& a);
// tanh approximation of GELU.
Tensor gelu(const Tensor& a);

// x[r x c] + bias[c] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor sum(const Tensor& a);
// [r x c] -> [r]
Tensor row_sum(const Tensor& a);

// Row-wise log-softmax over the last dimension, max-subtracted.
// Throws NumericError on non-finite input.
Tensor log_softmax(const Tensor& x);

// Multi-head causal self-attention on packed projections.
// qkv is [L x 3d] laid out as [q | k | v]; returns the concatenated head
// outputs [L x d]. Position t attends to positions 0..t.
Tensor causal_attention(const Tensor& qkv, std::size_t n_heads);

// Rows of table[V x d] selected by ids -> [len x d]. Throws IndexError.
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

inline constexpr double kLayerNormEps = 1e-5;
// Per-row normalisation with eps inside the square root; constant rows map
// to the bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEps);

Tensor concat_rows(const Tensor& top, const Tensor& bottom);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);

}  // namespace promptkd
