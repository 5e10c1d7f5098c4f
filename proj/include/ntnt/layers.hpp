#pragma once

#include <cmath>
#include <optional>
#include <utility>

#include "ntnt/tensor.hpp"

namespace ntnt {

inline constexpr double kLayerNormEps = 1e-6;

template <typename T>
struct LinearParams {
    Tensor<T> weight; // [D_in, D_out]
    Tensor<T> bias;   // [D_out]
};

template <typename T>
struct MhaParams {
    Tensor<T> w_q, w_k, w_v; // [D, D], read as num_heads blocks of width head_dim
    Tensor<T> w_o;           // [D, D]
    std::size_t num_heads = 1;
    std::size_t head_dim = 1; // D = num_heads * head_dim
};

/// Per-(query, key) MLP over the head axis used to fuse attention logits of
/// adjacent layers: 2h -> hidden -> h with GELU in between. The output layer
/// starts at exactly zero so a freshly built model matches its fusion-free
/// baseline.
template <typename T>
struct FusionMlpParams {
    Tensor<T> w1; // [2h, hidden]
    Tensor<T> b1; // [hidden]
    Tensor<T> w2; // [hidden, h]
    Tensor<T> b2; // [h]
    std::size_t hidden = 1;
};

template <typename T>
struct MlpBlockParams {
    LinearParams<T> fc1; // [D, D*ratio]
    LinearParams<T> fc2; // [D*ratio, D]
    std::size_t ratio = 4;
};

template <typename T>
struct LayerNormParams {
    Tensor<T> gamma; // [D]
    Tensor<T> beta;  // [D]
};

/// Pre-softmax logits and post-softmax weights of one attention application.
/// `logits` are always the raw scaled q.k scores, even when the weights were
/// produced from fused logits.
template <typename T>
struct AttentionState {
    Tensor<T> logits;  // [B, h, N, N]
    Tensor<T> weights; // [B, h, N, N], rows sum to 1
};

/// x W + b applied to the last axis. Rank-1 inputs are treated as one row.
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const LinearParams<T>& p) {
    const std::size_t d_in = p.weight.shape()[0];
    if (x.shape().back() != d_in)
        throw ShapeError("linear: input " + shape_str(x.shape()) + " does not end in " +
                         std::to_string(d_in));
    if (x.rank() == 1) {
        Tensor<T> row = reshape(x, {1, d_in});
        Tensor<T> out = add(matmul(row, p.weight), p.bias);
        return reshape(out, {p.weight.shape()[1]});
    }
    return add(matmul(x, p.weight), p.bias);
}

namespace detail {

/// [B, N, D] -> [B, h, N, d]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t h) {
    const Shape& s = x.shape();
    const std::size_t d = s[2] / h;
    return permute(reshape(x, {s[0], s[1], h, d}), {0, 2, 1, 3});
}

/// [B, h, N, d] -> [B, N, h*d]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
    const Shape& s = x.shape();
    return reshape(permute(x, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

template <typename T>
void check_mha_input(const Tensor<T>& x, const MhaParams<T>& p, const char* op) {
    if (x.rank() != 3)
        throw ShapeError(std::string(op) + ": expected [B, N, D] input, got " +
                         shape_str(x.shape()));
    const std::size_t d_model = p.num_heads * p.head_dim;
    if (x.shape()[2] != d_model || p.w_q.shape() != Shape{d_model, d_model})
        throw ShapeError(std::string(op) + ": input " + shape_str(x.shape()) +
                         " incompatible with D = heads*head_dim = " + std::to_string(d_model));
}

} // namespace detail

/// Scaled pre-softmax attention scores (q.k^T / sqrt(d)) per head.
template <typename T>
Tensor<T> attention_logits(const Tensor<T>& x, const MhaParams<T>& p) {
    detail::check_mha_input(x, p, "attention_logits");
    Tensor<T> q = detail::split_heads(matmul(x, p.w_q), p.num_heads);
    Tensor<T> k = detail::split_heads(matmul(x, p.w_k), p.num_heads);
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(p.head_dim)));
    return scale(matmul(q, transpose_last2(k)), inv_sqrt_d);
}

namespace detail {

/// Shared tail of plain and nested attention: softmax(logits) V per head,
/// heads concatenated, projected by w_o.
template <typename T>
std::pair<Tensor<T>, AttentionState<T>> attention_from_logits(const Tensor<T>& x,
                                                              const MhaParams<T>& p,
                                                              const Tensor<T>& raw_logits,
                                                              const Tensor<T>& effective_logits) {
    Tensor<T> weights = softmax(effective_logits, -1);
    Tensor<T> v = split_heads(matmul(x, p.w_v), p.num_heads);
    Tensor<T> context = matmul(weights, v);
    Tensor<T> y = matmul(merge_heads(context), p.w_o);
    return {y, AttentionState<T>{raw_logits, weights}};
}

} // namespace detail

/// Standard multi-head self-attention.
template <typename T>
std::pair<Tensor<T>, AttentionState<T>> mha_forward(const Tensor<T>& x, const MhaParams<T>& p) {
    Tensor<T> z = attention_logits(x, p);
    return detail::attention_from_logits(x, p, z, z);
}

/// Correction term of the nested attention: current and previous logits are
/// stacked along the head axis (current first) and passed through the
/// per-position fusion MLP.
template <typename T>
Tensor<T> fusion_correction(const Tensor<T>& z, const Tensor<T>& prev,
                            const FusionMlpParams<T>& f) {
    if (z.shape() != prev.shape())
        throw ShapeError("fusion: logits shapes differ: " + shape_str(z.shape()) + " vs " +
                         shape_str(prev.shape()));
    Tensor<T> zc = permute(z, {0, 2, 3, 1});    // [B, N, N, h]
    Tensor<T> pc = permute(prev, {0, 2, 3, 1}); // [B, N, N, h]
    Tensor<T> stacked = concat<T>({zc, pc}, -1); // [B, N, N, 2h]
    Tensor<T> hidden = gelu(add(matmul(stacked, f.w1), f.b1));
    Tensor<T> out = add(matmul(hidden, f.w2), f.b2); // [B, N, N, h]
    return permute(out, {0, 3, 1, 2});
}

/// Multi-head attention whose softmax runs on logits corrected by the fusion
/// MLP against the previous layer's logits. Without `prev_logits` (first
/// layer) this is exactly `mha_forward`. The returned state always carries the
/// raw, unfused logits: that is what the next layer fuses against.
template <typename T>
std::pair<Tensor<T>, AttentionState<T>> nested_mha_forward(
    const Tensor<T>& x, const MhaParams<T>& p, const FusionMlpParams<T>& f,
    const std::optional<Tensor<T>>& prev_logits) {
    Tensor<T> z = attention_logits(x, p);
    if (!prev_logits.has_value()) return detail::attention_from_logits(x, p, z, z);
    Tensor<T> fused = add(z, fusion_correction(z, *prev_logits, f));
    return detail::attention_from_logits(x, p, z, fused);
}

/// fc2(gelu(fc1(x)))
template <typename T>
Tensor<T> mlp_block_forward(const Tensor<T>& x, const MlpBlockParams<T>& p) {
    return linear_forward(gelu(linear_forward(x, p.fc1)), p.fc2);
}

template <typename T>
Tensor<T> layer_norm_forward(const Tensor<T>& x, const LayerNormParams<T>& p) {
    return layer_norm(x, p.gamma, p.beta, static_cast<T>(kLayerNormEps));
}

/// Pre-norm transformer block parameters (shared by inner and outer blocks).
template <typename T>
struct TransformerBlockParams {
    LayerNormParams<T> norm1;
    MhaParams<T> attn;
    LayerNormParams<T> norm2;
    MlpBlockParams<T> mlp;
};

} // namespace ntnt
