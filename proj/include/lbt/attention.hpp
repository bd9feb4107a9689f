#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>

#include "lbt/tensor.hpp"

namespace lbt {

template <typename T>
struct LayerNormParamsT {
    TensorT<T> scale;  // [C]
    TensorT<T> offset; // [C]
};

// Projections for one (possibly asymmetric) attention: queries drawn from a
// width-Dq input, keys/values from a width-Dkv input, model width D = heads *
// head_dim. Heads are column slices of the combined projection matrices.
// The pre-attention layer norms live here but are applied by the block
// wrappers, not by multi_head_attention itself; self-attention blocks norm
// their single input once, so ln_kv is present only for the cross case.
template <typename T>
struct AttentionParamsT {
    int heads = 0;
    int head_dim = 0;
    LayerNormParamsT<T> ln_q;
    std::optional<LayerNormParamsT<T>> ln_kv;
    TensorT<T> wq, bq; // [Dq,D], [D]
    TensorT<T> wk, bk; // [Dkv,D], [D]
    TensorT<T> wv, bv; // [Dkv,D], [D]
    TensorT<T> wo, bo; // [D,D], [D]
};

template <typename T>
struct TransformerBlockParamsT {
    AttentionParamsT<T> attn;   // self-attention; ln_q doubles as the block's first norm
    LayerNormParamsT<T> ln_ff;  // pre-feed-forward norm
    TensorT<T> w1, b1;          // [D,4D], [4D]
    TensorT<T> w2, b2;          // [4D,D], [D]
};

using LayerNormParams = LayerNormParamsT<float>;
using AttentionParams = AttentionParamsT<float>;
using TransformerBlockParams = TransformerBlockParamsT<float>;

struct DropoutCfg {
    double rate = 0.0;
    bool training = false;
};

// Inspection hook: when set, called with the post-softmax attention weights
// [B*H, Tq, Tk] of every attention computation (rows sum to 1).
template <typename T>
struct AttentionProbe {
    static inline std::function<void(const TensorT<T>&)> fn;
};

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    return add(matmul(x, w), b);
}

// softmax(q k^T / sqrt(d)) v with optional dropout on the attention weights.
template <typename T>
TensorT<T> qkv_attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                         const DropoutCfg& drop = {}, Rng* rng = nullptr);

// Projects q/k/v per head, attends, concatenates heads, projects the output.
// Layer norms are NOT applied here (see AttentionParamsT).
template <typename T>
TensorT<T> multi_head_attention(const TensorT<T>& x_q, const TensorT<T>& x_kv,
                                const AttentionParamsT<T>& p, const DropoutCfg& drop = {},
                                Rng* rng = nullptr);

// latent [B,N,D], data [B,M,C] -> [B,N,D]: pre-norm both sides, queries from
// the latent, keys/values from the data, residual add onto the latent only.
template <typename T>
TensorT<T> cross_attention_block(const TensorT<T>& latent, const TensorT<T>& data,
                                 const AttentionParamsT<T>& p, const DropoutCfg& drop = {},
                                 Rng* rng = nullptr);

// Pre-norm self-attention + residual, then pre-norm feed-forward (4x expand,
// gelu, contract) + residual. No causal mask: latents are unordered.
template <typename T>
TensorT<T> transformer_block(const TensorT<T>& x, const TransformerBlockParamsT<T>& blk,
                             const DropoutCfg& drop = {}, Rng* rng = nullptr);

template <typename T>
TensorT<T> latent_transformer(const TensorT<T>& latent,
                              std::span<const TransformerBlockParamsT<T>> blocks,
                              const DropoutCfg& drop = {}, Rng* rng = nullptr);

// ---- analytic cost model ------------------------------------------------
// Mirrors the tensor-level matmul accounting term by term, so a measured
// counter over the corresponding code path matches these totals exactly.

// Score and weighted-value products only: 2*B*Tq*Tk*D each.
uint64_t attention_product_flops(int64_t B, int64_t Tq, int64_t Tk, int64_t D);

// q/k/v/output projections: 2*B*(Tq*Dq*D + 2*Tk*Dkv*D + Tq*D*D).
uint64_t attention_projection_flops(int64_t B, int64_t Tq, int64_t Tk, int64_t Dq, int64_t Dkv,
                                    int64_t D);

// Two affine maps through the 4x hidden width: 16*B*T*D^2.
uint64_t feed_forward_flops(int64_t B, int64_t T, int64_t D);

uint64_t cross_attention_block_flops(int64_t B, int64_t N, int64_t M, int64_t D, int64_t C);
uint64_t transformer_block_flops(int64_t B, int64_t N, int64_t D);

} // namespace lbt
