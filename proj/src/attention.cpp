#include "lbt/attention.hpp"

#include <cmath>

namespace lbt {

namespace {

template <typename T>
void require_rank3(const TensorT<T>& t, const char* op, const char* role) {
    if (t.rank() != 3)
        throw ShapeError(std::string(op) + ": " + role + " must be [batch,positions,width], got " +
                         shape_str(t.shape()));
}

template <typename T>
TensorT<T> maybe_dropout(TensorT<T> x, const DropoutCfg& drop, Rng* rng) {
    if (!drop.training || drop.rate == 0.0) return x;
    if (!rng) throw ArgumentError("attention: training-mode dropout requires an rng");
    return dropout(x, drop.rate, true, *rng);
}

// [B,T,D] -> [B*H,T,dh] splitting the width into head slices.
template <typename T>
TensorT<T> split_heads(const TensorT<T>& x, int64_t H, int64_t dh) {
    const int64_t B = x.dim(0), Tn = x.dim(1);
    TensorT<T> r = reshape(x, {B, Tn, H, dh});
    TensorT<T> t = transpose(r, {0, 2, 1, 3});
    return reshape(t, {B * H, Tn, dh});
}

// [B*H,T,dh] -> [B,T,H*dh]
template <typename T>
TensorT<T> merge_heads(const TensorT<T>& x, int64_t B, int64_t H, int64_t dh) {
    const int64_t Tn = x.dim(1);
    TensorT<T> r = reshape(x, {B, H, Tn, dh});
    TensorT<T> t = transpose(r, {0, 2, 1, 3});
    return reshape(t, {B, Tn, H * dh});
}

} // namespace

template <typename T>
TensorT<T> qkv_attention(const TensorT<T>& q, const TensorT<T>& k, const TensorT<T>& v,
                         const DropoutCfg& drop, Rng* rng) {
    require_rank3(q, "qkv_attention", "q");
    require_rank3(k, "qkv_attention", "k");
    require_rank3(v, "qkv_attention", "v");
    if (q.dim(0) != k.dim(0) || q.dim(0) != v.dim(0))
        throw ShapeError("qkv_attention: batch sizes disagree: " + shape_str(q.shape()) + " / " +
                         shape_str(k.shape()) + " / " + shape_str(v.shape()));
    if (k.dim(1) != v.dim(1))
        throw ShapeError("qkv_attention: key/value lengths disagree: " + shape_str(k.shape()) +
                         " vs " + shape_str(v.shape()));
    if (q.dim(2) != k.dim(2))
        throw ShapeError("qkv_attention: query/key widths disagree: " + shape_str(q.shape()) +
                         " vs " + shape_str(k.shape()));
    if (q.dim(2) <= 0) throw ShapeError("qkv_attention: zero-width queries");

    TensorT<T> scores = matmul(q, transpose(k, {0, 2, 1}));
    scores = scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(q.dim(2)))));
    TensorT<T> weights = softmax(scores, 2);
    if (AttentionProbe<T>::fn) AttentionProbe<T>::fn(weights);
    weights = maybe_dropout(std::move(weights), drop, rng);
    return matmul(weights, v);
}

template <typename T>
TensorT<T> multi_head_attention(const TensorT<T>& x_q, const TensorT<T>& x_kv,
                                const AttentionParamsT<T>& p, const DropoutCfg& drop,
                                Rng* rng) {
    require_rank3(x_q, "multi_head_attention", "x_q");
    require_rank3(x_kv, "multi_head_attention", "x_kv");
    const int64_t H = p.heads, dh = p.head_dim, D = H * dh;
    if (H <= 0 || dh <= 0)
        throw ArgumentError("multi_head_attention: head count and head dim must be positive");
    if (x_q.dim(2) != p.wq.dim(0))
        throw ShapeError("multi_head_attention: query input width " + shape_str(x_q.shape()) +
                         " does not match projection " + shape_str(p.wq.shape()));
    if (x_kv.dim(2) != p.wk.dim(0) || x_kv.dim(2) != p.wv.dim(0))
        throw ShapeError("multi_head_attention: key/value input width " + shape_str(x_kv.shape()) +
                         " does not match projections " + shape_str(p.wk.shape()) + " / " +
                         shape_str(p.wv.shape()));
    if (p.wq.dim(1) != D || p.wk.dim(1) != D || p.wv.dim(1) != D || p.wo.dim(0) != D ||
        p.wo.dim(1) != D)
        throw ShapeError("multi_head_attention: projection widths do not equal heads*head_dim = " +
                         std::to_string(D));

    const int64_t B = x_q.dim(0);
    TensorT<T> qh = split_heads(linear(x_q, p.wq, p.bq), H, dh);
    TensorT<T> kh = split_heads(linear(x_kv, p.wk, p.bk), H, dh);
    TensorT<T> vh = split_heads(linear(x_kv, p.wv, p.bv), H, dh);
    TensorT<T> attended = qkv_attention(qh, kh, vh, drop, rng);
    return linear(merge_heads(attended, B, H, dh), p.wo, p.bo);
}

template <typename T>
TensorT<T> cross_attention_block(const TensorT<T>& latent, const TensorT<T>& data,
                                 const AttentionParamsT<T>& p, const DropoutCfg& drop,
                                 Rng* rng) {
    if (!p.ln_kv)
        throw ArgumentError("cross_attention_block: params lack the key/value-side layer norm");
    TensorT<T> qn = layer_norm(latent, p.ln_q.scale, p.ln_q.offset);
    TensorT<T> kvn = layer_norm(data, p.ln_kv->scale, p.ln_kv->offset);
    TensorT<T> a = multi_head_attention(qn, kvn, p, drop, rng);
    a = maybe_dropout(std::move(a), drop, rng);
    return add(latent, a);
}

template <typename T>
TensorT<T> transformer_block(const TensorT<T>& x, const TransformerBlockParamsT<T>& blk,
                             const DropoutCfg& drop, Rng* rng) {
    TensorT<T> h = layer_norm(x, blk.attn.ln_q.scale, blk.attn.ln_q.offset);
    TensorT<T> a = multi_head_attention(h, h, blk.attn, drop, rng);
    a = maybe_dropout(std::move(a), drop, rng);
    TensorT<T> y = add(x, a);

    TensorT<T> f = layer_norm(y, blk.ln_ff.scale, blk.ln_ff.offset);
    f = linear(f, blk.w1, blk.b1);
    f = gelu(f);
    f = linear(f, blk.w2, blk.b2);
    f = maybe_dropout(std::move(f), drop, rng);
    return add(y, f);
}

template <typename T>
TensorT<T> latent_transformer(const TensorT<T>& latent,
                              std::span<const TransformerBlockParamsT<T>> blocks,
                              const DropoutCfg& drop, Rng* rng) {
    if (blocks.empty())
        throw ArgumentError("latent_transformer: at least one block is required");
    TensorT<T> x = latent;
    for (const TransformerBlockParamsT<T>& blk : blocks) x = transformer_block(x, blk, drop, rng);
    return x;
}

// ---- analytic cost model ------------------------------------------------

uint64_t attention_product_flops(int64_t B, int64_t Tq, int64_t Tk, int64_t D) {
    return static_cast<uint64_t>(4 * B * Tq * Tk * D);
}

uint64_t attention_projection_flops(int64_t B, int64_t Tq, int64_t Tk, int64_t Dq, int64_t Dkv,
                                    int64_t D) {
    return static_cast<uint64_t>(2 * B * (Tq * Dq * D + 2 * Tk * Dkv * D + Tq * D * D));
}

uint64_t feed_forward_flops(int64_t B, int64_t T, int64_t D) {
    return static_cast<uint64_t>(16 * B * T * D * D);
}

uint64_t cross_attention_block_flops(int64_t B, int64_t N, int64_t M, int64_t D, int64_t C) {
    return attention_projection_flops(B, N, M, D, C, D) + attention_product_flops(B, N, M, D);
}

uint64_t transformer_block_flops(int64_t B, int64_t N, int64_t D) {
    return attention_projection_flops(B, N, N, D, D, D) + attention_product_flops(B, N, N, D) +
           feed_forward_flops(B, N, D);
}

#define LBT_INSTANTIATE_ATTN(T)                                                                 \
    template TensorT<T> qkv_attention<T>(const TensorT<T>&, const TensorT<T>&,                  \
                                         const TensorT<T>&, const DropoutCfg&, Rng*);           \
    template TensorT<T> multi_head_attention<T>(const TensorT<T>&, const TensorT<T>&,           \
                                                const AttentionParamsT<T>&, const DropoutCfg&,  \
                                                Rng*);                                          \
    template TensorT<T> cross_attention_block<T>(const TensorT<T>&, const TensorT<T>&,          \
                                                 const AttentionParamsT<T>&, const DropoutCfg&, \
                                                 Rng*);                                         \
    template TensorT<T> transformer_block<T>(const TensorT<T>&,                                 \
                                             const TransformerBlockParamsT<T>&,                 \
                                             const DropoutCfg&, Rng*);                          \
    template TensorT<T> latent_transformer<T>(const TensorT<T>&,                                \
                                              std::span<const TransformerBlockParamsT<T>>,      \
                                              const DropoutCfg&, Rng*);

LBT_INSTANTIATE_ATTN(float)
LBT_INSTANTIATE_ATTN(double)

} // namespace lbt
