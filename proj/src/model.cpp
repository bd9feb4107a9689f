#include "lbt/model.hpp"

#include <cmath>

namespace lbt {

void ModelConfig::validate() const {
    auto positive = [](int v, const char* what) {
        if (v <= 0) throw ConfigError(std::string(what) + " must be positive, got " +
                                      std::to_string(v));
    };
    positive(image_size, "image_size");
    positive(patch_size, "patch_size");
    positive(channels, "channels");
    positive(projection_dim, "projection_dim");
    positive(latent_len, "latent_len");
    positive(num_heads, "num_heads");
    positive(latent_layers, "latent_layers");
    positive(repeats, "repeats");
    if (num_classes < 2)
        throw ConfigError("num_classes must be at least 2, got " + std::to_string(num_classes));
    if (image_size % patch_size != 0)
        throw ConfigError("image_size " + std::to_string(image_size) +
                          " is not divisible by patch_size " + std::to_string(patch_size));
    if (projection_dim % num_heads != 0)
        throw ConfigError("projection_dim " + std::to_string(projection_dim) +
                          " is not divisible by num_heads " + std::to_string(num_heads));
    if (dropout < 0.0 || dropout >= 1.0)
        throw ConfigError("dropout must be in [0,1), got " + std::to_string(dropout));
}

namespace {

template <typename T>
void visit_layer_norm(LayerNormParamsT<T>& ln, const std::string& prefix,
                      std::vector<NamedParamT<T>>& out) {
    out.push_back({prefix + ".s", &ln.scale, true});
    out.push_back({prefix + ".o", &ln.offset, true});
}

template <typename T>
void visit_attention(AttentionParamsT<T>& a, const std::string& prefix,
                     std::vector<NamedParamT<T>>& out) {
    visit_layer_norm(a.ln_q, prefix + ".ln_q", out);
    if (a.ln_kv) visit_layer_norm(*a.ln_kv, prefix + ".ln_kv", out);
    out.push_back({prefix + ".wq", &a.wq, false});
    out.push_back({prefix + ".bq", &a.bq, true});
    out.push_back({prefix + ".wk", &a.wk, false});
    out.push_back({prefix + ".bk", &a.bk, true});
    out.push_back({prefix + ".wv", &a.wv, false});
    out.push_back({prefix + ".bv", &a.bv, true});
    out.push_back({prefix + ".wo", &a.wo, false});
    out.push_back({prefix + ".bo", &a.bo, true});
}

template <typename T>
void visit_block(TransformerBlockParamsT<T>& b, const std::string& prefix,
                 std::vector<NamedParamT<T>>& out) {
    visit_attention(b.attn, prefix + ".attn", out);
    visit_layer_norm(b.ln_ff, prefix + ".ln_ff", out);
    out.push_back({prefix + ".w1", &b.w1, false});
    out.push_back({prefix + ".b1", &b.b1, true});
    out.push_back({prefix + ".w2", &b.w2, false});
    out.push_back({prefix + ".b2", &b.b2, true});
}

template <typename T>
AttentionParamsT<T> make_attention(int heads, int head_dim, int64_t dq, int64_t dkv,
                                   bool with_kv_norm) {
    const int64_t D = int64_t(heads) * head_dim;
    AttentionParamsT<T> a;
    a.heads = heads;
    a.head_dim = head_dim;
    a.ln_q = {TensorT<T>({dq}), TensorT<T>({dq})};
    if (with_kv_norm) a.ln_kv = LayerNormParamsT<T>{TensorT<T>({dkv}), TensorT<T>({dkv})};
    a.wq = TensorT<T>({dq, D});
    a.bq = TensorT<T>({D});
    a.wk = TensorT<T>({dkv, D});
    a.bk = TensorT<T>({D});
    a.wv = TensorT<T>({dkv, D});
    a.bv = TensorT<T>({D});
    a.wo = TensorT<T>({D, D});
    a.bo = TensorT<T>({D});
    return a;
}

template <typename T>
TransformerBlockParamsT<T> make_block(int heads, int head_dim) {
    const int64_t D = int64_t(heads) * head_dim;
    TransformerBlockParamsT<T> b;
    b.attn = make_attention<T>(heads, head_dim, D, D, false);
    b.ln_ff = {TensorT<T>({D}), TensorT<T>({D})};
    b.w1 = TensorT<T>({D, 4 * D});
    b.b1 = TensorT<T>({4 * D});
    b.w2 = TensorT<T>({4 * D, D});
    b.b2 = TensorT<T>({D});
    return b;
}

} // namespace

template <typename T>
ParamStoreT<T> make_param_store(const ModelConfig& cfg) {
    cfg.validate();
    const int64_t D = cfg.projection_dim;
    ParamStoreT<T> p;
    p.embed_w = TensorT<T>({cfg.patch_dim(), D});
    p.embed_b = TensorT<T>({D});
    p.pos = TensorT<T>({cfg.patch_count(), D});
    p.latent = TensorT<T>({int64_t(cfg.latent_len), D});
    const int sets = cfg.share_weights ? 1 : cfg.repeats;
    for (int r = 0; r < sets; ++r) {
        p.cross.push_back(make_attention<T>(cfg.num_heads, cfg.head_dim(), D, D, true));
        std::vector<TransformerBlockParamsT<T>> layer;
        for (int l = 0; l < cfg.latent_layers; ++l)
            layer.push_back(make_block<T>(cfg.num_heads, cfg.head_dim()));
        p.blocks.push_back(std::move(layer));
    }
    p.final_ln_s = TensorT<T>({D});
    p.final_ln_o = TensorT<T>({D});
    p.head_w = TensorT<T>({D, int64_t(cfg.num_classes)});
    p.head_b = TensorT<T>({int64_t(cfg.num_classes)});
    return p;
}

template <typename T>
std::vector<NamedParamT<T>> named_params(ParamStoreT<T>& p) {
    std::vector<NamedParamT<T>> out;
    out.push_back({"embed.w", &p.embed_w, false});
    out.push_back({"embed.b", &p.embed_b, true});
    out.push_back({"pos", &p.pos, false});
    out.push_back({"latent", &p.latent, true});
    const bool shared = p.cross.size() == 1;
    for (size_t r = 0; r < p.cross.size(); ++r) {
        const std::string rp = shared ? std::string() : "rep" + std::to_string(r) + ".";
        visit_attention(p.cross[r], rp + "cross", out);
        for (size_t l = 0; l < p.blocks[r].size(); ++l)
            visit_block(p.blocks[r][l], rp + "block" + std::to_string(l), out);
    }
    out.push_back({"final_ln.s", &p.final_ln_s, true});
    out.push_back({"final_ln.o", &p.final_ln_o, true});
    out.push_back({"head.w", &p.head_w, false});
    out.push_back({"head.b", &p.head_b, true});
    return out;
}

template <typename T>
int64_t total_param_count(ParamStoreT<T>& p) {
    int64_t n = 0;
    for (const NamedParamT<T>& np : named_params(p)) n += np.tensor->numel();
    return n;
}

template <typename T>
ParamStoreT<T> init_params(const ModelConfig& cfg) {
    ParamStoreT<T> p = make_param_store<T>(cfg);
    const Rng base(cfg.seed);
    for (NamedParamT<T>& np : named_params(p)) {
        Rng stream = base.fork(Rng::hash_name(np.name));
        T* d = np.tensor->data();
        const int64_t n = np.tensor->numel();
        const bool is_ln_scale = np.name.ends_with("ln.s") || np.name.ends_with("ln_q.s") ||
                                 np.name.ends_with("ln_kv.s") || np.name.ends_with("ln_ff.s");
        if (is_ln_scale) {
            for (int64_t i = 0; i < n; ++i) d[i] = T(1);
        } else if (np.decay_exempt && np.name != "latent") {
            // biases and layer-norm offsets start at zero
        } else {
            // weights, position embedding and latent array: N(0, 0.02)
            for (int64_t i = 0; i < n; ++i) d[i] = static_cast<T>(stream.normal(0.0, 0.02));
        }
    }
    return p;
}

template <typename T>
TensorT<T> embed_image(const TensorT<T>& batch, const ParamStoreT<T>& p, const ModelConfig& cfg) {
    if (batch.rank() != 4 || batch.dim(1) != cfg.image_size || batch.dim(2) != cfg.image_size ||
        batch.dim(3) != cfg.channels)
        throw ShapeError("embed_image: expected [batch," + std::to_string(cfg.image_size) + "," +
                         std::to_string(cfg.image_size) + "," + std::to_string(cfg.channels) +
                         "], got " + shape_str(batch.shape()));
    const int64_t B = batch.dim(0);
    const int64_t P = cfg.patch_size;
    const int64_t G = cfg.image_size / cfg.patch_size; // patches per side
    const int64_t C = cfg.channels;

    // [B,G,P,G,P,C] -> [B,G,G,P,P,C] -> [B,M,P*P*C]
    TensorT<T> x = reshape(batch, {B, G, P, G, P, C});
    x = transpose(x, {0, 1, 3, 2, 4, 5});
    x = reshape(x, {B, G * G, P * P * C});
    return add(linear(x, p.embed_w, p.embed_b), p.pos);
}

template <typename T>
TensorT<T> forward(const TensorT<T>& batch, const ParamStoreT<T>& p, const ModelConfig& cfg,
                   Mode mode, Rng* rng) {
    const DropoutCfg drop{cfg.dropout, mode == Mode::train};
    TensorT<T> data = embed_image(batch, p, cfg);
    const int64_t B = batch.dim(0);
    const int64_t N = cfg.latent_len, D = cfg.projection_dim;

    TensorT<T> lat = broadcast_to(reshape(p.latent, {1, N, D}), {B, N, D});
    for (int r = 0; r < cfg.repeats; ++r) {
        const size_t idx = cfg.share_weights ? 0 : static_cast<size_t>(r);
        lat = cross_attention_block(lat, data, p.cross[idx], drop, rng);
        lat = latent_transformer(
            lat, std::span<const TransformerBlockParamsT<T>>(p.blocks[idx]), drop, rng);
    }
    lat = layer_norm(lat, p.final_ln_s, p.final_ln_o);
    TensorT<T> pooled = mean_axis(lat, 1); // [B,D]
    return linear(pooled, p.head_w, p.head_b);
}

uint64_t forward_flops(const ModelConfig& cfg, int64_t batch) {
    const int64_t B = batch, M = cfg.patch_count(), N = cfg.latent_len, D = cfg.projection_dim;
    uint64_t total = static_cast<uint64_t>(2 * B * M * cfg.patch_dim() * D); // patch projection
    const uint64_t per_repeat =
        cross_attention_block_flops(B, N, M, D, D) +
        static_cast<uint64_t>(cfg.latent_layers) * transformer_block_flops(B, N, D);
    total += static_cast<uint64_t>(cfg.repeats) * per_repeat;
    total += static_cast<uint64_t>(2 * B * D * cfg.num_classes); // classifier head
    return total;
}

#define LBT_INSTANTIATE_MODEL(T)                                                                \
    template ParamStoreT<T> make_param_store<T>(const ModelConfig&);                            \
    template std::vector<NamedParamT<T>> named_params<T>(ParamStoreT<T>&);                      \
    template int64_t total_param_count<T>(ParamStoreT<T>&);                                     \
    template ParamStoreT<T> init_params<T>(const ModelConfig&);                                 \
    template TensorT<T> embed_image<T>(const TensorT<T>&, const ParamStoreT<T>&,                \
                                       const ModelConfig&);                                     \
    template TensorT<T> forward<T>(const TensorT<T>&, const ParamStoreT<T>&, const ModelConfig&, \
                                   Mode, Rng*);

LBT_INSTANTIATE_MODEL(float)
LBT_INSTANTIATE_MODEL(double)

} // namespace lbt
