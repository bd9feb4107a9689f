#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lbt/attention.hpp"
#include "lbt/tensor.hpp"

namespace lbt {

// Hyperparameters of the latent-bottleneck classifier. M (the patch count) is
// derived, never stored: M = (image_size / patch_size)^2.
struct ModelConfig {
    int image_size = 224;
    int patch_size = 14;
    int channels = 3;
    int projection_dim = 256; // D, model width
    int latent_len = 256;     // N, latent positions
    int num_heads = 8;
    int latent_layers = 4;    // L, self-attention blocks per repeat
    int repeats = 2;          // R, cross-attend + transform rounds
    bool share_weights = true;
    double dropout = 0.2;
    int num_classes = 2;      // K
    uint64_t seed = 0;

    int64_t patch_count() const { // M
        const int64_t g = image_size / patch_size;
        return g * g;
    }
    int64_t patch_dim() const { return int64_t(patch_size) * patch_size * channels; }
    int head_dim() const { return projection_dim / num_heads; }

    void validate() const; // throws ConfigError on any violated constraint
    bool operator==(const ModelConfig&) const = default;
};

// All learnable tensors. Tensor handles share storage, so the named flat view
// below aliases these fields: optimizer updates through the view are seen here.
template <typename T>
struct ParamStoreT {
    TensorT<T> embed_w, embed_b; // [patch_dim,D], [D]
    TensorT<T> pos;              // [M,D] learned data position embedding
    TensorT<T> latent;           // [N,D] learned latent array
    std::vector<AttentionParamsT<T>> cross;                      // 1 if shared, else R
    std::vector<std::vector<TransformerBlockParamsT<T>>> blocks; // [1][L] or [R][L]
    TensorT<T> final_ln_s, final_ln_o; // [D]
    TensorT<T> head_w, head_b;         // [D,K], [K]
};

using ParamStore = ParamStoreT<float>;
using ParamStoreD = ParamStoreT<double>;

template <typename T>
struct NamedParamT {
    std::string name;
    TensorT<T>* tensor;
    bool decay_exempt; // biases, layer-norm params, the latent array
};

using NamedParam = NamedParamT<float>;

// Deterministic enumeration (same name set for any store built from the same
// config). Pointers remain valid while the store is alive and unmoved.
template <typename T>
std::vector<NamedParamT<T>> named_params(ParamStoreT<T>& p);

template <typename T>
int64_t total_param_count(ParamStoreT<T>& p);

// Fresh parameters; every tensor drawn from an rng stream keyed by
// (cfg.seed, parameter name), so init values depend only on name and shape.
template <typename T>
ParamStoreT<T> init_params(const ModelConfig& cfg);

// Zero-valued store with the config's shapes (checkpoint loading target).
template <typename T>
ParamStoreT<T> make_param_store(const ModelConfig& cfg);

enum class Mode { train, eval };

// [B,image_size,image_size,channels] -> [B,M,D]: non-overlapping patches in
// row-major order, each flattened and projected, plus its position embedding.
template <typename T>
TensorT<T> embed_image(const TensorT<T>& batch, const ParamStoreT<T>& p, const ModelConfig& cfg);

// Full classifier forward: latent array broadcast over the batch, R rounds of
// cross-attention + latent transformer, final norm, mean over latent
// positions, affine head -> [B,K] logits. Eval mode is deterministic.
template <typename T>
TensorT<T> forward(const TensorT<T>& batch, const ParamStoreT<T>& p, const ModelConfig& cfg,
                   Mode mode, Rng* rng = nullptr);

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
TensorT<T> sparse_categorical_crossentropy(const TensorT<T>& logits,
                                           std::span<const int64_t> labels) {
    return softmax_cross_entropy(logits, labels);
}

// Analytic matmul-flop total of one forward pass; matches the runtime counter
// term for term.
uint64_t forward_flops(const ModelConfig& cfg, int64_t batch);

} // namespace lbt
