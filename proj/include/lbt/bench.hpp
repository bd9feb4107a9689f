#pragma once

// Cost-scaling benchmark over the data-array length M: analytic flop totals
// from the attention cost model plus a wall-clock measurement of the
// cross-attention core. The latent-transformer column never depends on M,
// while the cross-attention column is linear in M, so doubling M doubles it.

#include <chrono>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "lbt/attention.hpp"
#include "lbt/rng.hpp"

namespace lbt {

struct BenchRow {
    int64_t m = 0, n = 0, l = 0, d = 0;
    uint64_t cross_attn_flops = 0; // attention products of one cross-attend
    uint64_t latent_flops = 0;     // attention products of L latent blocks
    uint64_t total_flops = 0;
    double wall_ms = 0.0; // measured cross-attention core time
};

// Times softmax(q k^T / sqrt(d)) v with q:[1,N,D], k,v:[1,M,D]. Repeats for
// at least min_ms (and at least five samples) and returns the fastest single
// evaluation: background load can only inflate a sample, so the minimum is the
// one estimator a transient stall cannot skew.
inline double time_cross_core(int64_t m, int64_t n, int64_t d, double min_ms = 50.0) {
    Rng rng(42);
    Tensor q({1, n, d}), k({1, m, d}), v({1, m, d});
    for (Tensor* t : {&q, &k, &v})
        for (int64_t i = 0; i < t->numel(); ++i) t->data()[i] = float(rng.normal(0.0, 0.1));

    using clock = std::chrono::steady_clock;
    // Untimed warm-up evaluation.
    volatile float sink = qkv_attention(q, k, v).data()[0];
    double best_ms = std::numeric_limits<double>::infinity();
    int iters = 0;
    const auto start = clock::now();
    double elapsed_ms = 0.0;
    do {
        const auto t0 = clock::now();
        sink = qkv_attention(q, k, v).data()[0];
        const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        if (ms < best_ms) best_ms = ms;
        ++iters;
        elapsed_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
    } while (elapsed_ms < min_ms || iters < 5);
    (void)sink;
    return best_ms;
}

inline BenchRow bench_row(int64_t m, int64_t n, int64_t l, int64_t d, bool measure = true) {
    BenchRow r;
    r.m = m;
    r.n = n;
    r.l = l;
    r.d = d;
    r.cross_attn_flops = attention_product_flops(1, n, m, d);
    r.latent_flops = uint64_t(l) * attention_product_flops(1, n, n, d);
    r.total_flops = cross_attention_block_flops(1, n, m, d, d) +
                    uint64_t(l) * transformer_block_flops(1, n, d);
    if (measure) r.wall_ms = time_cross_core(m, n, d);
    return r;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << "M,N,L,D,cross_attn_flops,latent_flops,total_flops,wall_ms\n";
    for (const BenchRow& r : rows)
        os << r.m << ',' << r.n << ',' << r.l << ',' << r.d << ',' << r.cross_attn_flops << ','
           << r.latent_flops << ',' << r.total_flops << ',' << r.wall_ms << '\n';
}

} // namespace lbt
