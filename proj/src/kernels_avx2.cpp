#include "lbt/kernels.hpp"

#if defined(__x86_64__) || defined(__i386__)

#include <immintrin.h>

#define LBT_AVX2 __attribute__((target("avx2,fma")))

namespace lbt::kernels {

namespace {

LBT_AVX2 inline float hsum256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

LBT_AVX2 float dot_v(const float* a, const float* b, size_t n) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 16 <= n; i += 16) {
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
        acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
    }
    for (; i + 8 <= n; i += 8)
        acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    float acc = hsum256(_mm256_add_ps(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

LBT_AVX2 void axpy_v(size_t n, float alpha, const float* x, float* y) {
    const __m256 va = _mm256_set1_ps(alpha);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vy = _mm256_loadu_ps(y + i);
        vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
        _mm256_storeu_ps(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

LBT_AVX2 void add_v(size_t n, const float* a, const float* b, float* out) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

LBT_AVX2 void mul_v(size_t n, const float* a, const float* b, float* out) {
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

LBT_AVX2 void scale_v(size_t n, float alpha, float* x) {
    const __m256 va = _mm256_set1_ps(alpha);
    size_t i = 0;
    for (; i + 8 <= n; i += 8)
        _mm256_storeu_ps(x + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
    for (; i < n; ++i) x[i] *= alpha;
}

LBT_AVX2 float sum_v(const float* x, size_t n) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    float s = hsum256(acc);
    for (; i < n; ++i) s += x[i];
    return s;
}

LBT_AVX2 float max_v(const float* x, size_t n) {
    size_t i = 0;
    float m = x[0];
    if (n >= 8) {
        __m256 vm = _mm256_loadu_ps(x);
        for (i = 8; i + 8 <= n; i += 8) vm = _mm256_max_ps(vm, _mm256_loadu_ps(x + i));
        __m128 lo = _mm_max_ps(_mm256_castps256_ps128(vm), _mm256_extractf128_ps(vm, 1));
        lo = _mm_max_ps(lo, _mm_movehl_ps(lo, lo));
        lo = _mm_max_ss(lo, _mm_shuffle_ps(lo, lo, 1));
        m = _mm_cvtss_f32(lo);
    }
    for (; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

LBT_AVX2 float sumsq_v(const float* x, size_t n) {
    __m256 acc = _mm256_setzero_ps();
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 v = _mm256_loadu_ps(x + i);
        acc = _mm256_fmadd_ps(v, v, acc);
    }
    float s = hsum256(acc);
    for (; i < n; ++i) s += x[i] * x[i];
    return s;
}

LBT_AVX2 void gemm_nn_v(size_t p, size_t q, size_t r, const float* a, const float* b, float* c) {
    for (size_t i = 0; i < p; ++i) {
        float* ci = c + i * r;
        const float* ai = a + i * q;
        for (size_t k = 0; k < q; ++k) axpy_v(r, ai[k], b + k * r, ci);
    }
}

LBT_AVX2 void gemm_nt_v(size_t p, size_t q, size_t r, const float* a, const float* b, float* c) {
    for (size_t i = 0; i < p; ++i) {
        const float* ai = a + i * q;
        float* ci = c + i * r;
        for (size_t j = 0; j < r; ++j) ci[j] += dot_v(ai, b + j * q, q);
    }
}

LBT_AVX2 void gemm_tn_v(size_t p, size_t q, size_t r, const float* a, const float* b, float* c) {
    for (size_t k = 0; k < p; ++k) {
        const float* ak = a + k * q;
        const float* bk = b + k * r;
        for (size_t i = 0; i < q; ++i) axpy_v(r, ak[i], bk, c + i * r);
    }
}

const Ops kAvx2 = {
    "avx2", dot_v,  axpy_v,   add_v,     mul_v,     scale_v,
    sum_v,  max_v,  sumsq_v,  gemm_nn_v, gemm_nt_v, gemm_tn_v,
};

bool cpu_has_avx2() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

} // namespace

const Ops* avx2() {
    static const Ops* ops = cpu_has_avx2() ? &kAvx2 : nullptr;
    return ops;
}

} // namespace lbt::kernels

#else // non-x86

namespace lbt::kernels {
const Ops* avx2() { return nullptr; }
} // namespace lbt::kernels

#endif
