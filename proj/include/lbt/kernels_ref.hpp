#pragma once

#include <cstddef>

namespace lbt::kernels::ref {

// Scalar reference kernels, templated so the f64 gradient-check path and the
// f32 scalar dispatch table share one definition.

template <typename T>
inline T dot(const T* a, const T* b, size_t n) {
    T acc = 0;
    for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

template <typename T>
inline void axpy(size_t n, T alpha, const T* x, T* y) {
    for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
inline void add(size_t n, const T* a, const T* b, T* out) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
inline void mul(size_t n, const T* a, const T* b, T* out) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
inline void scale(size_t n, T alpha, T* x) {
    for (size_t i = 0; i < n; ++i) x[i] *= alpha;
}

template <typename T>
inline T sum(const T* x, size_t n) {
    T acc = 0;
    for (size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

template <typename T>
inline T max(const T* x, size_t n) {
    T m = x[0];
    for (size_t i = 1; i < n; ++i)
        if (x[i] > m) m = x[i];
    return m;
}

template <typename T>
inline T sumsq(const T* x, size_t n) {
    T acc = 0;
    for (size_t i = 0; i < n; ++i) acc += x[i] * x[i];
    return acc;
}

// C[p,r] += A[p,q] * B[q,r]
template <typename T>
inline void gemm_nn(size_t p, size_t q, size_t r, const T* a, const T* b, T* c) {
    for (size_t i = 0; i < p; ++i) {
        T* ci = c + i * r;
        const T* ai = a + i * q;
        for (size_t k = 0; k < q; ++k) axpy(r, ai[k], b + k * r, ci);
    }
}

// C[p,r] += A[p,q] * B[r,q]^T
template <typename T>
inline void gemm_nt(size_t p, size_t q, size_t r, const T* a, const T* b, T* c) {
    for (size_t i = 0; i < p; ++i) {
        const T* ai = a + i * q;
        T* ci = c + i * r;
        for (size_t j = 0; j < r; ++j) ci[j] += dot(ai, b + j * q, q);
    }
}

// C[q,r] += A[p,q]^T * B[p,r]
template <typename T>
inline void gemm_tn(size_t p, size_t q, size_t r, const T* a, const T* b, T* c) {
    for (size_t k = 0; k < p; ++k) {
        const T* ak = a + k * q;
        const T* bk = b + k * r;
        for (size_t i = 0; i < q; ++i) axpy(r, ak[i], bk, c + i * r);
    }
}

} // namespace lbt::kernels::ref
