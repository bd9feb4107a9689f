#pragma once

#include <cstddef>
#include <string>

namespace lbt::kernels {

// Dispatch table for the f32 inner loops. One scalar reference implementation
// and one AVX2 variant; the active table is chosen once at startup from CPU
// capabilities and can be overridden with LBT_KERNELS=scalar|avx2 or select().
//
// The gemm kernels accumulate into C (row-major):
//   gemm_nn: C[p,r] += A[p,q] * B[q,r]
//   gemm_nt: C[p,r] += A[p,q] * B[r,q]^T   (B stored [r,q])
//   gemm_tn: C[q,r] += A[p,q]^T * B[p,r]   (A stored [p,q])
struct Ops {
    const char* name;
    float (*dot)(const float* a, const float* b, size_t n);
    void (*axpy)(size_t n, float alpha, const float* x, float* y); // y += alpha*x
    void (*add)(size_t n, const float* a, const float* b, float* out);
    void (*mul)(size_t n, const float* a, const float* b, float* out);
    void (*scale)(size_t n, float alpha, float* x);
    float (*sum)(const float* x, size_t n);
    float (*max)(const float* x, size_t n); // n >= 1
    float (*sumsq)(const float* x, size_t n);
    void (*gemm_nn)(size_t p, size_t q, size_t r, const float* a, const float* b, float* c);
    void (*gemm_nt)(size_t p, size_t q, size_t r, const float* a, const float* b, float* c);
    void (*gemm_tn)(size_t p, size_t q, size_t r, const float* a, const float* b, float* c);
};

const Ops& scalar();
const Ops* avx2(); // nullptr when the CPU lacks AVX2+FMA
const Ops& active();

// name: "scalar", "avx2" or "auto". Throws ArgumentError for unknown names or
// when the requested variant is unavailable on this CPU.
void select(const std::string& name);

} // namespace lbt::kernels
