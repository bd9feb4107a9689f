#include "lbt/kernels.hpp"

#include <cstdlib>

#include "lbt/error.hpp"
#include "lbt/kernels_ref.hpp"

namespace lbt::kernels {

namespace {

float dot_s(const float* a, const float* b, size_t n) { return ref::dot(a, b, n); }
void axpy_s(size_t n, float alpha, const float* x, float* y) { ref::axpy(n, alpha, x, y); }
void add_s(size_t n, const float* a, const float* b, float* out) { ref::add(n, a, b, out); }
void mul_s(size_t n, const float* a, const float* b, float* out) { ref::mul(n, a, b, out); }
void scale_s(size_t n, float alpha, float* x) { ref::scale(n, alpha, x); }
float sum_s(const float* x, size_t n) { return ref::sum(x, n); }
float max_s(const float* x, size_t n) { return ref::max(x, n); }
float sumsq_s(const float* x, size_t n) { return ref::sumsq(x, n); }
void gemm_nn_s(size_t p, size_t q, size_t r, const float* a, const float* b, float* c) {
    ref::gemm_nn(p, q, r, a, b, c);
}
void gemm_nt_s(size_t p, size_t q, size_t r, const float* a, const float* b, float* c) {
    ref::gemm_nt(p, q, r, a, b, c);
}
void gemm_tn_s(size_t p, size_t q, size_t r, const float* a, const float* b, float* c) {
    ref::gemm_tn(p, q, r, a, b, c);
}

const Ops kScalar = {
    "scalar", dot_s,  axpy_s,    add_s,     mul_s,     scale_s,
    sum_s,    max_s,  sumsq_s,   gemm_nn_s, gemm_nt_s, gemm_tn_s,
};

const Ops* pick_default() {
    if (const char* env = std::getenv("LBT_KERNELS")) {
        std::string v(env);
        if (v == "scalar") return &kScalar;
        if (v == "avx2" && avx2()) return avx2();
        // unknown or unavailable value falls through to auto
    }
    if (const Ops* a = avx2()) return a;
    return &kScalar;
}

const Ops*& active_slot() {
    static const Ops* slot = pick_default();
    return slot;
}

} // namespace

const Ops& scalar() { return kScalar; }

const Ops& active() { return *active_slot(); }

void select(const std::string& name) {
    if (name == "scalar") {
        active_slot() = &kScalar;
    } else if (name == "avx2") {
        const Ops* a = avx2();
        if (!a) throw ArgumentError("kernels: avx2 not supported on this CPU");
        active_slot() = a;
    } else if (name == "auto") {
        active_slot() = avx2() ? avx2() : &kScalar;
    } else {
        throw ArgumentError("kernels: unknown variant '" + name + "'");
    }
}

} // namespace lbt::kernels
