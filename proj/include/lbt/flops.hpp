#pragma once

#include <cstdint>

namespace lbt::flops {

// Thread-local counter of matrix-product flops (2*P*Q*R per gemm call). Only
// matmul contributes; elementwise ops, norms and softmax are not counted, so
// measured totals are directly comparable with the analytic cost model.

bool enabled();
uint64_t count();
void reset();
void add(uint64_t n);

// Enables and zeroes the counter for a scope; restores the previous enabled
// flag on exit. The count survives the scope so callers can read it after.
struct CounterScope {
    CounterScope();
    ~CounterScope();

private:
    bool prev_;
};

} // namespace lbt::flops
