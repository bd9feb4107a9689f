#include "lbt/flops.hpp"

namespace lbt::flops {

namespace {
thread_local bool g_enabled = false;
thread_local uint64_t g_count = 0;
} // namespace

bool enabled() { return g_enabled; }
uint64_t count() { return g_count; }
void reset() { g_count = 0; }

void add(uint64_t n) {
    if (g_enabled) g_count += n;
}

CounterScope::CounterScope() : prev_(g_enabled) {
    g_enabled = true;
    g_count = 0;
}

CounterScope::~CounterScope() { g_enabled = prev_; }

} // namespace lbt::flops
