#pragma once

// Built-in correctness checks runnable on any install: finite-difference
// gradient verification of every differentiable op and of the full model,
// attention invariants, an optimizer-step oracle, metric formula oracles and
// kernel-variant equivalence. Completes in well under a minute.

#include <string>
#include <vector>

namespace lbt {

struct SelftestResult {
    std::string name;
    bool passed = false;
    std::string detail; // measurement or failure reason
};

// perturb_op, when non-empty, deliberately corrupts the analytic gradient of
// the named check (e.g. "grad.matmul") so the corresponding comparison must
// fail — a negative control proving the harness can catch a broken gradient.
std::vector<SelftestResult> run_selftest(const std::string& perturb_op = "");

// True when every result passed.
bool all_passed(const std::vector<SelftestResult>& results);

} // namespace lbt
