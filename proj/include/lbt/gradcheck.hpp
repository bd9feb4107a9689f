#pragma once

// Central-difference gradient checking against the reverse-mode sweep.
// Runs in double precision; callers supply a scalar-valued function that
// rebuilds the loss from the current contents of the parameter buffers.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lbt/tensor.hpp"

namespace lbt {

// f() re-evaluates the scalar loss from the current buffer contents; each
// element is nudged +/-step around its saved value.
inline std::vector<double> central_differences(const std::function<double()>& f,
                                               double* buffer, int64_t n,
                                               double step = 1e-4) {
    std::vector<double> grad(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        const double saved = buffer[i];
        buffer[i] = saved + step;
        const double up = f();
        buffer[i] = saved - step;
        const double down = f();
        buffer[i] = saved;
        grad[static_cast<size_t>(i)] = (up - down) / (2.0 * step);
    }
    return grad;
}

// Relative error with an absolute floor so near-zero entries do not blow up.
inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b,
                          double floor = 1e-6) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i], floor));
    return worst;
}

struct GradParam {
    std::string name;
    TensorD* tensor; // the same handle the loss closure reads
};

struct GradCheckResult {
    std::string name;     // which parameter tensor
    double max_rel = 0.0; // worst element
    int64_t checked = 0;
};

// Compares tape gradients against central differences for every parameter.
// loss_fn must rebuild the graph through the pointed-at tensors on each call
// (tracked when they are watched, plain arithmetic when not) and must be
// deterministic given the buffer contents — reseed any rng it uses per call.
inline std::vector<GradCheckResult> gradcheck(const std::vector<GradParam>& params,
                                              const std::function<TensorD()>& loss_fn,
                                              double step = 1e-4, double floor = 1e-6) {
    std::vector<std::vector<double>> analytic;
    {
        Tape<double> tape;
        for (const GradParam& p : params) tape.watch(*p.tensor);
        TensorD loss = loss_fn();
        tape.backward(loss);
        for (const GradParam& p : params) {
            TensorD g = tape.grad(*p.tensor);
            analytic.emplace_back(g.data(), g.data() + g.numel());
            p.tensor->detach();
        }
    }

    const auto eval = [&]() { return loss_fn().item(); };

    std::vector<GradCheckResult> out;
    for (size_t p = 0; p < params.size(); ++p) {
        TensorD& t = *params[p].tensor;
        const std::vector<double> numeric = central_differences(eval, t.data(), t.numel(), step);
        out.push_back({params[p].name, max_rel_err(analytic[p], numeric, floor), t.numel()});
    }
    return out;
}

} // namespace lbt
