#include "lbt/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "lbt/attention.hpp"
#include "lbt/gradcheck.hpp"
#include "lbt/kernels.hpp"
#include "lbt/metrics.hpp"
#include "lbt/model.hpp"
#include "lbt/optimizer.hpp"
#include "lbt/rng.hpp"
#include "lbt/tensor.hpp"

namespace lbt {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

TensorD randn(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    TensorD t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal(0.0, scale);
    return t;
}

class Suite {
public:
    explicit Suite(std::string perturb) : perturb_(std::move(perturb)) {}

    std::vector<SelftestResult> take() { return std::move(results_); }
    bool perturb_used() const { return perturb_used_; }

    void report(const std::string& name, bool passed, const std::string& detail) {
        results_.push_back({name, passed, detail});
    }

    // Finite-difference comparison for the graph built by loss_fn over params.
    // If this check is the perturbation target the analytic gradient's first
    // element is corrupted, so a passing harness must flag a failure here.
    void grad_check(const std::string& name, const std::vector<GradParam>& params,
                    const std::function<TensorD()>& loss_fn, double tol = 1e-6,
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
        if (name == perturb_) {
            perturb_used_ = true;
            analytic[0][0] += 1e-2;
        }

        const auto eval = [&]() { return loss_fn().item(); };
        double worst = 0.0;
        std::string worst_name;
        for (size_t p = 0; p < params.size(); ++p) {
            TensorD& t = *params[p].tensor;
            const std::vector<double> numeric =
                central_differences(eval, t.data(), t.numel(), step);
            const double e = max_rel_err(analytic[p], numeric, floor);
            if (e >= worst) {
                worst = e;
                worst_name = params[p].name;
            }
        }
        report(name, worst < tol,
               "max rel err " + fmt(worst) + " (tensor " + worst_name + ", tol " + fmt(tol) +
                   ")");
    }

    void close(const std::string& name, double got, double want, double tol) {
        const double err = std::abs(got - want);
        report(name, err <= tol,
               "got " + fmt(got) + ", want " + fmt(want) + " (|diff| " + fmt(err) + ", tol " +
                   fmt(tol) + ")");
    }

private:
    std::string perturb_;
    bool perturb_used_ = false;
    std::vector<SelftestResult> results_;
};

AttentionParamsT<double> random_attention(int heads, int head_dim, int dq, int dkv, Rng& rng,
                                          bool with_ln_kv) {
    const int d = heads * head_dim;
    AttentionParamsT<double> p;
    p.heads = heads;
    p.head_dim = head_dim;
    p.ln_q = {TensorD::full({dq}, 1.0), TensorD({dq})};
    if (with_ln_kv) p.ln_kv = LayerNormParamsT<double>{TensorD::full({dkv}, 1.0), TensorD({dkv})};
    p.wq = randn({dq, d}, rng, 0.3);
    p.bq = randn({d}, rng, 0.1);
    p.wk = randn({dkv, d}, rng, 0.3);
    p.bk = randn({d}, rng, 0.1);
    p.wv = randn({dkv, d}, rng, 0.3);
    p.bv = randn({d}, rng, 0.1);
    p.wo = randn({d, d}, rng, 0.3);
    p.bo = randn({d}, rng, 0.1);
    return p;
}

std::vector<GradParam> attention_grad_params(AttentionParamsT<double>& p) {
    std::vector<GradParam> out = {{"wq", &p.wq}, {"bq", &p.bq}, {"wk", &p.wk}, {"bk", &p.bk},
                                  {"wv", &p.wv}, {"bv", &p.bv}, {"wo", &p.wo}, {"bo", &p.bo},
                                  {"ln_q.s", &p.ln_q.scale}, {"ln_q.o", &p.ln_q.offset}};
    if (p.ln_kv) {
        out.push_back({"ln_kv.s", &p.ln_kv->scale});
        out.push_back({"ln_kv.o", &p.ln_kv->offset});
    }
    return out;
}

// Weighted sum against a fixed random tensor turns any output into a scalar
// that exercises every output element.
TensorD pool(const TensorD& out, const TensorD& weights) {
    return sum_all(mul(out, weights));
}

void elementwise_op_checks(Suite& s, Rng& base) {
    {
        Rng rng = base.fork(1);
        TensorD a = randn({2, 3}, rng);
        TensorD b = randn({3, 4}, rng);
        const TensorD w = randn({2, 4}, rng);
        s.grad_check("grad.matmul", {{"a", &a}, {"b", &b}},
                     [&]() { return pool(matmul(a, b), w); });
    }
    {
        Rng rng = base.fork(2);
        TensorD a = randn({2, 3, 4}, rng);
        TensorD b = randn({4}, rng); // broadcast over leading axes
        const TensorD w = randn({2, 3, 4}, rng);
        s.grad_check("grad.add", {{"a", &a}, {"b", &b}},
                     [&]() { return pool(add(a, b), w); });
    }
    {
        Rng rng = base.fork(3);
        TensorD a = randn({3, 4}, rng);
        TensorD b = randn({3, 4}, rng);
        const TensorD w = randn({3, 4}, rng);
        s.grad_check("grad.mul", {{"a", &a}, {"b", &b}},
                     [&]() { return pool(mul(a, b), w); });
    }
    {
        Rng rng = base.fork(4);
        TensorD x = randn({2, 5}, rng);
        const TensorD w = randn({2, 5}, rng);
        s.grad_check("grad.softmax", {{"x", &x}}, [&]() { return pool(softmax(x, 1), w); });
    }
    {
        Rng rng = base.fork(5);
        TensorD x = randn({3, 4}, rng);
        TensorD gain = randn({4}, rng, 0.5);
        TensorD bias = randn({4}, rng, 0.5);
        const TensorD w = randn({3, 4}, rng);
        s.grad_check("grad.layer_norm", {{"x", &x}, {"gain", &gain}, {"bias", &bias}},
                     [&]() { return pool(layer_norm(x, gain, bias), w); }, 1e-5);
    }
    {
        Rng rng = base.fork(6);
        TensorD x = randn({2, 6}, rng);
        const TensorD w = randn({2, 6}, rng);
        s.grad_check("grad.gelu", {{"x", &x}}, [&]() { return pool(gelu(x), w); });
    }
    {
        Rng rng = base.fork(7);
        TensorD x = randn({4, 4}, rng);
        const TensorD w = randn({4, 4}, rng);
        // The mask must replay identically on every call, so the dropout rng
        // restarts from the same state each evaluation.
        s.grad_check("grad.dropout", {{"x", &x}}, [&]() {
            Rng drop = base.fork(8);
            return pool(dropout(x, 0.3, true, drop), w);
        });
    }
    {
        Rng rng = base.fork(9);
        TensorD x = randn({2, 3, 4}, rng);
        const TensorD w = randn({2, 3}, rng);
        s.grad_check("grad.reductions", {{"x", &x}}, [&]() {
            TensorD t = transpose(x, {0, 2, 1});      // [2,4,3]
            TensorD m = mean_axis(t, 1);              // [2,3]
            TensorD r = reshape(m, {3, 2});
            return pool(reshape(r, {2, 3}), w);
        });
    }
    {
        Rng rng = base.fork(10);
        TensorD logits = randn({3, 4}, rng);
        const std::vector<int64_t> labels = {0, 3, 1};
        s.grad_check("grad.cross_entropy", {{"logits", &logits}}, [&]() {
            return softmax_cross_entropy(logits, std::span<const int64_t>(labels));
        });
    }
}

void attention_checks(Suite& s, Rng& base) {
    {
        Rng rng = base.fork(20);
        AttentionParamsT<double> p = random_attention(2, 3, 6, 5, rng, true);
        TensorD lat = randn({2, 3, 6}, rng);
        TensorD data = randn({2, 4, 5}, rng);
        std::vector<GradParam> params = attention_grad_params(p);
        params.push_back({"latent", &lat});
        params.push_back({"data", &data});
        const TensorD w = randn({2, 3, 6}, rng);
        s.grad_check("grad.attention", params,
                     [&]() { return pool(cross_attention_block(lat, data, p), w); }, 1e-5);
    }
    {
        // Every attention row must be a probability distribution.
        Rng rng = base.fork(21);
        AttentionParamsT<double> p = random_attention(2, 4, 8, 8, rng, false);
        TensorD x = randn({2, 5, 8}, rng);
        double worst = 0.0;
        AttentionProbe<double>::fn = [&](const TensorD& weights) {
            const int64_t rows = weights.numel() / weights.dim(2);
            const int64_t cols = weights.dim(2);
            for (int64_t r = 0; r < rows; ++r) {
                double sum = 0.0;
                for (int64_t c = 0; c < cols; ++c) sum += weights.data()[r * cols + c];
                worst = std::max(worst, std::abs(sum - 1.0));
            }
        };
        multi_head_attention(x, x, p);
        AttentionProbe<double>::fn = nullptr;
        s.close("attention.row_sums", worst, 0.0, 1e-12);
    }
    {
        // Reordering the data positions cannot change the latent output.
        Rng rng = base.fork(22);
        AttentionParamsT<double> p = random_attention(2, 4, 8, 6, rng, true);
        TensorD lat = randn({1, 3, 8}, rng);
        TensorD data = randn({1, 7, 6}, rng);
        TensorD out = cross_attention_block(lat, data, p);

        std::vector<int64_t> perm(7);
        for (size_t i = 0; i < perm.size(); ++i) perm[i] = int64_t(i);
        Rng shuf = base.fork(23);
        shuf.shuffle(perm);
        TensorD shuffled({1, 7, 6});
        for (int64_t m = 0; m < 7; ++m)
            for (int64_t c = 0; c < 6; ++c)
                shuffled.data()[m * 6 + c] = data.data()[perm[size_t(m)] * 6 + c];
        TensorD out2 = cross_attention_block(lat, shuffled, p);
        double worst = 0.0;
        for (int64_t i = 0; i < out.numel(); ++i)
            worst = std::max(worst, std::abs(out.data()[i] - out2.data()[i]));
        s.close("attention.permutation", worst, 0.0, 1e-12);
    }
}

void model_checks(Suite& s, Rng& base) {
    ModelConfig cfg;
    cfg.image_size = 4;
    cfg.patch_size = 2;
    cfg.channels = 3;
    cfg.projection_dim = 4;
    cfg.latent_len = 2;
    cfg.num_heads = 2;
    cfg.latent_layers = 1;
    cfg.repeats = 1;
    cfg.dropout = 0.0;
    cfg.num_classes = 2;
    cfg.seed = 7;

    ParamStoreD store = init_params<double>(cfg);
    Rng rng = base.fork(30);
    TensorD batch({2, 4, 4, 3});
    for (int64_t i = 0; i < batch.numel(); ++i) batch.data()[i] = rng.uniform();
    const std::vector<int64_t> labels = {0, 1};

    std::vector<GradParam> params;
    for (auto& np : named_params(store)) params.push_back({np.name, np.tensor});
    s.grad_check("grad.model", params,
                 [&]() {
                     TensorD logits = forward(batch, store, cfg, Mode::eval);
                     return softmax_cross_entropy(logits, std::span<const int64_t>(labels));
                 },
                 1e-4, 1e-5, 1e-6);
}

void optimizer_checks(Suite& s) {
    const LambConfig cfg; // lr 0.001, wd 0.0001
    {
        // Scalar step: the trust-scaled update lr*(||w||/||u||)*u collapses to
        // lr*sign(u), so w' = 1 - lr exactly.
        TensorD w = TensorD::scalar(1.0);
        std::vector<ParamSlotT<double>> slots = {{&w, false}};
        auto state = make_lamb_state<double>(slots);
        std::vector<TensorD> grads = {TensorD::scalar(1.0)};
        lamb_step<double>(slots, grads, cfg, state);
        s.close("optimizer.scalar_step", w.item(), 1.0 - cfg.lr, 1e-12);
    }
    {
        // Zero gradient on a decay-exempt tensor must leave it untouched.
        TensorD w({3});
        for (int i = 0; i < 3; ++i) w.data()[i] = 1.0 + i;
        std::vector<ParamSlotT<double>> slots = {{&w, true}};
        auto state = make_lamb_state<double>(slots);
        std::vector<TensorD> grads = {TensorD({3})};
        lamb_step<double>(slots, grads, cfg, state);
        double worst = 0.0;
        for (int i = 0; i < 3; ++i) worst = std::max(worst, std::abs(w.data()[i] - (1.0 + i)));
        s.close("optimizer.exempt_zero_grad", worst, 0.0, 0.0);
    }
}

void metrics_checks(Suite& s) {
    ConfusionMatrix cm(2, {"neg", "pos"});
    cm.at(0, 0) = 21;
    cm.at(0, 1) = 2;
    cm.at(1, 0) = 3;
    cm.at(1, 1) = 66;
    const PerClassMetrics pcm = per_class_metrics(cm);
    s.close("metrics.accuracy", pcm.accuracy, 87.0 / 92.0, 1e-12);
    s.close("metrics.kappa", cohen_kappa(cm), 6.0 / 7.0, 1e-12);
    const ScreeningMetrics sm = binary_screening_metrics(cm, 1);
    s.close("metrics.sensitivity", sm.sensitivity.value, 66.0 / 69.0, 1e-12);
    s.close("metrics.specificity", sm.specificity.value, 21.0 / 23.0, 1e-12);
    s.close("metrics.ppv", sm.ppv.value, 66.0 / 68.0, 1e-12);
    s.close("metrics.npv", sm.npv.value, 21.0 / 24.0, 1e-12);
}

void kernel_checks(Suite& s, Rng& base) {
    const kernels::Ops* vec = kernels::avx2();
    if (!vec) {
        s.report("kernels.equivalence", true, "no vector unit; scalar kernels only");
        return;
    }
    Rng rng = base.fork(40);
    const size_t p = 13, q = 17, r = 11;
    std::vector<float> a(p * q), b(q * r), c0(p * r, 0.f), c1(p * r, 0.f);
    for (float& v : a) v = float(rng.normal());
    for (float& v : b) v = float(rng.normal());
    kernels::scalar().gemm_nn(p, q, r, a.data(), b.data(), c0.data());
    vec->gemm_nn(p, q, r, a.data(), b.data(), c1.data());
    double worst = 0.0;
    for (size_t i = 0; i < c0.size(); ++i)
        worst = std::max(worst, double(std::abs(c0[i] - c1[i])));
    s.close("kernels.equivalence", worst, 0.0, 1e-4);
}

} // namespace

std::vector<SelftestResult> run_selftest(const std::string& perturb_op) {
    Suite s(perturb_op);
    Rng base(0x5e1f);
    elementwise_op_checks(s, base);
    attention_checks(s, base);
    model_checks(s, base);
    optimizer_checks(s);
    metrics_checks(s);
    kernel_checks(s, base);
    auto results = s.take();
    if (!perturb_op.empty() && !s.perturb_used())
        results.push_back({"perturb." + perturb_op, false, "no such gradient check"});
    return results;
}

bool all_passed(const std::vector<SelftestResult>& results) {
    for (const auto& r : results)
        if (!r.passed) return false;
    return true;
}

} // namespace lbt
