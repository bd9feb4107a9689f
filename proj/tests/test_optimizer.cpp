// LAMB update semantics against a straight-line 64-bit reference, trust-ratio
// properties, and the training loop's determinism/bookkeeping contracts.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lbt/checkpoint.hpp"
#include "lbt/error.hpp"
#include "lbt/model.hpp"
#include "lbt/optimizer.hpp"
#include "lbt/synth.hpp"
#include "test_support.hpp"

using namespace lbt;
using testsup::max_abs_diff;
using testsup::TempDir;

namespace {

// Independently executes the documented update equations in plain loops.
struct LambReference {
    std::vector<double> m, v;
    int64_t t = 0;

    explicit LambReference(size_t n) : m(n, 0.0), v(n, 0.0) {}

    double step(std::vector<double>& w, const std::vector<double>& g, bool exempt,
                const LambConfig& c) {
        const double bc1 = 1.0 - std::pow(c.beta1, double(t + 1));
        const double bc2 = 1.0 - std::pow(c.beta2, double(t + 1));
        std::vector<double> u(w.size());
        double wn = 0, un = 0;
        for (size_t i = 0; i < w.size(); ++i) {
            m[i] = c.beta1 * m[i] + (1 - c.beta1) * g[i];
            v[i] = c.beta2 * v[i] + (1 - c.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            u[i] = mhat / (std::sqrt(vhat) + c.eps) + (exempt ? 0.0 : c.weight_decay * w[i]);
            wn += w[i] * w[i];
            un += u[i] * u[i];
        }
        wn = std::sqrt(wn);
        un = std::sqrt(un);
        const double ratio =
            (wn == 0.0 || un == 0.0) ? 1.0 : std::clamp(wn / un, c.clamp_lo, c.clamp_hi);
        for (size_t i = 0; i < w.size(); ++i) w[i] -= c.lr * ratio * u[i];
        ++t;
        return ratio;
    }
};

ModelConfig smoke_config() {
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.projection_dim = 8;
    cfg.latent_len = 2;
    cfg.num_heads = 2;
    cfg.latent_layers = 1;
    cfg.repeats = 1;
    cfg.dropout = 0.0;
    cfg.num_classes = 2;
    cfg.seed = 5;
    return cfg;
}

VectorProvider smoke_provider(int per_class, uint64_t seed) {
    SynthSpec spec;
    spec.per_class = per_class;
    spec.image_size = 8;
    spec.seed = seed;
    SynthData data = synth_samples(spec);
    return VectorProvider(std::move(data.images), std::move(data.labels), 2);
}

} // namespace

TEST_CASE("single scalar step matches the 64-bit reference") {
    const LambConfig cfg;
    TensorD w = TensorD::scalar(1.0);
    std::vector<ParamSlotT<double>> slots = {{&w, false}};
    auto state = make_lamb_state<double>(slots);
    std::vector<TensorD> grads = {TensorD::scalar(1.0)};
    lamb_step<double>(slots, grads, cfg, state);

    std::vector<double> ref_w = {1.0};
    LambReference ref(1);
    ref.step(ref_w, {1.0}, false, cfg);
    CHECK(std::abs(w.item() - ref_w[0]) < 1e-10);
    // For this input the trust-scaled update collapses to exactly lr.
    CHECK(w.item() == doctest::Approx(1.0 - cfg.lr).epsilon(1e-12));
    CHECK(state.t == 1);
}

TEST_CASE("multi-step 4-element updates match the 64-bit reference") {
    LambConfig cfg;
    cfg.weight_decay = 0.01; // exaggerate decay to exercise the u = r + wd*w term
    TensorD w({4}, {0.5, -1.25, 2.0, -0.125});
    std::vector<ParamSlotT<double>> slots = {{&w, false}};
    auto state = make_lamb_state<double>(slots);

    std::vector<double> ref_w(w.data(), w.data() + 4);
    LambReference ref(4);
    Rng rng(77);
    for (int stepno = 0; stepno < 5; ++stepno) {
        std::vector<double> g(4);
        for (double& x : g) x = rng.normal();
        std::vector<TensorD> grads = {TensorD({4}, std::vector<double>(g))};
        LambStepInfo info;
        lamb_step<double>(slots, grads, cfg, state, &info);
        const double ref_ratio = ref.step(ref_w, g, false, cfg);
        for (int i = 0; i < 4; ++i) {
            CAPTURE(stepno);
            CAPTURE(i);
            CHECK(std::abs(w.data()[i] - ref_w[i]) < 1e-10);
        }
        REQUIRE(info.trust_ratio.size() == 1);
        CHECK(info.trust_ratio[0] == doctest::Approx(ref_ratio).epsilon(1e-10));
    }
    CHECK(state.t == 5);
}

TEST_CASE("zero gradient with zero decay leaves parameters untouched") {
    const LambConfig cfg;
    SUBCASE("decay-exempt slot") {
        TensorD w({3}, {1.0, -2.0, 3.0});
        std::vector<ParamSlotT<double>> slots = {{&w, true}};
        auto state = make_lamb_state<double>(slots);
        std::vector<TensorD> grads = {TensorD({3})};
        for (int i = 0; i < 3; ++i) lamb_step<double>(slots, grads, cfg, state);
        CHECK(w.data()[0] == 1.0);
        CHECK(w.data()[1] == -2.0);
        CHECK(w.data()[2] == 3.0);
    }
    SUBCASE("weight decay set to zero") {
        LambConfig no_decay = cfg;
        no_decay.weight_decay = 0.0;
        TensorD w({2}, {4.0, -5.0});
        std::vector<ParamSlotT<double>> slots = {{&w, false}};
        auto state = make_lamb_state<double>(slots);
        std::vector<TensorD> grads = {TensorD({2})};
        lamb_step<double>(slots, grads, no_decay, state);
        CHECK(w.data()[0] == 4.0);
        CHECK(w.data()[1] == -5.0);
    }
    SUBCASE("decoupled decay still moves non-exempt weights") {
        TensorD w({2}, {4.0, -5.0});
        std::vector<ParamSlotT<double>> slots = {{&w, false}};
        auto state = make_lamb_state<double>(slots);
        std::vector<TensorD> grads = {TensorD({2})};
        lamb_step<double>(slots, grads, cfg, state);
        CHECK(std::abs(w.data()[0]) < 4.0); // shrinks toward zero
        CHECK(std::abs(w.data()[1]) < 5.0);
    }
}

TEST_CASE("normalization makes the step robust to rescaling (decay off)") {
    LambConfig cfg;
    cfg.weight_decay = 0.0;

    SUBCASE("rescaling only the gradient leaves the step unchanged") {
        // m^/(sqrt(v^)+eps) cancels the gradient magnitude (up to eps).
        TensorD w1({3}, {0.4, -0.9, 1.3});
        TensorD w2 = w1;
        std::vector<ParamSlotT<double>> s1 = {{&w1, false}}, s2 = {{&w2, false}};
        auto st1 = make_lamb_state<double>(s1);
        auto st2 = make_lamb_state<double>(s2);
        std::vector<TensorD> g1 = {TensorD({3}, {0.2, 0.1, -0.3})};
        std::vector<TensorD> g2 = {TensorD({3}, {0.2 * 64, 0.1 * 64, -0.3 * 64})};
        lamb_step<double>(s1, g1, cfg, st1);
        lamb_step<double>(s2, g2, cfg, st2);
        for (int i = 0; i < 3; ++i)
            CHECK(w1.data()[i] == doctest::Approx(w2.data()[i]).epsilon(1e-7));
    }

    SUBCASE("jointly rescaling weights and gradients rescales the trajectory") {
        const double scale = 4.0; // keeps both trust ratios inside the clamp window
        TensorD w1({3}, {0.4, -0.9, 1.3});
        TensorD w2({3}, {0.4 * scale, -0.9 * scale, 1.3 * scale});
        std::vector<ParamSlotT<double>> s1 = {{&w1, false}}, s2 = {{&w2, false}};
        auto st1 = make_lamb_state<double>(s1);
        auto st2 = make_lamb_state<double>(s2);
        LambStepInfo i1, i2;
        Rng rng(13);
        for (int step = 0; step < 3; ++step) {
            std::vector<double> g(3);
            for (double& x : g) x = rng.normal(0.0, 0.3);
            std::vector<TensorD> g1 = {TensorD({3}, std::vector<double>(g))};
            for (double& x : g) x *= scale;
            std::vector<TensorD> g2 = {TensorD({3}, std::vector<double>(g))};
            lamb_step<double>(s1, g1, cfg, st1, &i1);
            lamb_step<double>(s2, g2, cfg, st2, &i2);
            // ratio = ||w||/||u|| with u scale-free, so it carries the factor.
            CHECK(i2.trust_ratio[0] ==
                  doctest::Approx(scale * i1.trust_ratio[0]).epsilon(1e-5));
            for (int i = 0; i < 3; ++i)
                CHECK(w2.data()[i] == doctest::Approx(scale * w1.data()[i]).epsilon(1e-5));
        }
    }
}

TEST_CASE("one step on the scalar quadratic strictly shrinks |w|") {
    // loss = w^2/2, gradient = w
    const LambConfig cfg; // lr 0.001
    TensorD w = TensorD::scalar(1.0);
    std::vector<ParamSlotT<double>> slots = {{&w, false}};
    auto state = make_lamb_state<double>(slots);
    double prev = 1.0;
    for (int i = 0; i < 10; ++i) {
        std::vector<TensorD> grads = {TensorD::scalar(w.item())};
        lamb_step<double>(slots, grads, cfg, state);
        CHECK(std::abs(w.item()) < std::abs(prev));
        prev = w.item();
    }
}

TEST_CASE("moments stay finite and v nonnegative over wild gradients") {
    const LambConfig cfg;
    TensorD w({4}, {1.0, 1.0, 1.0, 1.0});
    std::vector<ParamSlotT<double>> slots = {{&w, false}};
    auto state = make_lamb_state<double>(slots);
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        std::vector<TensorD> grads = {TensorD({4})};
        for (int j = 0; j < 4; ++j)
            grads[0].data()[j] = rng.normal(0.0, std::pow(10.0, rng.uniform(-6, 6)));
        lamb_step<double>(slots, grads, cfg, state);
    }
    for (int j = 0; j < 4; ++j) {
        CHECK(std::isfinite(w.data()[j]));
        CHECK(std::isfinite(state.m[0].data()[j]));
        CHECK(state.v[0].data()[j] >= 0.0);
    }
}

TEST_CASE("lamb_step validates its inputs") {
    const LambConfig cfg;
    TensorD w({2, 2});
    std::vector<ParamSlotT<double>> slots = {{&w, false}};
    auto state = make_lamb_state<double>(slots);
    CHECK(state.t == 0);
    CHECK(state.m[0].shape() == w.shape());
    CHECK(max_abs_diff(state.m[0], TensorD({2, 2})) == 0.0);

    std::vector<TensorD> wrong_shape = {TensorD({4})};
    CHECK_THROWS_AS(lamb_step<double>(slots, wrong_shape, cfg, state), ShapeError);
    std::vector<TensorD> wrong_count;
    CHECK_THROWS_AS(lamb_step<double>(slots, wrong_count, cfg, state), ArgumentError);
}

// ---- fit ----------------------------------------------------------------

TEST_CASE("fit is bit-deterministic given the seed") {
    const ModelConfig cfg = smoke_config();
    const VectorProvider data = smoke_provider(8, 21);
    FitConfig fc;
    fc.epochs = 3;
    fc.batch_size = 4;
    fc.seed = 42;
    fc.augment = true; // exercises the augmentation rng stream too

    ParamStore p1 = init_params<float>(cfg);
    const auto r1 = fit(p1, cfg, data, nullptr, fc);
    ParamStore p2 = init_params<float>(cfg);
    const auto r2 = fit(p2, cfg, data, nullptr, fc);

    REQUIRE(r1.size() == 3);
    REQUIRE(r2.size() == 3);
    for (size_t e = 0; e < 3; ++e) {
        CHECK(r1[e].epoch == int(e));
        CHECK(r1[e].train_loss == r2[e].train_loss);
        CHECK(r1[e].train_acc == r2[e].train_acc);
        CHECK(r1[e].val_loss == r2[e].val_loss);
        CHECK(r1[e].train_loss >= 0.0);
        CHECK(r1[e].train_acc >= 0.0);
        CHECK(r1[e].train_acc <= 1.0);
    }
    auto n1 = named_params(p1), n2 = named_params(p2);
    for (size_t i = 0; i < n1.size(); ++i) CHECK(max_abs_diff(*n1[i].tensor, *n2[i].tensor) == 0.0);

    // A different seed must actually change the trajectory.
    ParamStore p3 = init_params<float>(cfg);
    FitConfig fc3 = fc;
    fc3.seed = 43;
    const auto r3 = fit(p3, cfg, data, nullptr, fc3);
    CHECK(r3.back().train_loss != r1.back().train_loss);
}

TEST_CASE("fit without a validation provider repeats the train metrics") {
    const ModelConfig cfg = smoke_config();
    const VectorProvider data = smoke_provider(4, 3);
    FitConfig fc;
    fc.epochs = 2;
    fc.batch_size = 4;
    fc.augment = false;
    ParamStore p = init_params<float>(cfg);
    for (const TrainRecord& r : fit(p, cfg, data, nullptr, fc)) {
        CHECK(r.val_loss == r.train_loss);
        CHECK(r.val_acc == r.train_acc);
    }
}

TEST_CASE("fit with zero learning rate leaves the loss flat") {
    const ModelConfig cfg = smoke_config();
    const VectorProvider data = smoke_provider(6, 9);
    FitConfig fc;
    fc.epochs = 4;
    fc.batch_size = 4;
    fc.augment = false;
    fc.lamb.lr = 0.0;
    ParamStore p = init_params<float>(cfg);
    std::vector<float> w0(p.embed_w.data(), p.embed_w.data() + p.embed_w.numel());
    const auto records = fit(p, cfg, data, nullptr, fc);
    for (const TrainRecord& r : records)
        CHECK(std::abs(r.train_loss - records[0].train_loss) <= 1e-6);
    for (int64_t i = 0; i < p.embed_w.numel(); ++i) CHECK(p.embed_w.data()[i] == w0[size_t(i)]);
}

TEST_CASE("fit rejects an empty dataset and missing best path") {
    const ModelConfig cfg = smoke_config();
    ParamStore p = init_params<float>(cfg);
    const VectorProvider empty({}, {}, 2);
    FitConfig fc;
    fc.epochs = 1;
    CHECK_THROWS_AS(fit(p, cfg, empty, nullptr, fc), ArgumentError);

    const VectorProvider data = smoke_provider(2, 1);
    FitConfig keep;
    keep.epochs = 1;
    keep.keep_best = true; // no best_path
    CHECK_THROWS_AS(fit(p, cfg, data, &data, keep), ArgumentError);
}

TEST_CASE("keep_best writes the best-validation checkpoint") {
    TempDir dir("best");
    const ModelConfig cfg = smoke_config();
    const VectorProvider data = smoke_provider(6, 2);
    const VectorProvider val = smoke_provider(3, 4);
    FitConfig fc;
    fc.epochs = 3;
    fc.batch_size = 4;
    fc.augment = false;
    fc.keep_best = true;
    fc.best_path = dir.file("best.ckpt");
    ParamStore p = init_params<float>(cfg);
    fit(p, cfg, data, &val, fc);
    REQUIRE(std::filesystem::exists(fc.best_path));
    auto [loaded, cfg2] = load_checkpoint(fc.best_path);
    CHECK(cfg2 == cfg);
}

TEST_CASE("evaluate_provider metrics and batching") {
    const ModelConfig cfg = smoke_config();
    const VectorProvider data = smoke_provider(7, 6); // 14 samples
    ParamStore p = init_params<float>(cfg);
    const EvalResult a = evaluate_provider(p, cfg, data, 5);
    const EvalResult b = evaluate_provider(p, cfg, data, 14);
    REQUIRE(a.predictions.size() == 14);
    REQUIRE(a.labels.size() == 14);
    CHECK(a.predictions == b.predictions);
    CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-6));
    int correct = 0;
    for (size_t i = 0; i < a.predictions.size(); ++i) correct += a.predictions[i] == a.labels[i];
    CHECK(a.accuracy == doctest::Approx(double(correct) / 14).epsilon(1e-12));
    CHECK(a.loss >= 0.0);
}

TEST_CASE("curves CSV has the pinned header and one row per epoch") {
    TempDir dir("curves");
    std::vector<TrainRecord> records(3);
    for (int i = 0; i < 3; ++i) {
        records[size_t(i)].epoch = i;
        records[size_t(i)].train_loss = 0.5 - 0.1 * i;
        records[size_t(i)].train_acc = 0.6 + 0.1 * i;
        records[size_t(i)].val_loss = 0.55 - 0.1 * i;
        records[size_t(i)].val_acc = 0.58 + 0.1 * i;
        records[size_t(i)].seconds = 1.25;
    }
    const std::string path = dir.file("curves.csv");
    write_curves_csv(path, records);
    std::ifstream in(path);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "epoch,train_loss,train_acc,val_loss,val_acc,seconds");
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        CHECK(std::count(line.begin(), line.end(), ',') == 5);
        ++rows;
    }
    CHECK(rows == 3);
}
