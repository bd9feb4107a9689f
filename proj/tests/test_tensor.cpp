// Tensor op semantics: frozen numeric oracles, 64-bit finite-difference
// gradient verification for every differentiable op, broadcasting rules,
// tape lifecycle and strict-finite behavior.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lbt/error.hpp"
#include "lbt/gradcheck.hpp"
#include "lbt/rng.hpp"
#include "lbt/tensor.hpp"
#include "test_support.hpp"

using namespace lbt;
using testsup::randn;

namespace {

// Scalarizes an arbitrary output by weighting every element.
TensorD pool(const TensorD& out, const TensorD& w) { return sum_all(mul(out, w)); }

void check_grads(const std::vector<GradParam>& params, const std::function<TensorD()>& loss,
                 double tol = 1e-6) {
    for (const GradCheckResult& r : gradcheck(params, loss)) {
        CAPTURE(r.name);
        CHECK(r.max_rel < tol);
    }
}

} // namespace

// ---- forward oracles ----------------------------------------------------

TEST_CASE_TEMPLATE("matmul oracle", T, float, double) {
    const TensorT<T> a({2, 2}, {1, 2, 3, 4});
    const TensorT<T> b({2, 1}, {5, 6});
    const TensorT<T> c = matmul(a, b);
    REQUIRE(c.shape() == std::vector<int64_t>{2, 1});
    CHECK(c.data()[0] == T(17));
    CHECK(c.data()[1] == T(39));
}

TEST_CASE("matmul broadcasts batch dimensions at matrix granularity") {
    Rng rng(1);
    const TensorD a = randn<double>({3, 2, 4}, rng);
    const TensorD b = randn<double>({4, 5}, rng);
    const TensorD c = matmul(a, b);
    REQUIRE(c.shape() == std::vector<int64_t>{3, 2, 5});
    // Batch 2 of the broadcast product equals the plain 2-D product.
    const TensorD a2({2, 4}, {a.data()[16], a.data()[17], a.data()[18], a.data()[19],
                              a.data()[20], a.data()[21], a.data()[22], a.data()[23]});
    const TensorD c2 = matmul(a2, b);
    for (int i = 0; i < 10; ++i) CHECK(c.data()[20 + i] == doctest::Approx(c2.data()[i]));
}

TEST_CASE("matmul inner-dimension mismatch names both shapes") {
    const TensorD a({2, 3});
    const TensorD b({4, 2});
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[4,2]") != std::string::npos);
    }
}

TEST_CASE("softmax oracle and properties") {
    // softmax([0, ln 2, ln 4]) = [1/7, 2/7, 4/7]
    const TensorD x({1, 3}, {0.0, std::log(2.0), std::log(4.0)});
    const TensorD y = softmax(x, 1);
    CHECK(y.data()[0] == doctest::Approx(1.0 / 7).epsilon(1e-12));
    CHECK(y.data()[1] == doctest::Approx(2.0 / 7).epsilon(1e-12));
    CHECK(y.data()[2] == doctest::Approx(4.0 / 7).epsilon(1e-12));

    // Shift invariance and row-stochastic output, any axis.
    Rng rng(2);
    const TensorD big = randn<double>({2, 3, 4}, rng, 30.0); // large logits stay stable
    for (int axis : {0, 1, 2}) {
        const TensorD s = softmax(big, axis);
        double total = 0;
        for (int64_t i = 0; i < s.numel(); ++i) {
            CHECK(s.data()[i] >= 0.0);
            total += s.data()[i];
        }
        CHECK(total == doctest::Approx(double(big.numel() / big.dim(axis))).epsilon(1e-12));
    }
}

TEST_CASE("layer_norm oracle") {
    const TensorD x({1, 4}, {1, 2, 3, 4});
    const TensorD gain = TensorD::full({4}, 2.0);
    const TensorD bias = TensorD::full({4}, 0.5);
    const TensorD y = layer_norm(x, gain, bias);
    // mean 2.5, population variance 1.25 (straight-line recompute)
    const double istd = 1.0 / std::sqrt(1.25 + 1e-5);
    for (int i = 0; i < 4; ++i)
        CHECK(y.data()[i] == doctest::Approx(2.0 * (x.data()[i] - 2.5) * istd + 0.5).epsilon(1e-12));
}

TEST_CASE("gelu oracle") {
    // Straight-line recompute of the tanh approximation.
    const double alpha = 0.7978845608028654, c = 0.044715;
    const TensorD x({3}, {-1.5, 0.0, 2.0});
    const TensorD y = gelu(x);
    for (int i = 0; i < 3; ++i) {
        const double v = x.data()[i];
        const double want = 0.5 * v * (1.0 + std::tanh(alpha * (v + c * v * v * v)));
        CHECK(y.data()[i] == doctest::Approx(want).epsilon(1e-12));
    }
    CHECK(y.data()[1] == 0.0);
}

TEST_CASE("dropout semantics") {
    Rng rng(3);
    const TensorD x = TensorD::full({1000}, 1.0);
    SUBCASE("eval mode and rate zero are identity") {
        const TensorD a = dropout(x, 0.5, false, rng);
        const TensorD b = dropout(x, 0.0, true, rng);
        for (int64_t i = 0; i < x.numel(); ++i) {
            CHECK(a.data()[i] == 1.0);
            CHECK(b.data()[i] == 1.0);
        }
    }
    SUBCASE("training mode drops and rescales the survivors") {
        const double rate = 0.3;
        const TensorD y = dropout(x, rate, true, rng);
        int64_t kept = 0;
        for (int64_t i = 0; i < y.numel(); ++i) {
            const bool zero = y.data()[i] == 0.0;
            const bool scaled = std::abs(y.data()[i] - 1.0 / (1.0 - rate)) < 1e-12;
            CHECK((zero || scaled));
            kept += scaled;
        }
        CHECK(kept > 600); // ~700 expected
        CHECK(kept < 800);
    }
    SUBCASE("invalid rate") {
        CHECK_THROWS_AS(dropout(x, 1.0, true, rng), ArgumentError);
        CHECK_THROWS_AS(dropout(x, -0.1, true, rng), ArgumentError);
    }
}

TEST_CASE("broadcasting rules") {
    const TensorD a({2, 3}, {1, 2, 3, 4, 5, 6});
    SUBCASE("right-aligned vector add") {
        const TensorD b({3}, {10, 20, 30});
        const TensorD c = add(a, b);
        const double want[] = {11, 22, 33, 14, 25, 36};
        for (int i = 0; i < 6; ++i) CHECK(c.data()[i] == want[i]);
    }
    SUBCASE("size-1 axis stretches") {
        const TensorD b({2, 1}, {100, 200});
        const TensorD c = add(a, b);
        const double want[] = {101, 102, 103, 204, 205, 206};
        for (int i = 0; i < 6; ++i) CHECK(c.data()[i] == want[i]);
    }
    SUBCASE("scalar multiplies everything") {
        const TensorD c = mul(a, TensorD::scalar(2.0));
        for (int i = 0; i < 6; ++i) CHECK(c.data()[i] == a.data()[i] * 2.0);
    }
    SUBCASE("incompatible shapes raise") {
        CHECK_THROWS_AS(add(a, TensorD({2, 4})), ShapeError);
        CHECK_THROWS_AS(mul(a, TensorD({3, 3})), ShapeError);
    }
}

TEST_CASE("shape ops") {
    Rng rng(4);
    const TensorD x = randn<double>({2, 3, 4}, rng);
    SUBCASE("reshape preserves row-major order") {
        const TensorD r = reshape(x, {6, 4});
        for (int64_t i = 0; i < x.numel(); ++i) CHECK(r.data()[i] == x.data()[i]);
        CHECK_THROWS_AS(reshape(x, {5, 5}), ShapeError);
    }
    SUBCASE("transpose permutes strides") {
        const TensorD t = transpose(x, {2, 0, 1});
        REQUIRE(t.shape() == std::vector<int64_t>{4, 2, 3});
        for (int64_t i = 0; i < 2; ++i)
            for (int64_t j = 0; j < 3; ++j)
                for (int64_t k = 0; k < 4; ++k)
                    CHECK(t.data()[(k * 2 + i) * 3 + j] == x.data()[(i * 3 + j) * 4 + k]);
        CHECK_THROWS_AS(transpose(x, {0, 0, 1}), ArgumentError);
        CHECK_THROWS_AS(transpose(x, {0, 1}), ArgumentError);
    }
    SUBCASE("broadcast_to materializes") {
        const TensorD b = broadcast_to(reshape(x, {1, 2, 3, 4}), {5, 2, 3, 4});
        REQUIRE(b.shape() == std::vector<int64_t>{5, 2, 3, 4});
        for (int64_t r = 0; r < 5; ++r)
            for (int64_t i = 0; i < x.numel(); ++i) CHECK(b.data()[r * x.numel() + i] == x.data()[i]);
    }
    SUBCASE("mean_axis averages the named axis") {
        const TensorD m = mean_axis(x, 1);
        REQUIRE(m.shape() == std::vector<int64_t>{2, 4});
        for (int64_t i = 0; i < 2; ++i)
            for (int64_t k = 0; k < 4; ++k) {
                double want = 0;
                for (int64_t j = 0; j < 3; ++j) want += x.data()[(i * 3 + j) * 4 + k];
                CHECK(m.data()[i * 4 + k] == doctest::Approx(want / 3).epsilon(1e-12));
            }
    }
    SUBCASE("sum_all totals every element") {
        double want = 0;
        for (int64_t i = 0; i < x.numel(); ++i) want += x.data()[i];
        CHECK(sum_all(x).item() == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("softmax_cross_entropy oracle") {
    // Uniform logits: loss = ln K regardless of the labels.
    const TensorD logits({2, 4});
    const std::vector<int64_t> labels = {1, 3};
    CHECK(softmax_cross_entropy(logits, labels).item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));
    // Shifted logits give the same loss (stability + shift invariance).
    const TensorD shifted = add(logits, TensorD::scalar(1000.0));
    CHECK(softmax_cross_entropy(shifted, labels).item() ==
          doctest::Approx(std::log(4.0)).epsilon(1e-9));
    const std::vector<int64_t> bad = {0, 4};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, bad), ArgumentError);
}

// ---- gradient checks ----------------------------------------------------

TEST_CASE("gradients: matmul plain and batched") {
    Rng rng(10);
    TensorD a = randn<double>({2, 3}, rng);
    TensorD b = randn<double>({3, 4}, rng);
    const TensorD w = randn<double>({2, 4}, rng);
    check_grads({{"a", &a}, {"b", &b}}, [&]() { return pool(matmul(a, b), w); });

    TensorD ab = randn<double>({2, 3, 4}, rng);
    TensorD bb = randn<double>({4, 2}, rng); // broadcast over the batch
    const TensorD wb = randn<double>({2, 3, 2}, rng);
    check_grads({{"a", &ab}, {"b", &bb}}, [&]() { return pool(matmul(ab, bb), wb); });
}

TEST_CASE("gradients: elementwise and broadcast") {
    Rng rng(11);
    TensorD a = randn<double>({2, 3, 4}, rng);
    TensorD bias = randn<double>({4}, rng);
    TensorD rows = randn<double>({3, 1}, rng);
    const TensorD w = randn<double>({2, 3, 4}, rng);
    check_grads({{"a", &a}, {"bias", &bias}}, [&]() { return pool(add(a, bias), w); });
    check_grads({{"a", &a}, {"rows", &rows}}, [&]() { return pool(mul(a, rows), w); });
    check_grads({{"a", &a}}, [&]() { return pool(scale(a, 2.5), w); });
}

TEST_CASE("gradients: softmax all axes") {
    Rng rng(12);
    TensorD x = randn<double>({2, 3, 4}, rng);
    const TensorD w = randn<double>({2, 3, 4}, rng);
    for (int axis : {0, 1, 2})
        check_grads({{"x", &x}}, [&, axis]() { return pool(softmax(x, axis), w); });
}

TEST_CASE("gradients: layer_norm, gelu") {
    Rng rng(13);
    TensorD x = randn<double>({3, 5}, rng);
    TensorD gain = randn<double>({5}, rng, 0.5);
    TensorD bias = randn<double>({5}, rng, 0.5);
    const TensorD w = randn<double>({3, 5}, rng);
    check_grads({{"x", &x}, {"gain", &gain}, {"bias", &bias}},
                [&]() { return pool(layer_norm(x, gain, bias), w); }, 1e-5);
    check_grads({{"x", &x}}, [&]() { return pool(gelu(x), w); });
}

TEST_CASE("gradients: dropout with replayed mask") {
    Rng rng(14);
    TensorD x = randn<double>({4, 4}, rng);
    const TensorD w = randn<double>({4, 4}, rng);
    Rng base(99);
    check_grads({{"x", &x}}, [&]() {
        Rng drop = base; // same mask on every re-evaluation
        return pool(dropout(x, 0.4, true, drop), w);
    });
}

TEST_CASE("gradients: shape ops and reductions") {
    Rng rng(15);
    TensorD x = randn<double>({2, 3, 4}, rng);
    const TensorD w1 = randn<double>({4, 6}, rng);
    check_grads({{"x", &x}}, [&]() { return pool(reshape(transpose(x, {2, 0, 1}), {4, 6}), w1); });
    const TensorD w2 = randn<double>({2, 4}, rng);
    check_grads({{"x", &x}}, [&]() { return pool(mean_axis(x, 1), w2); });
    check_grads({{"x", &x}}, [&]() { return sum_all(mul(x, x)); });
    TensorD small = randn<double>({1, 3}, rng);
    const TensorD w3 = randn<double>({5, 3}, rng);
    check_grads({{"small", &small}},
                [&]() { return pool(broadcast_to(small, {5, 3}), w3); });
}

TEST_CASE("gradients: softmax_cross_entropy") {
    Rng rng(16);
    TensorD logits = randn<double>({4, 3}, rng);
    const std::vector<int64_t> labels = {2, 0, 1, 1};
    check_grads({{"logits", &logits}},
                [&]() { return softmax_cross_entropy(logits, labels); });
}

TEST_CASE("gradient accumulates when a tensor is used twice") {
    // loss = sum(x*x) + sum(x) -> dx = 2x + 1
    Rng rng(17);
    TensorD x = randn<double>({5}, rng);
    Tape<double> tape;
    tape.watch(x);
    TensorD loss = add(sum_all(mul(x, x)), sum_all(x));
    tape.backward(loss);
    const TensorD g = tape.grad(x);
    for (int i = 0; i < 5; ++i)
        CHECK(g.data()[i] == doctest::Approx(2.0 * x.data()[i] + 1.0).epsilon(1e-12));
}

// ---- tape lifecycle -----------------------------------------------------

TEST_CASE("tape lifecycle rules") {
    TensorD x({2}, {1.0, 2.0});
    TensorD y({2}, {3.0, 4.0});
    Tape<double> tape;
    tape.watch(x);
    TensorD loss = sum_all(mul(x, x));

    SUBCASE("grad before backward") { CHECK_THROWS_AS(tape.grad(x), StateError); }
    SUBCASE("backward requires a scalar from this tape") {
        CHECK_THROWS_AS(tape.backward(mul(x, x)), ArgumentError);
        CHECK_THROWS_AS(tape.backward(y), ArgumentError);
    }
    SUBCASE("consumed tape rejects reuse") {
        tape.backward(loss);
        CHECK_THROWS_AS(tape.backward(loss), StateError);
        CHECK_FALSE(mul(x, x).tracked()); // ops after consumption record nothing
    }
    SUBCASE("non-participating watched tensor gets zeros") {
        tape.watch(y);
        tape.backward(loss);
        const TensorD gy = tape.grad(y);
        CHECK(gy.data()[0] == 0.0);
        CHECK(gy.data()[1] == 0.0);
    }
    SUBCASE("untracked inputs build no graph") {
        TensorD z({2}, {1.0, 1.0});
        const TensorD out = mul(z, z);
        CHECK_FALSE(out.tracked());
    }
    SUBCASE("mixing tapes is rejected") {
        Tape<double> other;
        other.watch(y);
        CHECK_THROWS_AS(mul(x, y), ArgumentError);
    }
}

TEST_CASE("strict-finite mode flags the producing op") {
    StrictFiniteScope scope(true);
    const TensorD x({2}, {1e308, 1e308});
    try {
        add(x, x); // overflows to inf
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("add") != std::string::npos);
    }
    // Disabled mode lets the inf through.
    StrictFiniteScope off(false);
    const TensorD y = add(x, x);
    CHECK(std::isinf(y.data()[0]));
}
