#include "lbt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <sstream>

#include "lbt/flops.hpp"
#include "lbt/kernels.hpp"
#include "lbt/kernels_ref.hpp"

namespace lbt {

std::string shape_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

namespace {

thread_local bool g_strict_finite = false;

// Routes the float inner loops through the runtime-dispatched kernels; the
// double path always uses the scalar reference kernels.
template <typename T>
struct Kern {
    static void gemm_nn(size_t p, size_t q, size_t r, const T* a, const T* b, T* c) {
        kernels::ref::gemm_nn(p, q, r, a, b, c);
    }
    static void gemm_nt(size_t p, size_t q, size_t r, const T* a, const T* b, T* c) {
        kernels::ref::gemm_nt(p, q, r, a, b, c);
    }
    static void gemm_tn(size_t p, size_t q, size_t r, const T* a, const T* b, T* c) {
        kernels::ref::gemm_tn(p, q, r, a, b, c);
    }
    static void add(size_t n, const T* a, const T* b, T* out) { kernels::ref::add(n, a, b, out); }
    static void mul(size_t n, const T* a, const T* b, T* out) { kernels::ref::mul(n, a, b, out); }
    static void axpy(size_t n, T alpha, const T* x, T* y) { kernels::ref::axpy(n, alpha, x, y); }
    static void scale(size_t n, T alpha, T* x) { kernels::ref::scale(n, alpha, x); }
};

template <>
struct Kern<float> {
    static void gemm_nn(size_t p, size_t q, size_t r, const float* a, const float* b, float* c) {
        kernels::active().gemm_nn(p, q, r, a, b, c);
    }
    static void gemm_nt(size_t p, size_t q, size_t r, const float* a, const float* b, float* c) {
        kernels::active().gemm_nt(p, q, r, a, b, c);
    }
    static void gemm_tn(size_t p, size_t q, size_t r, const float* a, const float* b, float* c) {
        kernels::active().gemm_tn(p, q, r, a, b, c);
    }
    static void add(size_t n, const float* a, const float* b, float* out) {
        kernels::active().add(n, a, b, out);
    }
    static void mul(size_t n, const float* a, const float* b, float* out) {
        kernels::active().mul(n, a, b, out);
    }
    static void axpy(size_t n, float alpha, const float* x, float* y) {
        kernels::active().axpy(n, alpha, x, y);
    }
    static void scale(size_t n, float alpha, float* x) { kernels::active().scale(n, alpha, x); }
};

template <typename T>
void check_finite(const std::vector<T>& data, const char* op) {
    if (!g_strict_finite) return;
    for (const T v : data)
        if (!std::isfinite(v))
            throw NumericError(std::string(op) + ": non-finite value produced");
}

template <typename T>
Tape<T>* result_tape(std::initializer_list<const TensorT<T>*> inputs) {
    Tape<T>* tape = nullptr;
    for (const TensorT<T>* t : inputs) {
        if (!t->tracked()) continue;
        if (tape && tape != t->tape())
            throw ArgumentError("op inputs are tracked on different tapes");
        tape = t->tape();
    }
    if (tape && tape->consumed()) tape = nullptr;
    return tape;
}

std::vector<int64_t> row_major_strides(const std::vector<int64_t>& shape) {
    std::vector<int64_t> s(shape.size());
    int64_t acc = 1;
    for (size_t i = shape.size(); i-- > 0;) {
        s[i] = acc;
        acc *= shape[i];
    }
    return s;
}

// Right-aligned broadcast of two shapes; throws naming both on conflict.
std::vector<int64_t> broadcast_shapes(const std::vector<int64_t>& a,
                                      const std::vector<int64_t>& b, const char* op) {
    const size_t r = std::max(a.size(), b.size());
    std::vector<int64_t> out(r, 1);
    for (size_t i = 0; i < r; ++i) {
        const int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " are not broadcastable");
        out[i] = std::max(da, db);
    }
    return out;
}

// Per-dimension element strides of `in` aligned to `out` rank, 0 where
// broadcast. `in` must already be broadcast-compatible with `out`.
std::vector<int64_t> bcast_strides(const std::vector<int64_t>& out,
                                   const std::vector<int64_t>& in) {
    const std::vector<int64_t> is = row_major_strides(in);
    std::vector<int64_t> s(out.size(), 0);
    const size_t off = out.size() - in.size();
    for (size_t i = 0; i < in.size(); ++i) s[off + i] = in[i] == 1 ? 0 : is[i];
    return s;
}

// Walks the out shape in row-major order calling f(linear, off_a, off_b) with
// operand offsets advanced incrementally.
template <typename F>
void bcast_walk(const std::vector<int64_t>& out_shape, const std::vector<int64_t>& sa,
                const std::vector<int64_t>& sb, F&& f) {
    const int r = static_cast<int>(out_shape.size());
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t ao = 0, bo = 0;
    const int64_t total = shape_numel(out_shape);
    for (int64_t lin = 0; lin < total; ++lin) {
        f(lin, ao, bo);
        for (int d = r - 1; d >= 0; --d) {
            ++idx[static_cast<size_t>(d)];
            ao += sa[static_cast<size_t>(d)];
            bo += sb[static_cast<size_t>(d)];
            if (idx[static_cast<size_t>(d)] < out_shape[static_cast<size_t>(d)]) break;
            idx[static_cast<size_t>(d)] = 0;
            ao -= sa[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
            bo -= sb[static_cast<size_t>(d)] * out_shape[static_cast<size_t>(d)];
        }
    }
}

int normalize_axis(int axis, int rank, const std::vector<int64_t>& shape, const char* op) {
    const int a = axis < 0 ? axis + rank : axis;
    if (a < 0 || a >= rank)
        throw IndexError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(shape));
    return a;
}

} // namespace

bool strict_finite() { return g_strict_finite; }
void set_strict_finite(bool on) { g_strict_finite = on; }

// ---- matmul -------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() < 2 || b.rank() < 2)
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    const int64_t P = a.dim(a.rank() - 2);
    const int64_t Q = a.dim(a.rank() - 1);
    const int64_t Qb = b.dim(b.rank() - 2);
    const int64_t R = b.dim(b.rank() - 1);
    if (Q != Qb)
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));

    const std::vector<int64_t> abatch(a.shape().begin(), a.shape().end() - 2);
    const std::vector<int64_t> bbatch(b.shape().begin(), b.shape().end() - 2);
    std::vector<int64_t> obatch = broadcast_shapes(abatch, bbatch, "matmul");
    const std::vector<int64_t> sa = bcast_strides(obatch, abatch); // strides in matrices
    const std::vector<int64_t> sb = bcast_strides(obatch, bbatch);

    std::vector<int64_t> oshape = obatch;
    oshape.push_back(P);
    oshape.push_back(R);
    TensorT<T> out(oshape);

    const int64_t am = P * Q, bm = Q * R, om = P * R;
    const T* ad = a.data();
    const T* bd = b.data();
    T* od = out.data();
    bcast_walk(obatch, sa, sb, [&](int64_t lin, int64_t ao, int64_t bo) {
        Kern<T>::gemm_nn(static_cast<size_t>(P), static_cast<size_t>(Q), static_cast<size_t>(R),
                         ad + ao * am, bd + bo * bm, od + lin * om);
    });
    flops::add(static_cast<uint64_t>(2 * P * Q * R * shape_numel(obatch)));
    check_finite(out.vec(), "matmul");

    Tape<T>* tape = result_tape<T>({&a, &b});
    if (tape) {
        const int an = a.node(), bn = b.node();
        TensorT<T> ac = a, bc = b;
        const int node = tape->record(
            oshape, [ac, bc, an, bn, obatch, sa, sb, P, Q, R, am, bm, om](Tape<T>& tp, int self) {
                const std::vector<T>& g = tp.grad_acc(self);
                if (an >= 0) {
                    std::vector<T>& ga = tp.grad_acc(an);
                    const T* bd2 = bc.data();
                    bcast_walk(obatch, sa, sb, [&](int64_t lin, int64_t ao, int64_t bo) {
                        Kern<T>::gemm_nt(static_cast<size_t>(P), static_cast<size_t>(R),
                                         static_cast<size_t>(Q), g.data() + lin * om,
                                         bd2 + bo * bm, ga.data() + ao * am);
                    });
                }
                if (bn >= 0) {
                    std::vector<T>& gb = tp.grad_acc(bn);
                    const T* ad2 = ac.data();
                    bcast_walk(obatch, sa, sb, [&](int64_t lin, int64_t ao, int64_t bo) {
                        Kern<T>::gemm_tn(static_cast<size_t>(P), static_cast<size_t>(Q),
                                         static_cast<size_t>(R), ad2 + ao * am,
                                         g.data() + lin * om, gb.data() + bo * bm);
                    });
                }
            });
        out.attach(tape, node);
    }
    return out;
}

// ---- elementwise with broadcast ----------------------------------------

namespace {

// Shared machinery for add/mul: forward f(a,b), backward pushes into either
// operand with broadcast reduction via += at the mapped offset.
template <typename T, bool Multiply>
TensorT<T> binary_op(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    const std::vector<int64_t> oshape = broadcast_shapes(a.shape(), b.shape(), op);
    const std::vector<int64_t> sa = bcast_strides(oshape, a.shape());
    const std::vector<int64_t> sb = bcast_strides(oshape, b.shape());
    TensorT<T> out(oshape);
    const T* ad = a.data();
    const T* bd = b.data();
    T* od = out.data();

    const bool same = a.shape() == b.shape();
    if (same) {
        if constexpr (Multiply)
            Kern<T>::mul(static_cast<size_t>(out.numel()), ad, bd, od);
        else
            Kern<T>::add(static_cast<size_t>(out.numel()), ad, bd, od);
    } else if (!Multiply && oshape == a.shape() &&
               std::equal(b.shape().begin(), b.shape().end(),
                          a.shape().end() - b.rank())) {
        // common bias-add pattern: [..., X] + [X]
        const size_t n = static_cast<size_t>(b.numel());
        const size_t rows = static_cast<size_t>(out.numel()) / n;
        for (size_t r = 0; r < rows; ++r) Kern<T>::add(n, ad + r * n, bd, od + r * n);
    } else {
        bcast_walk(oshape, sa, sb, [&](int64_t lin, int64_t ao, int64_t bo) {
            if constexpr (Multiply)
                od[lin] = ad[ao] * bd[bo];
            else
                od[lin] = ad[ao] + bd[bo];
        });
    }
    check_finite(out.vec(), op);

    Tape<T>* tape = result_tape<T>({&a, &b});
    if (tape) {
        const int an = a.node(), bn = b.node();
        TensorT<T> ac = a, bc = b;
        const int node =
            tape->record(oshape, [ac, bc, an, bn, oshape, sa, sb](Tape<T>& tp, int self) {
                const std::vector<T>& g = tp.grad_acc(self);
                std::vector<T>* ga = an >= 0 ? &tp.grad_acc(an) : nullptr;
                std::vector<T>* gb = bn >= 0 ? &tp.grad_acc(bn) : nullptr;
                const T* ad2 = ac.data();
                const T* bd2 = bc.data();
                bcast_walk(oshape, sa, sb, [&](int64_t lin, int64_t ao, int64_t bo) {
                    if constexpr (Multiply) {
                        if (ga) (*ga)[static_cast<size_t>(ao)] += g[static_cast<size_t>(lin)] * bd2[bo];
                        if (gb) (*gb)[static_cast<size_t>(bo)] += g[static_cast<size_t>(lin)] * ad2[ao];
                    } else {
                        if (ga) (*ga)[static_cast<size_t>(ao)] += g[static_cast<size_t>(lin)];
                        if (gb) (*gb)[static_cast<size_t>(bo)] += g[static_cast<size_t>(lin)];
                    }
                });
            });
        out.attach(tape, node);
    }
    return out;
}

} // namespace

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op<T, false>(a, b, "add");
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    return binary_op<T, true>(a, b, "mul");
}

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T constant) {
    TensorT<T> out(x.shape(), x.vec());
    Kern<T>::scale(static_cast<size_t>(out.numel()), constant, out.data());
    check_finite(out.vec(), "scale");
    Tape<T>* tape = result_tape<T>({&x});
    if (tape) {
        const int xn = x.node();
        const int node = tape->record(x.shape(), [xn, constant](Tape<T>& tp, int self) {
            const std::vector<T>& g = tp.grad_acc(self);
            std::vector<T>& gx = tp.grad_acc(xn);
            Kern<T>::axpy(g.size(), constant, g.data(), gx.data());
        });
        out.attach(tape, node);
    }
    return out;
}

// ---- softmax ------------------------------------------------------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis) {
    const int ax = normalize_axis(axis, x.rank(), x.shape(), "softmax");
    const int64_t n = x.dim(ax);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= x.dim(i);
    for (int i = ax + 1; i < x.rank(); ++i) inner *= x.dim(i);

    TensorT<T> out(x.shape());
    const T* xd = x.data();
    T* od = out.data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
            const int64_t base = o * n * inner + i;
            T m = xd[base];
            for (int64_t j = 1; j < n; ++j) m = std::max(m, xd[base + j * inner]);
            T s = 0;
            for (int64_t j = 0; j < n; ++j) {
                const T e = std::exp(xd[base + j * inner] - m);
                od[base + j * inner] = e;
                s += e;
            }
            const T inv = T(1) / s;
            for (int64_t j = 0; j < n; ++j) od[base + j * inner] *= inv;
        }
    }
    check_finite(out.vec(), "softmax");

    Tape<T>* tape = result_tape<T>({&x});
    if (tape) {
        const int xn = x.node();
        TensorT<T> y = out;
        const int node =
            tape->record(x.shape(), [y, xn, outer, inner, n](Tape<T>& tp, int self) {
                const std::vector<T>& g = tp.grad_acc(self);
                std::vector<T>& gx = tp.grad_acc(xn);
                const T* yd = y.data();
                for (int64_t o = 0; o < outer; ++o) {
                    for (int64_t i = 0; i < inner; ++i) {
                        const int64_t base = o * n * inner + i;
                        T dot = 0;
                        for (int64_t j = 0; j < n; ++j)
                            dot += g[static_cast<size_t>(base + j * inner)] * yd[base + j * inner];
                        for (int64_t j = 0; j < n; ++j) {
                            const int64_t k = base + j * inner;
                            gx[static_cast<size_t>(k)] +=
                                yd[k] * (g[static_cast<size_t>(k)] - dot);
                        }
                    }
                }
            });
        out.attach(tape, node);
    }
    return out;
}

// ---- layer norm ---------------------------------------------------------

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias,
                      T eps) {
    if (x.rank() < 1)
        throw ShapeError("layer_norm: input must have rank >= 1");
    const int64_t C = x.dim(x.rank() - 1);
    if (gain.rank() != 1 || gain.dim(0) != C || bias.rank() != 1 || bias.dim(0) != C)
        throw ShapeError("layer_norm: scale/offset " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match feature width of " +
                         shape_str(x.shape()));
    const int64_t rows = x.numel() / C;

    TensorT<T> out(x.shape());
    std::vector<T> xhat(static_cast<size_t>(x.numel()));
    std::vector<T> istd(static_cast<size_t>(rows));
    const T* xd = x.data();
    const T* gd = gain.data();
    const T* bd = bias.data();
    T* od = out.data();
    for (int64_t r = 0; r < rows; ++r) {
        const T* row = xd + r * C;
        T mu = 0;
        for (int64_t c = 0; c < C; ++c) mu += row[c];
        mu /= static_cast<T>(C);
        T var = 0;
        for (int64_t c = 0; c < C; ++c) {
            const T d = row[c] - mu;
            var += d * d;
        }
        var /= static_cast<T>(C);
        const T is = T(1) / std::sqrt(var + eps);
        istd[static_cast<size_t>(r)] = is;
        for (int64_t c = 0; c < C; ++c) {
            const T h = (row[c] - mu) * is;
            xhat[static_cast<size_t>(r * C + c)] = h;
            od[r * C + c] = h * gd[c] + bd[c];
        }
    }
    check_finite(out.vec(), "layer_norm");

    Tape<T>* tape = result_tape<T>({&x, &gain, &bias});
    if (tape) {
        const int xn = x.node(), gn = gain.node(), bn = bias.node();
        TensorT<T> gc = gain;
        const int node = tape->record(
            x.shape(),
            [gc, xn, gn, bn, rows, C, xhat = std::move(xhat),
             istd = std::move(istd)](Tape<T>& tp, int self) {
                const std::vector<T>& g = tp.grad_acc(self);
                std::vector<T>* gx = xn >= 0 ? &tp.grad_acc(xn) : nullptr;
                std::vector<T>* gg = gn >= 0 ? &tp.grad_acc(gn) : nullptr;
                std::vector<T>* gb = bn >= 0 ? &tp.grad_acc(bn) : nullptr;
                const T* gaind = gc.data();
                for (int64_t r = 0; r < rows; ++r) {
                    const size_t base = static_cast<size_t>(r * C);
                    if (gg || gb) {
                        for (int64_t c = 0; c < C; ++c) {
                            const size_t k = base + static_cast<size_t>(c);
                            if (gg) (*gg)[static_cast<size_t>(c)] += g[k] * xhat[k];
                            if (gb) (*gb)[static_cast<size_t>(c)] += g[k];
                        }
                    }
                    if (gx) {
                        // dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                        T mean_dh = 0, mean_dhh = 0;
                        for (int64_t c = 0; c < C; ++c) {
                            const size_t k = base + static_cast<size_t>(c);
                            const T dh = g[k] * gaind[c];
                            mean_dh += dh;
                            mean_dhh += dh * xhat[k];
                        }
                        mean_dh /= static_cast<T>(C);
                        mean_dhh /= static_cast<T>(C);
                        const T is = istd[static_cast<size_t>(r)];
                        for (int64_t c = 0; c < C; ++c) {
                            const size_t k = base + static_cast<size_t>(c);
                            const T dh = g[k] * gaind[c];
                            (*gx)[k] += is * (dh - mean_dh - xhat[k] * mean_dhh);
                        }
                    }
                }
            });
        out.attach(tape, node);
    }
    return out;
}

// ---- gelu ---------------------------------------------------------------

// Tanh form: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
static constexpr double kGeluAlpha = 0.7978845608028654; // sqrt(2/pi)
static constexpr double kGeluCubic = 0.044715;

template <typename T>
TensorT<T> gelu(const TensorT<T>& x) {
    TensorT<T> out(x.shape());
    const T* xd = x.data();
    T* od = out.data();
    const T alpha = static_cast<T>(kGeluAlpha);
    const T cubic = static_cast<T>(kGeluCubic);
    for (int64_t i = 0; i < x.numel(); ++i) {
        const T v = xd[i];
        const T t = std::tanh(alpha * (v + cubic * v * v * v));
        od[i] = T(0.5) * v * (T(1) + t);
    }
    check_finite(out.vec(), "gelu");

    Tape<T>* tape = result_tape<T>({&x});
    if (tape) {
        const int xn = x.node();
        TensorT<T> xc = x;
        const int node = tape->record(x.shape(), [xc, xn, alpha, cubic](Tape<T>& tp, int self) {
            const std::vector<T>& g = tp.grad_acc(self);
            std::vector<T>& gx = tp.grad_acc(xn);
            const T* xd2 = xc.data();
            for (size_t i = 0; i < g.size(); ++i) {
                const T v = xd2[i];
                const T u = alpha * (v + cubic * v * v * v);
                const T t = std::tanh(u);
                const T du = alpha * (T(1) + T(3) * cubic * v * v);
                const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
                gx[i] += g[i] * d;
            }
        });
        out.attach(tape, node);
    }
    return out;
}

// ---- dropout ------------------------------------------------------------

template <typename T>
TensorT<T> dropout(const TensorT<T>& x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw ArgumentError("dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) return x;

    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> mask(static_cast<size_t>(x.numel()));
    for (T& m : mask) m = rng.uniform() < rate ? T(0) : keep_scale;

    TensorT<T> out(x.shape());
    Kern<T>::mul(mask.size(), x.data(), mask.data(), out.data());
    check_finite(out.vec(), "dropout");

    Tape<T>* tape = result_tape<T>({&x});
    if (tape) {
        const int xn = x.node();
        const int node =
            tape->record(x.shape(), [xn, mask = std::move(mask)](Tape<T>& tp, int self) {
                const std::vector<T>& g = tp.grad_acc(self);
                std::vector<T>& gx = tp.grad_acc(xn);
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
            });
        out.attach(tape, node);
    }
    return out;
}

// ---- movement -----------------------------------------------------------

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, std::vector<int64_t> shape) {
    TensorT<T> out = x.with_shape(std::move(shape));
    Tape<T>* tape = result_tape<T>({&x});
    if (tape) {
        const int xn = x.node();
        const int node = tape->record(out.shape(), [xn](Tape<T>& tp, int self) {
            const std::vector<T>& g = tp.grad_acc(self);
            std::vector<T>& gx = tp.grad_acc(xn);
            Kern<T>::axpy(g.size(), T(1), g.data(), gx.data());
        });
        out.attach(tape, node);
    }
    return out;
}

template <typename T>
TensorT<T> transpose(const TensorT<T>& x, std::vector<int> perm) {
    const int r = x.rank();
    if (static_cast<int>(perm.size()) != r)
        throw ArgumentError("transpose: permutation size " + std::to_string(perm.size()) +
                            " does not match rank of " + shape_str(x.shape()));
    std::vector<bool> seen(static_cast<size_t>(r), false);
    for (int p : perm) {
        if (p < 0 || p >= r || seen[static_cast<size_t>(p)])
            throw ArgumentError("transpose: invalid permutation for shape " +
                                shape_str(x.shape()));
        seen[static_cast<size_t>(p)] = true;
    }

    std::vector<int64_t> oshape(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) oshape[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
    const std::vector<int64_t> xs = row_major_strides(x.shape());
    std::vector<int64_t> src_stride(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i)
        src_stride[static_cast<size_t>(i)] = xs[static_cast<size_t>(perm[static_cast<size_t>(i)])];

    TensorT<T> out(oshape);
    const T* xd = x.data();
    T* od = out.data();
    const std::vector<int64_t> zero(static_cast<size_t>(r), 0);
    bcast_walk(oshape, src_stride, zero,
               [&](int64_t lin, int64_t so, int64_t) { od[lin] = xd[so]; });

    Tape<T>* tape = result_tape<T>({&x});
    if (tape) {
        const int xn = x.node();
        const int node =
            tape->record(oshape, [xn, oshape, src_stride, zero](Tape<T>& tp, int self) {
                const std::vector<T>& g = tp.grad_acc(self);
                std::vector<T>& gx = tp.grad_acc(xn);
                bcast_walk(oshape, src_stride, zero, [&](int64_t lin, int64_t so, int64_t) {
                    gx[static_cast<size_t>(so)] += g[static_cast<size_t>(lin)];
                });
            });
        out.attach(tape, node);
    }
    return out;
}

template <typename T>
TensorT<T> broadcast_to(const TensorT<T>& x, std::vector<int64_t> shape) {
    if (x.rank() > static_cast<int>(shape.size()))
        throw ShapeError("broadcast_to: cannot broadcast " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
    const std::vector<int64_t> check = broadcast_shapes(x.shape(), shape, "broadcast_to");
    if (check != shape)
        throw ShapeError("broadcast_to: cannot broadcast " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
    const std::vector<int64_t> sx = bcast_strides(shape, x.shape());
    const std::vector<int64_t> zero(shape.size(), 0);

    TensorT<T> out(shape);
    const T* xd = x.data();
    T* od = out.data();
    bcast_walk(shape, sx, zero, [&](int64_t lin, int64_t so, int64_t) { od[lin] = xd[so]; });

    Tape<T>* tape = result_tape<T>({&x});
    if (tape) {
        const int xn = x.node();
        const int node = tape->record(shape, [xn, shape, sx, zero](Tape<T>& tp, int self) {
            const std::vector<T>& g = tp.grad_acc(self);
            std::vector<T>& gx = tp.grad_acc(xn);
            bcast_walk(shape, sx, zero, [&](int64_t lin, int64_t so, int64_t) {
                gx[static_cast<size_t>(so)] += g[static_cast<size_t>(lin)];
            });
        });
        out.attach(tape, node);
    }
    return out;
}

template <typename T>
TensorT<T> mean_axis(const TensorT<T>& x, int axis) {
    const int ax = normalize_axis(axis, x.rank(), x.shape(), "mean_axis");
    const int64_t n = x.dim(ax);
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < ax; ++i) outer *= x.dim(i);
    for (int i = ax + 1; i < x.rank(); ++i) inner *= x.dim(i);

    std::vector<int64_t> oshape;
    for (int i = 0; i < x.rank(); ++i)
        if (i != ax) oshape.push_back(x.dim(i));

    TensorT<T> out(oshape);
    const T* xd = x.data();
    T* od = out.data();
    const T inv = T(1) / static_cast<T>(n);
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t j = 0; j < n; ++j)
            Kern<T>::axpy(static_cast<size_t>(inner), inv, xd + (o * n + j) * inner,
                          od + o * inner);
    }
    check_finite(out.vec(), "mean_axis");

    Tape<T>* tape = result_tape<T>({&x});
    if (tape) {
        const int xn = x.node();
        const int node =
            tape->record(oshape, [xn, outer, inner, n, inv](Tape<T>& tp, int self) {
                const std::vector<T>& g = tp.grad_acc(self);
                std::vector<T>& gx = tp.grad_acc(xn);
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t j = 0; j < n; ++j)
                        Kern<T>::axpy(static_cast<size_t>(inner), inv, g.data() + o * inner,
                                      gx.data() + (o * n + j) * inner);
            });
        out.attach(tape, node);
    }
    return out;
}

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x) {
    T s = 0;
    const T* xd = x.data();
    for (int64_t i = 0; i < x.numel(); ++i) s += xd[i];
    TensorT<T> out = TensorT<T>::scalar(s);
    check_finite(out.vec(), "sum_all");

    Tape<T>* tape = result_tape<T>({&x});
    if (tape) {
        const int xn = x.node();
        const int node = tape->record({}, [xn](Tape<T>& tp, int self) {
            const std::vector<T>& g = tp.grad_acc(self);
            std::vector<T>& gx = tp.grad_acc(xn);
            for (T& v : gx) v += g[0];
        });
        out.attach(tape, node);
    }
    return out;
}

// ---- loss ---------------------------------------------------------------

template <typename T>
TensorT<T> softmax_cross_entropy(const TensorT<T>& logits, std::span<const int64_t> labels) {
    if (logits.rank() != 2)
        throw ShapeError("softmax_cross_entropy: logits must be [batch,classes], got " +
                         shape_str(logits.shape()));
    const int64_t B = logits.dim(0);
    const int64_t K = logits.dim(1);
    if (static_cast<int64_t>(labels.size()) != B)
        throw ArgumentError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                            " labels for batch of " + std::to_string(B));
    for (int64_t i = 0; i < B; ++i)
        if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= K)
            throw ArgumentError("softmax_cross_entropy: label " +
                                std::to_string(labels[static_cast<size_t>(i)]) +
                                " out of range [0," + std::to_string(K) + ")");

    std::vector<T> probs(static_cast<size_t>(B * K));
    const T* ld = logits.data();
    T loss = 0;
    for (int64_t i = 0; i < B; ++i) {
        const T* row = ld + i * K;
        T m = row[0];
        for (int64_t k = 1; k < K; ++k) m = std::max(m, row[k]);
        T s = 0;
        for (int64_t k = 0; k < K; ++k) s += std::exp(row[k] - m);
        const T lse = m + std::log(s);
        for (int64_t k = 0; k < K; ++k)
            probs[static_cast<size_t>(i * K + k)] = std::exp(row[k] - lse);
        loss += lse - row[labels[static_cast<size_t>(i)]];
    }
    loss /= static_cast<T>(B);
    TensorT<T> out = TensorT<T>::scalar(loss);
    check_finite(out.vec(), "softmax_cross_entropy");

    Tape<T>* tape = result_tape<T>({&logits});
    if (tape) {
        const int xn = logits.node();
        std::vector<int64_t> lab(labels.begin(), labels.end());
        const int node = tape->record(
            {}, [xn, B, K, probs = std::move(probs), lab = std::move(lab)](Tape<T>& tp, int self) {
                const T up = tp.grad_acc(self)[0];
                std::vector<T>& gx = tp.grad_acc(xn);
                const T invb = up / static_cast<T>(B);
                for (int64_t i = 0; i < B; ++i) {
                    for (int64_t k = 0; k < K; ++k)
                        gx[static_cast<size_t>(i * K + k)] +=
                            invb * probs[static_cast<size_t>(i * K + k)];
                    gx[static_cast<size_t>(i * K + lab[static_cast<size_t>(i)])] -= invb;
                }
            });
        out.attach(tape, node);
    }
    return out;
}

// ---- instantiations -----------------------------------------------------

#define LBT_INSTANTIATE_OPS(T)                                                                  \
    template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);                        \
    template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                           \
    template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);                           \
    template TensorT<T> scale<T>(const TensorT<T>&, T);                                         \
    template TensorT<T> softmax<T>(const TensorT<T>&, int);                                     \
    template TensorT<T> layer_norm<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,  \
                                      T);                                                       \
    template TensorT<T> gelu<T>(const TensorT<T>&);                                             \
    template TensorT<T> dropout<T>(const TensorT<T>&, double, bool, Rng&);                      \
    template TensorT<T> reshape<T>(const TensorT<T>&, std::vector<int64_t>);                    \
    template TensorT<T> transpose<T>(const TensorT<T>&, std::vector<int>);                      \
    template TensorT<T> broadcast_to<T>(const TensorT<T>&, std::vector<int64_t>);               \
    template TensorT<T> mean_axis<T>(const TensorT<T>&, int);                                   \
    template TensorT<T> sum_all<T>(const TensorT<T>&);                                          \
    template TensorT<T> softmax_cross_entropy<T>(const TensorT<T>&, std::span<const int64_t>);

LBT_INSTANTIATE_OPS(float)
LBT_INSTANTIATE_OPS(double)

} // namespace lbt
