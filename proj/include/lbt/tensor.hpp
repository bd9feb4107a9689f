#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lbt/error.hpp"
#include "lbt/rng.hpp"

namespace lbt {

template <typename T>
class Tape;

std::string shape_str(const std::vector<int64_t>& shape);
int64_t shape_numel(const std::vector<int64_t>& shape);

// Dense row-major tensor. The value buffer is shared (copies are cheap and
// alias), and tensors are treated as immutable once they participate in a
// computation; in-place writes are reserved for leaf tensors the caller owns
// (parameter updates between optimizer steps).
template <typename T>
class TensorT {
public:
    TensorT() : data_(std::make_shared<std::vector<T>>()) {}

    explicit TensorT(std::vector<int64_t> shape)
        : shape_(std::move(shape)),
          data_(std::make_shared<std::vector<T>>(checked_numel(shape_), T(0))) {}

    TensorT(std::vector<int64_t> shape, std::vector<T> values)
        : shape_(std::move(shape)), data_(std::make_shared<std::vector<T>>(std::move(values))) {
        if (static_cast<int64_t>(data_->size()) != checked_numel(shape_))
            throw ShapeError("tensor: " + std::to_string(data_->size()) +
                             " values do not fill shape " + shape_str(shape_));
    }

    static TensorT full(std::vector<int64_t> shape, T value) {
        TensorT t(std::move(shape));
        for (T& v : *t.data_) v = value;
        return t;
    }

    static TensorT scalar(T value) { return TensorT({}, std::vector<T>{value}); }

    const std::vector<int64_t>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int64_t dim(int axis) const { return shape_[static_cast<size_t>(axis)]; }
    int64_t numel() const { return static_cast<int64_t>(data_->size()); }

    const T* data() const { return data_->data(); }
    T* data() { return data_->data(); }
    const std::vector<T>& vec() const { return *data_; }

    T item() const {
        if (numel() != 1)
            throw ArgumentError("item() requires a one-element tensor, got shape " +
                                shape_str(shape_));
        return (*data_)[0];
    }

    bool tracked() const { return tape_ != nullptr && node_ >= 0; }
    Tape<T>* tape() const { return tape_; }
    int node() const { return node_; }
    void attach(Tape<T>* tape, int node) {
        tape_ = tape;
        node_ = node;
    }
    void detach() {
        tape_ = nullptr;
        node_ = -1;
    }

    // Same value buffer under a different shape (no copy, not on tape).
    TensorT with_shape(std::vector<int64_t> shape) const {
        if (shape_numel(shape) != numel())
            throw ShapeError("with_shape: cannot view " + shape_str(shape_) + " as " +
                             shape_str(shape));
        TensorT t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    template <typename U>
    TensorT<U> cast() const {
        std::vector<U> out(data_->size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>((*data_)[i]);
        return TensorT<U>(shape_, std::move(out));
    }

private:
    int64_t checked_numel(const std::vector<int64_t>& s) const {
        for (int64_t d : s)
            if (d <= 0) throw ShapeError("tensor: nonpositive dimension in " + shape_str(s));
        return shape_numel(s);
    }

    std::vector<int64_t> shape_;
    std::shared_ptr<std::vector<T>> data_;
    Tape<T>* tape_ = nullptr;
    int node_ = -1;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Reverse-mode gradient tape (define-by-run). Nodes are appended in execution
// order, so a reverse sweep is a valid topological order. Single-threaded;
// one tape per training step.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers a leaf; idempotent for tensors already on this tape. The
    // node-id bounds check guards against handles still carrying a pointer to
    // a destroyed tape that this one happens to replace in memory.
    int watch(TensorT<T>& t) {
        if (t.tape() == this && t.node() >= 0 &&
            static_cast<size_t>(t.node()) < nodes_.size())
            return t.node();
        const int node = record(t.shape(), nullptr);
        t.attach(this, node);
        return node;
    }

    int record(std::vector<int64_t> shape, std::function<void(Tape&, int)> backward) {
        if (consumed_) throw StateError("tape: recording onto a consumed tape");
        nodes_.push_back(Node{std::move(shape), {}, std::move(backward)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    // Accumulation buffer for a node, allocated (zeroed) on first use.
    std::vector<T>& grad_acc(int node) {
        Node& n = nodes_[static_cast<size_t>(node)];
        if (n.grad.empty()) n.grad.assign(static_cast<size_t>(shape_numel(n.shape)), T(0));
        return n.grad;
    }

    void backward(const TensorT<T>& loss) {
        if (consumed_) throw StateError("tape: backward on a consumed tape");
        if (loss.tape() != this || loss.node() < 0)
            throw ArgumentError("backward: loss was not produced under this tape");
        if (loss.numel() != 1)
            throw ArgumentError("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
        grad_acc(loss.node())[0] = T(1);
        for (int i = loss.node(); i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.grad.empty() && n.backward) n.backward(*this, i);
        }
        consumed_ = true;
    }

    // Gradient of a watched/tracked tensor; all-zero if it did not
    // participate in the loss. Valid only after backward.
    TensorT<T> grad(const TensorT<T>& t) const {
        if (!consumed_) throw StateError("tape: grad requested before backward");
        if (t.tape() != this || t.node() < 0)
            throw ArgumentError("grad: tensor is not on this tape");
        const Node& n = nodes_[static_cast<size_t>(t.node())];
        if (n.grad.empty()) return TensorT<T>(t.shape());
        return TensorT<T>(n.shape, n.grad);
    }

    bool consumed() const { return consumed_; }
    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<int64_t> shape;
        std::vector<T> grad;
        std::function<void(Tape&, int)> backward; // null for leaves
    };

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// Strict-finite mode: when enabled, every op validates its output and raises
// NumericError naming the op on the first NaN/Inf. Thread-local.
bool strict_finite();
void set_strict_finite(bool on);

struct StrictFiniteScope {
    explicit StrictFiniteScope(bool on) : prev_(strict_finite()) { set_strict_finite(on); }
    ~StrictFiniteScope() { set_strict_finite(prev_); }

private:
    bool prev_;
};

// ---- differentiable ops -------------------------------------------------
// Each op records itself on the tape of any tracked input. Shape errors name
// both shapes. See matching *_oracle tests for the semantics contracts.

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b); // right-aligned broadcast

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b); // right-aligned broadcast

template <typename T>
TensorT<T> scale(const TensorT<T>& x, T constant);

template <typename T>
TensorT<T> softmax(const TensorT<T>& x, int axis); // max-subtracted, stable

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias,
                      T eps = T(1e-5));

template <typename T>
TensorT<T> gelu(const TensorT<T>& x); // tanh form; constants documented in tensor.cpp

template <typename T>
TensorT<T> dropout(const TensorT<T>& x, double rate, bool training, Rng& rng);

template <typename T>
TensorT<T> reshape(const TensorT<T>& x, std::vector<int64_t> shape);

template <typename T>
TensorT<T> transpose(const TensorT<T>& x, std::vector<int> perm);

template <typename T>
TensorT<T> broadcast_to(const TensorT<T>& x, std::vector<int64_t> shape);

template <typename T>
TensorT<T> mean_axis(const TensorT<T>& x, int axis);

template <typename T>
TensorT<T> sum_all(const TensorT<T>& x);

// Mean over the batch of -log softmax(logits)[label], via stable log-sum-exp.
template <typename T>
TensorT<T> softmax_cross_entropy(const TensorT<T>& logits, std::span<const int64_t> labels);

} // namespace lbt
