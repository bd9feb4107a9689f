#include "lbt/optimizer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "lbt/checkpoint.hpp"

namespace lbt {

template <typename T>
LambStateT<T> make_lamb_state(std::span<const ParamSlotT<T>> slots) {
    LambStateT<T> s;
    s.m.reserve(slots.size());
    s.v.reserve(slots.size());
    for (const ParamSlotT<T>& slot : slots) {
        s.m.emplace_back(slot.value->shape());
        s.v.emplace_back(slot.value->shape());
    }
    return s;
}

template <typename T>
void lamb_step(std::span<const ParamSlotT<T>> slots, std::span<const TensorT<T>> grads,
               const LambConfig& cfg, LambStateT<T>& state, LambStepInfo* info) {
    if (grads.size() != slots.size())
        throw ArgumentError("lamb_step: " + std::to_string(grads.size()) + " gradients for " +
                            std::to_string(slots.size()) + " parameters");
    if (state.m.size() != slots.size())
        throw ArgumentError("lamb_step: state was built for a different parameter list");

    const int64_t t = state.t + 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    if (info) {
        info->trust_ratio.clear();
        info->trust_ratio.reserve(slots.size());
    }

    std::vector<T> u;
    for (size_t i = 0; i < slots.size(); ++i) {
        TensorT<T>& w = *slots[i].value;
        const TensorT<T>& g = grads[i];
        if (g.shape() != w.shape())
            throw ShapeError("lamb_step: gradient shape " + shape_str(g.shape()) +
                             " does not match parameter " + shape_str(w.shape()));
        TensorT<T>& m = state.m[i];
        TensorT<T>& v = state.v[i];
        const int64_t n = w.numel();
        T* wd = w.data();
        const T* gd = g.data();
        T* md = m.data();
        T* vd = v.data();

        const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
        const T one_m_b1 = static_cast<T>(1.0 - cfg.beta1);
        const T one_m_b2 = static_cast<T>(1.0 - cfg.beta2);
        const T inv_bc1 = static_cast<T>(1.0 / bc1), inv_bc2 = static_cast<T>(1.0 / bc2);
        const T eps = static_cast<T>(cfg.eps);
        const T decay = slots[i].decay_exempt ? T(0) : static_cast<T>(cfg.weight_decay);

        u.assign(static_cast<size_t>(n), T(0));
        double w_sq = 0, u_sq = 0;
        for (int64_t e = 0; e < n; ++e) {
            md[e] = b1 * md[e] + one_m_b1 * gd[e];
            vd[e] = b2 * vd[e] + one_m_b2 * gd[e] * gd[e];
            const T mhat = md[e] * inv_bc1;
            const T vhat = vd[e] * inv_bc2;
            const T upd = mhat / (std::sqrt(vhat) + eps) + decay * wd[e];
            u[static_cast<size_t>(e)] = upd;
            w_sq += static_cast<double>(wd[e]) * static_cast<double>(wd[e]);
            u_sq += static_cast<double>(upd) * static_cast<double>(upd);
        }
        const double w_norm = std::sqrt(w_sq);
        const double u_norm = std::sqrt(u_sq);
        double ratio = 1.0;
        if (w_norm != 0.0 && u_norm != 0.0)
            ratio = std::clamp(w_norm / u_norm, cfg.clamp_lo, cfg.clamp_hi);
        if (info) info->trust_ratio.push_back(ratio);

        const T step = static_cast<T>(cfg.lr * ratio);
        for (int64_t e = 0; e < n; ++e) wd[e] -= step * u[static_cast<size_t>(e)];
    }
    state.t = t;
}

namespace {

// Distinct per-purpose stream keys under the fit seed.
constexpr uint64_t kShuffleStream = 0x5F;
constexpr uint64_t kAugmentStream = 0xA06;
constexpr uint64_t kDropoutStream = 0xD0;

struct BatchEval {
    double loss_sum = 0;
    int64_t correct = 0;
    int64_t total = 0;
};

int64_t argmax_row(const float* row, int64_t k) {
    int64_t best = 0;
    for (int64_t i = 1; i < k; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

Tensor assemble_batch(const SampleProvider& data, std::span<const int64_t> indices,
                      bool do_augment, const Rng& aug_base, std::vector<int64_t>& labels) {
    labels.clear();
    Tensor batch;
    for (size_t i = 0; i < indices.size(); ++i) {
        Rng rng = aug_base.fork(static_cast<uint64_t>(indices[i]));
        auto [img, label] = data.get(indices[i], do_augment, rng);
        if (i == 0) {
            std::vector<int64_t> shape = {static_cast<int64_t>(indices.size())};
            shape.insert(shape.end(), img.shape().begin(), img.shape().end());
            batch = Tensor(shape);
        }
        const int64_t per = img.numel();
        std::copy_n(img.data(), per, batch.data() + static_cast<int64_t>(i) * per);
        labels.push_back(label);
    }
    return batch;
}

} // namespace

EvalResult evaluate_provider(ParamStore& params, const ModelConfig& cfg,
                             const SampleProvider& data, int batch_size) {
    EvalResult r;
    const int64_t n = data.size();
    if (n == 0) throw ArgumentError("evaluate: empty dataset");
    Rng unused(0);
    std::vector<int64_t> labels;
    double loss_sum = 0;
    int64_t correct = 0;
    for (int64_t start = 0; start < n; start += batch_size) {
        const int64_t b = std::min<int64_t>(batch_size, n - start);
        std::vector<int64_t> idx(static_cast<size_t>(b));
        std::iota(idx.begin(), idx.end(), start);
        Tensor batch = assemble_batch(data, idx, false, unused, labels);
        Tensor logits = forward(batch, params, cfg, Mode::eval);
        Tensor loss = sparse_categorical_crossentropy(logits, labels);
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(b);
        const int64_t k = logits.dim(1);
        for (int64_t i = 0; i < b; ++i) {
            const int64_t pred = argmax_row(logits.data() + i * k, k);
            r.predictions.push_back(pred);
            r.labels.push_back(labels[static_cast<size_t>(i)]);
            if (pred == labels[static_cast<size_t>(i)]) ++correct;
        }
    }
    r.loss = loss_sum / static_cast<double>(n);
    r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    return r;
}

std::vector<TrainRecord> fit(ParamStore& params, const ModelConfig& cfg,
                             const SampleProvider& train, const SampleProvider* val,
                             const FitConfig& fc, std::ostream* log) {
    const int64_t n = train.size();
    if (n == 0) throw ArgumentError("fit: empty training set");
    if (fc.keep_best && fc.best_path.empty())
        throw ArgumentError("fit: keep_best requires a checkpoint path");

    std::vector<NamedParam> named = named_params(params);
    std::vector<ParamSlot> slots;
    slots.reserve(named.size());
    for (NamedParam& np : named) slots.push_back({np.tensor, np.decay_exempt});
    LambState state = make_lamb_state(std::span<const ParamSlot>(slots));

    const Rng base(fc.seed);
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    std::vector<TrainRecord> records;
    double best_val = -1.0;
    std::vector<int64_t> labels;

    for (int epoch = 0; epoch < fc.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        {
            Rng shuffle_rng =
                base.fork(kShuffleStream).fork(static_cast<uint64_t>(epoch));
            shuffle_rng.shuffle(order);
        }
        const Rng aug_base = base.fork(kAugmentStream).fork(static_cast<uint64_t>(epoch));

        BatchEval ev;
        int64_t batch_index = 0;
        for (int64_t start = 0; start < n; start += fc.batch_size, ++batch_index) {
            const int64_t b = std::min<int64_t>(fc.batch_size, n - start);
            std::span<const int64_t> idx(order.data() + start, static_cast<size_t>(b));
            Tensor batch = assemble_batch(train, idx, fc.augment, aug_base, labels);

            Rng drop_rng = base.fork(kDropoutStream)
                               .fork(static_cast<uint64_t>(epoch))
                               .fork(static_cast<uint64_t>(batch_index));
            Tape<float> tape;
            for (ParamSlot& slot : slots) tape.watch(*slot.value);
            Tensor logits = forward(batch, params, cfg, Mode::train, &drop_rng);
            Tensor loss = sparse_categorical_crossentropy(logits, labels);

            ev.loss_sum += static_cast<double>(loss.item()) * static_cast<double>(b);
            const int64_t k = logits.dim(1);
            for (int64_t i = 0; i < b; ++i)
                if (argmax_row(logits.data() + i * k, k) == labels[static_cast<size_t>(i)])
                    ++ev.correct;
            ev.total += b;

            tape.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(slots.size());
            for (ParamSlot& slot : slots) grads.push_back(tape.grad(*slot.value));
            lamb_step(std::span<const ParamSlot>(slots), std::span<const Tensor>(grads),
                      fc.lamb, state);
            for (ParamSlot& slot : slots) slot.value->detach();
        }

        TrainRecord rec;
        rec.epoch = epoch;
        rec.train_loss = ev.loss_sum / static_cast<double>(ev.total);
        rec.train_acc = static_cast<double>(ev.correct) / static_cast<double>(ev.total);
        if (val && val->size() > 0) {
            const EvalResult vr = evaluate_provider(params, cfg, *val, fc.batch_size);
            rec.val_loss = vr.loss;
            rec.val_acc = vr.accuracy;
        } else {
            rec.val_loss = rec.train_loss;
            rec.val_acc = rec.train_acc;
        }
        rec.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        records.push_back(rec);

        if (fc.keep_best && rec.val_acc > best_val) {
            best_val = rec.val_acc;
            save_checkpoint(params, cfg, fc.best_path);
        }
        if (log) {
            std::ostringstream os;
            os << "epoch " << epoch << ": loss " << rec.train_loss << " acc " << rec.train_acc
               << " val_loss " << rec.val_loss << " val_acc " << rec.val_acc << " ("
               << rec.seconds << "s)\n";
            (*log) << os.str() << std::flush;
        }
    }
    return records;
}

void write_curves_csv(const std::string& path, std::span<const TrainRecord> records) {
    std::ostringstream os;
    os << "epoch,train_loss,train_acc,val_loss,val_acc,seconds\n";
    os.precision(9);
    for (const TrainRecord& r : records)
        os << r.epoch << ',' << r.train_loss << ',' << r.train_acc << ',' << r.val_loss << ','
           << r.val_acc << ',' << r.seconds << '\n';
    write_file(path, os.str());
}

#define LBT_INSTANTIATE_LAMB(T)                                                                 \
    template LambStateT<T> make_lamb_state<T>(std::span<const ParamSlotT<T>>);                  \
    template void lamb_step<T>(std::span<const ParamSlotT<T>>, std::span<const TensorT<T>>,     \
                               const LambConfig&, LambStateT<T>&, LambStepInfo*);

LBT_INSTANTIATE_LAMB(float)
LBT_INSTANTIATE_LAMB(double)

} // namespace lbt
