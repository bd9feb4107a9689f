#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lbt/dataio.hpp"
#include "lbt/model.hpp"
#include "lbt/tensor.hpp"

namespace lbt {

struct LambConfig {
    double lr = 0.001;
    double weight_decay = 0.0001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-6;
    double clamp_lo = 0.0; // trust-ratio bounds
    double clamp_hi = 10.0;
};

template <typename T>
struct ParamSlotT {
    TensorT<T>* value = nullptr;
    bool decay_exempt = false; // no weight-decay term for this tensor
};

using ParamSlot = ParamSlotT<float>;

template <typename T>
struct LambStateT {
    int64_t t = 0;                // completed steps
    std::vector<TensorT<T>> m, v; // moments, aligned with the slot list
};

using LambState = LambStateT<float>;

template <typename T>
LambStateT<T> make_lamb_state(std::span<const ParamSlotT<T>> slots);

// Per-tensor trust ratios of the latest step, for inspection.
struct LambStepInfo {
    std::vector<double> trust_ratio;
};

// One LAMB update, in place:
//   m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2;  bias-correct both;
//   r <- m^ / (sqrt(v^) + eps);  u <- r + wd*w (wd = 0 when decay-exempt);
//   ratio <- ||w|| / ||u|| clamped to [clamp_lo, clamp_hi], 1 if either norm
//   is 0;  w <- w - lr * ratio * u.
template <typename T>
void lamb_step(std::span<const ParamSlotT<T>> slots, std::span<const TensorT<T>> grads,
               const LambConfig& cfg, LambStateT<T>& state, LambStepInfo* info = nullptr);

struct TrainRecord {
    int epoch = 0;
    double train_loss = 0, train_acc = 0;
    double val_loss = 0, val_acc = 0;
    double seconds = 0;
};

struct FitConfig {
    int epochs = 100;
    int batch_size = 32;
    LambConfig lamb;
    uint64_t seed = 0;  // drives shuffling, augmentation and dropout streams
    bool augment = true;
    bool keep_best = false;   // checkpoint the best-validation-accuracy epoch
    std::string best_path;    // required when keep_best
};

// Epoch/batch training loop. Deterministic given the seed: shuffle order is
// keyed by (seed, epoch), augmentation by (seed, epoch, sample index) and
// dropout by (seed, epoch, batch index), so results are independent of any
// batch-assembly parallelism. When no validation provider is given the val
// columns repeat the training metrics. Returns one record per epoch; params
// are left at the final epoch's values.
std::vector<TrainRecord> fit(ParamStore& params, const ModelConfig& cfg,
                             const SampleProvider& train, const SampleProvider* val,
                             const FitConfig& fc, std::ostream* log = nullptr);

// Evaluation helper: mean loss, accuracy and per-sample argmax predictions.
struct EvalResult {
    double loss = 0;
    double accuracy = 0;
    std::vector<int64_t> predictions;
    std::vector<int64_t> labels;
};
EvalResult evaluate_provider(ParamStore& params, const ModelConfig& cfg,
                             const SampleProvider& data, int batch_size);

// CSV with pinned header: epoch,train_loss,train_acc,val_loss,val_acc,seconds
void write_curves_csv(const std::string& path, std::span<const TrainRecord> records);

} // namespace lbt
