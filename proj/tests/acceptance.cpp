// Acceptance gate: every shipping criterion checked end to end, one PASS/FAIL
// line each, frozen tolerances. Exit code is the number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <filesystem>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lbt/attention.hpp"
#include "lbt/bench.hpp"
#include "lbt/checkpoint.hpp"
#include "lbt/dataio.hpp"
#include "lbt/gradcheck.hpp"
#include "lbt/metrics.hpp"
#include "lbt/model.hpp"
#include "lbt/optimizer.hpp"
#include "lbt/rng.hpp"
#include "lbt/synth.hpp"
#include "lbt/tensor.hpp"

using namespace lbt;

namespace {

int failures = 0;

void report(int n, bool ok, const std::string& detail) {
    std::printf("%s criterion %2d: %s\n", ok ? "PASS" : "FAIL", n, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

void run(int n, const std::function<std::pair<bool, std::string>()>& fn) {
    try {
        const auto [ok, detail] = fn();
        report(n, ok, detail);
    } catch (const std::exception& e) {
        report(n, false, std::string("unexpected exception: ") + e.what());
    }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 6) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

// |got - want| <= tol, with a hair of slack so exact-boundary decimal
// tolerances are not lost to binary representation.
bool near(double got, double want, double tol) {
    return std::abs(got - want) <= tol + 1e-9;
}

// ---- criterion 1+2: reference confusion-matrix metrics ------------------

std::pair<bool, std::string> screening_metrics_criterion() {
    const auto t0 = std::chrono::steady_clock::now();
    ConfusionMatrix cm(2, {"Normal", "Abnormal"});
    cm.at(0, 0) = 21;
    cm.at(0, 1) = 2;
    cm.at(1, 0) = 3;
    cm.at(1, 1) = 66;

    const MetricsReport r = build_report(cm, 1);
    const double acc = r.per_class.accuracy;
    const double kappa = r.kappa;
    const double p_ab = r.per_class.per_class[1].precision.value;
    const double r_ab = r.per_class.per_class[1].recall.value;
    const double p_no = r.per_class.per_class[0].precision.value;
    const double r_no = r.per_class.per_class[0].recall.value;
    const double ppv = r.screening->ppv.value;
    const double npv = r.screening->npv.value;
    const double elapsed = seconds_since(t0);

    bool ok = true;
    ok &= near(acc, 0.9457, 0.0001);
    ok &= near(kappa, 0.857, 0.005);
    ok &= near(p_ab, 0.97, 0.005);
    ok &= near(r_ab, 0.96, 0.005);
    ok &= near(p_no, 0.88, 0.005);
    ok &= near(r_no, 0.91, 0.005);
    ok &= std::round(ppv * 1e4) / 1e4 == 0.9706;
    ok &= std::round(npv * 1e4) / 1e4 == 0.8750;
    ok &= elapsed < 1.0;
    return {ok, "screening report matches the reference binary matrix (acc=" + fmt(acc) +
                    " kappa=" + fmt(kappa) + " ppv=" + fmt(ppv, 4) + " npv=" + fmt(npv, 4) +
                    " in " + fmt(elapsed, 3) + "s)"};
}

std::pair<bool, std::string> five_class_accuracy_criterion() {
    // 759 of 810 test samples correct.
    ConfusionMatrix cm(5);
    const int64_t diag[5] = {150, 158, 155, 160, 136};
    int64_t placed = 0;
    for (int c = 0; c < 5; ++c) {
        cm.at(c, c) = diag[c];
        placed += diag[c];
    }
    cm.at(0, 1) = 20;
    cm.at(1, 0) = 10;
    cm.at(2, 4) = 8;
    cm.at(3, 2) = 7;
    cm.at(4, 3) = 6;
    if (cm.total() != 810 || cm.trace() != 759)
        return {false, "fixture matrix misassembled"};
    const double pct = per_class_metrics(cm).accuracy * 100.0;
    const bool ok = near(pct, 93.70, 0.01);
    return {ok, "759/810 correct scores " + fmt(pct, 4) + "% (want 93.70 +/- 0.01)"};
}

// ---- criterion 3: token-count geometry ----------------------------------

ModelConfig stock_config(int image, int patch, int classes) {
    ModelConfig cfg;
    cfg.image_size = image;
    cfg.patch_size = patch;
    cfg.projection_dim = 256;
    cfg.latent_len = 256;
    cfg.num_heads = 8;
    cfg.latent_layers = 4;
    cfg.repeats = 2;
    cfg.num_classes = classes;
    cfg.seed = 7;
    return cfg;
}

std::pair<bool, std::string> geometry_criterion() {
    const ModelConfig big = stock_config(224, 14, 3);
    const ModelConfig small = stock_config(72, 2, 2);
    bool ok = big.patch_count() == 256 && small.patch_count() == 1296;

    Rng rng(11);
    for (const ModelConfig* cfg : {&big, &small}) {
        ParamStore p = init_params<float>(*cfg);
        Tensor batch({2, cfg->image_size, cfg->image_size, cfg->channels});
        for (int64_t i = 0; i < batch.numel(); ++i) batch.data()[i] = float(rng.uniform());
        const Tensor tokens = embed_image(batch, p, *cfg);
        ok &= tokens.shape() ==
              std::vector<int64_t>{2, cfg->patch_count(), cfg->projection_dim};
    }
    return {ok, "224/14 yields 256 tokens and 72/2 yields 1296, embeddings shaped [B,M,D]"};
}

// ---- criterion 4: full-model gradient check in double -------------------

std::pair<bool, std::string> gradcheck_criterion() {
    const auto t0 = std::chrono::steady_clock::now();
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4; // M = 4
    cfg.projection_dim = 8;
    cfg.latent_len = 4;
    cfg.num_heads = 2;
    cfg.latent_layers = 1;
    cfg.repeats = 2;
    cfg.dropout = 0.0;
    cfg.num_classes = 2;
    cfg.seed = 3;

    ParamStoreT<double> store = init_params<double>(cfg);
    TensorD batch({2, 8, 8, 3});
    Rng rng(5);
    for (int64_t i = 0; i < batch.numel(); ++i) batch.data()[i] = rng.uniform();
    const std::vector<int64_t> labels = {0, 1};

    std::vector<GradParam> params;
    for (NamedParamT<double>& np : named_params(store)) params.push_back({np.name, np.tensor});
    const auto loss_fn = [&]() {
        return sparse_categorical_crossentropy(forward(batch, store, cfg, Mode::eval), labels);
    };

    double worst = 0.0;
    std::string worst_name;
    int64_t checked = 0;
    for (const GradCheckResult& r : gradcheck(params, loss_fn, 1e-5)) {
        checked += r.checked;
        if (r.max_rel > worst) {
            worst = r.max_rel;
            worst_name = r.name;
        }
    }
    const double elapsed = seconds_since(t0);
    const bool ok = worst < 1e-4 && elapsed < 300.0;
    return {ok, "end-to-end f64 finite differences across " + std::to_string(checked) +
                    " weights: worst rel err " + fmt(worst, 8) + " (" + worst_name + ") in " +
                    fmt(elapsed, 1) + "s"};
}

// ---- criterion 5: cost accounting ---------------------------------------

std::pair<bool, std::string> flops_criterion() {
    const int64_t N = 256, D = 256, L = 4;
    // attention-product cost is linear in the data-array length
    const uint64_t f1 = attention_product_flops(1, N, 256, D);
    const uint64_t f2 = attention_product_flops(1, N, 512, D);
    const double ratio = double(f2) / double(f1);
    bool ok = std::abs(ratio - 2.0) <= 0.05;

    // the latent stack never sees M
    const BenchRow r256 = bench_row(256, N, L, D, false);
    const BenchRow r1296 = bench_row(1296, N, L, D, false);
    ok &= r256.latent_flops == r1296.latent_flops;
    ok &= r1296.cross_attn_flops * 256 == r256.cross_attn_flops * 1296;

    // measured wall clock of the cross-attention core tracks the model;
    // interleaved best-of-three rounds so a transient stall on this shared
    // machine cannot inflate one size alone
    double w256 = std::numeric_limits<double>::infinity();
    double w1296 = std::numeric_limits<double>::infinity();
    for (int round = 0; round < 3; ++round) {
        w256 = std::min(w256, time_cross_core(256, N, D));
        w1296 = std::min(w1296, time_cross_core(1296, N, D));
    }
    const double wall_ratio = w1296 / w256;
    ok &= wall_ratio >= 3.5 && wall_ratio <= 6.5;
    return {ok, "flops double with M (ratio " + fmt(ratio, 3) +
                    "), latent cost M-independent, wall ratio 256->1296 = " +
                    fmt(wall_ratio, 2) + " (predicted 5.06, accept [3.5,6.5])"};
}

// ---- criterion 6: weight sharing census ---------------------------------

int64_t block_param_count(ParamStore& p) {
    int64_t n = 0;
    for (NamedParamT<float>& np : named_params(p)) {
        const bool block = np.name.find("cross.") != std::string::npos ||
                           np.name.find("block") != std::string::npos;
        if (block) n += np.tensor->numel();
    }
    return n;
}

std::pair<bool, std::string> sharing_criterion() {
    ModelConfig shared = stock_config(72, 2, 2);
    shared.share_weights = true;
    shared.repeats = 2;
    ModelConfig once = shared;
    once.repeats = 1;
    ParamStore ps = init_params<float>(shared);
    ParamStore p1 = init_params<float>(once);
    bool ok = total_param_count(ps) == total_param_count(p1);

    ModelConfig tripled = shared;
    tripled.share_weights = false;
    tripled.repeats = 3;
    ParamStore p3 = init_params<float>(tripled);
    const int64_t shared_blocks = block_param_count(ps);
    const int64_t tripled_blocks = block_param_count(p3);
    ok &= tripled_blocks == 3 * shared_blocks;
    ok &= total_param_count(p3) - tripled_blocks == total_param_count(ps) - shared_blocks;
    return {ok, "sharing keeps the census at the single-repeat count (" +
                    std::to_string(total_param_count(ps)) + "); unshared R=3 triples the " +
                    "block weights (" + std::to_string(tripled_blocks) + " = 3 x " +
                    std::to_string(shared_blocks) + ")"};
}

// ---- criterion 7: data-array permutation invariance ---------------------

AttentionParams random_attention(int heads, int head_dim, int64_t dq, int64_t dkv, Rng& rng) {
    AttentionParams p;
    p.heads = heads;
    p.head_dim = head_dim;
    const int64_t d = int64_t(heads) * head_dim;
    auto fill = [&rng](Tensor t, double scale) {
        for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = float(rng.normal(0.0, scale));
        return t;
    };
    p.ln_q = {Tensor::full({dq}, 1.0f), Tensor({dq})};
    p.ln_kv = LayerNormParams{Tensor::full({dkv}, 1.0f), Tensor({dkv})};
    p.wq = fill(Tensor({dq, d}), 0.3);
    p.bq = fill(Tensor({d}), 0.1);
    p.wk = fill(Tensor({dkv, d}), 0.3);
    p.bk = fill(Tensor({d}), 0.1);
    p.wv = fill(Tensor({dkv, d}), 0.3);
    p.bv = fill(Tensor({d}), 0.1);
    p.wo = fill(Tensor({d, dq}), 0.3);
    p.bo = fill(Tensor({dq}), 0.1);
    return p;
}

std::pair<bool, std::string> permutation_criterion() {
    const int64_t B = 2, N = 5, M = 7, D = 16, C = 12;
    double worst = 0.0;
    for (uint64_t trial = 0; trial < 20; ++trial) {
        Rng rng(1000 + trial);
        AttentionParams p = random_attention(4, 4, D, C, rng);
        Tensor latent({B, N, D}), data({B, M, C});
        for (int64_t i = 0; i < latent.numel(); ++i) latent.data()[i] = float(rng.normal());
        for (int64_t i = 0; i < data.numel(); ++i) data.data()[i] = float(rng.normal());

        std::vector<size_t> perm(static_cast<size_t>(M));
        for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        rng.shuffle(perm);
        Tensor shuffled({B, M, C});
        for (int64_t b = 0; b < B; ++b)
            for (int64_t m = 0; m < M; ++m)
                for (int64_t c = 0; c < C; ++c)
                    shuffled.data()[(b * M + m) * C + c] =
                        data.data()[(b * M + int64_t(perm[size_t(m)])) * C + c];

        const Tensor out1 = cross_attention_block(latent, data, p);
        const Tensor out2 = cross_attention_block(latent, shuffled, p);
        for (int64_t i = 0; i < out1.numel(); ++i)
            worst = std::max(worst, std::abs(double(out1.data()[i]) - double(out2.data()[i])));
    }
    const bool ok = worst <= 1e-5;
    return {ok, "latent output ignores data-token order over 20 trials (worst |diff| " +
                    fmt(worst, 8) + " <= 1e-5)"};
}

// ---- criterion 8: synthetic training smoke ------------------------------

std::pair<bool, std::string> smoke_criterion() {
    const auto t0 = std::chrono::steady_clock::now();
    SynthSpec spec;
    spec.classes = 2;
    spec.per_class = 100;
    spec.image_size = 32;
    spec.seed = 9;

    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.patch_size = 4;
    cfg.projection_dim = 32;
    cfg.latent_len = 8;
    cfg.num_heads = 4;
    cfg.latent_layers = 1;
    cfg.repeats = 1;
    cfg.dropout = 0.0;
    cfg.num_classes = 2;
    cfg.seed = 1;

    FitConfig fc;
    fc.epochs = 50;
    fc.batch_size = 32;
    fc.seed = 123;
    fc.augment = false;
    // optimizer stays at its stock defaults: lr 1e-3, weight decay 1e-4

    const auto run_once = [&](std::vector<TrainRecord>& records) {
        SynthData data = synth_samples(spec);
        const VectorProvider provider(std::move(data.images), std::move(data.labels), 2);
        ParamStore params = init_params<float>(cfg);
        records = fit(params, cfg, provider, nullptr, fc);
        return params;
    };

    std::vector<TrainRecord> rec1, rec2;
    ParamStore params1 = run_once(rec1);
    ParamStore params2 = run_once(rec2);

    double best = 0.0;
    int best_epoch = -1;
    for (const TrainRecord& r : rec1)
        if (r.train_acc > best) {
            best = r.train_acc;
            best_epoch = r.epoch;
        }

    bool identical = rec1.size() == rec2.size();
    for (size_t i = 0; identical && i < rec1.size(); ++i)
        identical = rec1[i].train_loss == rec2[i].train_loss &&
                    rec1[i].train_acc == rec2[i].train_acc;
    auto n1 = named_params(params1), n2 = named_params(params2);
    for (size_t i = 0; identical && i < n1.size(); ++i) {
        const Tensor &a = *n1[i].tensor, &b = *n2[i].tensor;
        for (int64_t j = 0; identical && j < a.numel(); ++j)
            identical = a.data()[j] == b.data()[j];
    }

    const double elapsed = seconds_since(t0);
    const bool ok = best >= 0.95 && elapsed < 600.0 && identical;
    return {ok, "200-sample synthetic run reaches " + fmt(best * 100, 1) + "% train accuracy" +
                    " (epoch " + std::to_string(best_epoch) + "/50), rerun bit-identical=" +
                    (identical ? "yes" : "NO") + ", " + fmt(elapsed, 1) + "s"};
}

// ---- criterion 9: optimizer single-step oracle --------------------------

std::pair<bool, std::string> optimizer_criterion() {
    const LambConfig cfg; // lr 1e-3, wd 1e-4, betas .9/.999, eps 1e-6

    // scalar: hand-executed in 64-bit.
    // m^ = 1, v^ = 1, r = 1/(1+eps), u = r + wd, ratio = |w|/|u| -> update
    double m = 0.9 * 0 + 0.1 * 1.0;
    double v = 0.999 * 0 + 0.001 * 1.0;
    const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
    const double u = mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * 1.0;
    const double ratio = std::clamp(1.0 / std::abs(u), cfg.clamp_lo, cfg.clamp_hi);
    const double want_scalar = 1.0 - cfg.lr * ratio * u;

    TensorD w = TensorD::scalar(1.0);
    std::vector<ParamSlotT<double>> slots = {{&w, false}};
    auto state = make_lamb_state<double>(slots);
    std::vector<TensorD> grads = {TensorD::scalar(1.0)};
    lamb_step<double>(slots, grads, cfg, state);
    bool ok = std::abs(w.item() - want_scalar) < 1e-10;
    ok &= std::abs(w.item() - 0.999) < 1e-12; // closed form: exactly 1 - lr

    // 4-element parameter against the same equations, element by element
    const double w0[4] = {0.5, -1.25, 2.0, -0.125};
    const double g0[4] = {0.3, -0.2, 0.05, 0.7};
    double wref[4], uref[4], wn = 0, un = 0;
    for (int i = 0; i < 4; ++i) {
        const double mi = 0.1 * g0[i];
        const double vi = 0.001 * g0[i] * g0[i];
        const double mh = mi / 0.1, vh = vi / 0.001;
        uref[i] = mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * w0[i];
        wn += w0[i] * w0[i];
        un += uref[i] * uref[i];
    }
    const double vr = std::clamp(std::sqrt(wn) / std::sqrt(un), cfg.clamp_lo, cfg.clamp_hi);
    for (int i = 0; i < 4; ++i) wref[i] = w0[i] - cfg.lr * vr * uref[i];

    TensorD wv({4}, {w0[0], w0[1], w0[2], w0[3]});
    std::vector<ParamSlotT<double>> vslots = {{&wv, false}};
    auto vstate = make_lamb_state<double>(vslots);
    std::vector<TensorD> vgrads = {TensorD({4}, {g0[0], g0[1], g0[2], g0[3]})};
    lamb_step<double>(vslots, vgrads, cfg, vstate);
    double worst = 0.0;
    for (int i = 0; i < 4; ++i) worst = std::max(worst, std::abs(wv.data()[i] - wref[i]));
    ok &= worst < 1e-10;

    // decay-exempt parameter with zero gradient must not move at all
    TensorD frozen({3}, {1.0, -2.0, 3.0});
    std::vector<ParamSlotT<double>> fslots = {{&frozen, true}};
    auto fstate = make_lamb_state<double>(fslots);
    std::vector<TensorD> zero = {TensorD({3})};
    lamb_step<double>(fslots, zero, cfg, fstate);
    lamb_step<double>(fslots, zero, cfg, fstate);
    ok &= frozen.data()[0] == 1.0 && frozen.data()[1] == -2.0 && frozen.data()[2] == 3.0;

    return {ok, "single steps match the 64-bit hand oracle (scalar exact to 1e-12, vector " +
                    std::string("worst |diff| ") + fmt(worst, 14) +
                    "); zero-grad exempt weights untouched"};
}

// ---- criterion 10: reference split sizes --------------------------------

DatasetManifest fake_manifest(Taxonomy tax, const std::vector<int64_t>& per_class) {
    DatasetManifest m;
    m.taxonomy = std::move(tax);
    for (size_t c = 0; c < per_class.size(); ++c)
        for (int64_t i = 0; i < per_class[c]; ++i)
            m.samples.push_back({"mem/" + std::to_string(c) + "/" + std::to_string(i), int(c),
                                 m.taxonomy.fine_to_coarse[c], Split::train});
    return m;
}

std::pair<bool, std::string> split_criterion() {
    DatasetManifest five = fake_manifest(sipakmed_taxonomy(), {787, 831, 813, 825, 793});
    split_manifest(five, 0.2, 42);
    DatasetManifest seven = fake_manifest(herlev_taxonomy(), {74, 70, 98, 182, 146, 197, 150});
    split_manifest(seven, 0.1, 42);
    const int64_t tr5 = split_count(five, Split::train), te5 = split_count(five, Split::test);
    const int64_t tr7 = split_count(seven, Split::train), te7 = split_count(seven, Split::test);
    const bool ok = tr5 == 3239 && te5 == 810 && tr7 == 825 && te7 == 92;
    return {ok, "stratified splits reproduce the reference sizes: 4049 -> " +
                    std::to_string(tr5) + "/" + std::to_string(te5) + ", 917 -> " +
                    std::to_string(tr7) + "/" + std::to_string(te7)};
}

// ---- criterion 11: checkpoint integrity ---------------------------------

std::pair<bool, std::string> checkpoint_criterion() {
    namespace fs = std::filesystem;
    const std::string path =
        (fs::temp_directory_path() / "acceptance_roundtrip.ckpt").string();

    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.projection_dim = 8;
    cfg.latent_len = 4;
    cfg.num_heads = 2;
    cfg.latent_layers = 1;
    cfg.repeats = 2;
    cfg.num_classes = 3;
    cfg.seed = 21;

    ParamStore params = init_params<float>(cfg);
    Tensor batch({3, 8, 8, 3});
    Rng rng(2);
    for (int64_t i = 0; i < batch.numel(); ++i) batch.data()[i] = float(rng.uniform());
    const Tensor before = forward(batch, params, cfg, Mode::eval);

    save_checkpoint(params, cfg, path);
    auto [restored, cfg2] = load_checkpoint(path);
    const Tensor after = forward(batch, restored, cfg2, Mode::eval);

    bool ok = cfg2 == cfg && after.numel() == before.numel();
    for (int64_t i = 0; ok && i < before.numel(); ++i)
        ok = before.data()[i] == after.data()[i];
    const bool bit_identical = ok;

    // flip one payload byte: the loader must refuse with a digest complaint
    std::string bytes = read_file(path);
    bytes[bytes.size() / 2] = char(bytes[bytes.size() / 2] ^ 0x20);
    write_file(path, bytes);
    bool rejected = false;
    std::string complaint;
    try {
        load_checkpoint(path);
    } catch (const CheckpointError& e) {
        complaint = e.what();
        rejected = complaint.find("digest") != std::string::npos;
    }
    fs::remove(path);
    ok = bit_identical && rejected;
    return {ok, std::string("round-trip logits bit-identical=") +
                    (bit_identical ? "yes" : "NO") + "; corrupted file rejected with \"" +
                    complaint + "\""};
}

} // namespace

int main() {
    std::printf("acceptance: latent-bottleneck classifier library\n");
    run(1, screening_metrics_criterion);
    run(2, five_class_accuracy_criterion);
    run(3, geometry_criterion);
    run(4, gradcheck_criterion);
    run(5, flops_criterion);
    run(6, sharing_criterion);
    run(7, permutation_criterion);
    run(8, smoke_criterion);
    run(9, optimizer_criterion);
    run(10, split_criterion);
    run(11, checkpoint_criterion);
    std::printf("%d/11 criteria passed\n", 11 - failures);
    return failures;
}
