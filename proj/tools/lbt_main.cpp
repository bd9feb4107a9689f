// lbt — latent-bottleneck transformer image classifier.
//
// Subcommands: train, evaluate, predict, bench, selftest, synth.
// Exit codes: 0 success, 1 self-test/assertion failure, 2 input/data error,
// 3 checkpoint/config mismatch.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lbt/bench.hpp"
#include "lbt/checkpoint.hpp"
#include "lbt/dataio.hpp"
#include "lbt/error.hpp"
#include "lbt/kernels.hpp"
#include "lbt/metrics.hpp"
#include "lbt/model.hpp"
#include "lbt/optimizer.hpp"
#include "lbt/runconfig.hpp"
#include "lbt/selftest.hpp"
#include "lbt/synth.hpp"

namespace fs = std::filesystem;
using namespace lbt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitSelftest = 1;
constexpr int kExitInput = 2;
constexpr int kExitCheckpoint = 3;

// Output directory: flag > LBT_OUT_DIR > current directory.
std::string resolve_out_dir(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("LBT_OUT_DIR"); env && *env) return env;
    return ".";
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

// A fixed index subset of another provider (validation carve-outs).
class SubsetProvider : public SampleProvider {
public:
    SubsetProvider(const SampleProvider& base, std::vector<int64_t> indices)
        : base_(&base), indices_(std::move(indices)) {}
    int64_t size() const override { return static_cast<int64_t>(indices_.size()); }
    int num_classes() const override { return base_->num_classes(); }
    std::pair<Tensor, int64_t> get(int64_t index, bool augment, Rng& rng) const override {
        return base_->get(indices_.at(static_cast<size_t>(index)), augment, rng);
    }

private:
    const SampleProvider* base_;
    std::vector<int64_t> indices_;
};

// Deterministically carves round(frac*n) samples out of [0,n) for validation.
void carve_validation(int64_t n, double frac, uint64_t seed, std::vector<int64_t>& train_idx,
                      std::vector<int64_t>& val_idx) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), int64_t{0});
    Rng rng = Rng(seed).fork(0x7A11);
    rng.shuffle(order);
    const auto k = std::min<int64_t>(n - 1, std::llround(frac * double(n)));
    val_idx.assign(order.begin(), order.begin() + k);
    train_idx.assign(order.begin() + k, order.end());
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
}

std::vector<std::string> class_names_for(const std::string& kind, int k) {
    if (!kind.empty() && kind != "custom") {
        const Taxonomy tax =
            parse_kind(kind) == DatasetKind::sipakmed ? sipakmed_taxonomy() : herlev_taxonomy();
        if (static_cast<int>(tax.coarse_names.size()) == k) return tax.coarse_names;
    }
    return {};
}

void print_confusion(std::ostream& os, const ConfusionMatrix& cm) {
    os << "confusion matrix (rows = true, cols = predicted):\n";
    size_t w = 8;
    for (const auto& n : cm.class_names) w = std::max(w, n.size() + 2);
    os << std::string(w, ' ');
    for (const auto& n : cm.class_names) os << std::setw(int(w)) << n;
    os << '\n';
    for (int t = 0; t < cm.k; ++t) {
        os << std::setw(int(w)) << cm.class_names[size_t(t)];
        for (int p = 0; p < cm.k; ++p) os << std::setw(int(w)) << cm.at(t, p);
        os << '\n';
    }
}

std::string rate_str(const Rate& r) {
    if (r.undefined) return "undefined";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", r.value);
    return buf;
}

void print_report(std::ostream& os, const MetricsReport& r) {
    print_confusion(os, r.cm);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "accuracy %.4f  kappa %.4f", r.per_class.accuracy, r.kappa);
    os << buf << '\n';
    for (size_t c = 0; c < r.per_class.per_class.size(); ++c) {
        const ClassMetrics& m = r.per_class.per_class[c];
        os << "  " << r.cm.class_names[c] << ": precision " << rate_str(m.precision)
           << "  recall " << rate_str(m.recall) << "  f1 " << rate_str(m.f1) << '\n';
    }
    if (r.screening) {
        os << "  screening (positive = "
           << r.cm.class_names[size_t(r.screening->positive_class)] << "): sensitivity "
           << rate_str(r.screening->sensitivity) << "  specificity "
           << rate_str(r.screening->specificity) << "  ppv " << rate_str(r.screening->ppv)
           << "  npv " << rate_str(r.screening->npv) << '\n';
    }
}

DatasetManifest load_and_check(const std::string& root, const std::string& kind,
                               const std::string& taxonomy) {
    if (root.empty()) throw ConfigError("data_root is required (set data_root or --data)");
    if (!fs::exists(root)) throw IoError("dataset directory not found: " + root);
    DatasetManifest m = load_manifest(root, parse_kind(kind.empty() ? "custom" : kind), taxonomy);
    for (const std::string& w : m.warnings) std::cerr << "warning: " << w << '\n';
    return m;
}

// ---- train --------------------------------------------------------------

int cmd_train(const std::string& config_path, std::vector<std::string> overrides) {
    const RunConfig rc = resolve_run_config(config_path, overrides);
    const std::string out_dir = resolve_out_dir(rc.out_dir);
    ensure_dir(out_dir);

    DatasetManifest manifest = load_and_check(rc.data_root, rc.dataset_kind, rc.taxonomy_file);
    const int k = static_cast<int>(manifest.taxonomy.coarse_names.size());
    if (k != rc.model.num_classes)
        throw ConfigError("num_classes is " + std::to_string(rc.model.num_classes) +
                          " but the dataset taxonomy has " + std::to_string(k) +
                          " coarse classes");
    split_manifest(manifest, rc.test_fraction, rc.model.seed);
    export_manifest_json(manifest, (fs::path(out_dir) / "manifest.json").string());

    const ManifestProvider full_train(manifest, Split::train, rc.model.image_size);
    const ManifestProvider test(manifest, Split::test, rc.model.image_size);

    std::vector<int64_t> train_idx, val_idx;
    carve_validation(full_train.size(), rc.val_fraction, rc.model.seed, train_idx, val_idx);
    const SubsetProvider train(full_train, train_idx);
    const SubsetProvider val(full_train, val_idx);
    const SampleProvider* val_ptr = val.size() > 0 ? &val : nullptr;

    ParamStore params = init_params<float>(rc.model);
    FitConfig fc = to_fit_config(rc);
    if (fc.keep_best) fc.best_path = (fs::path(out_dir) / "best.ckpt").string();

    std::cout << "training on " << train.size() << " samples (val " << val.size() << ", test "
              << test.size() << "), " << rc.epochs << " epochs\n";
    const std::vector<TrainRecord> records =
        fit(params, rc.model, train, val_ptr, fc, &std::cout);

    const std::string ckpt_path = (fs::path(out_dir) / "model.ckpt").string();
    save_checkpoint(params, rc.model, ckpt_path);
    write_curves_csv((fs::path(out_dir) / "curves.csv").string(), records);

    const EvalResult ev = evaluate_provider(params, rc.model, test, rc.batch_size);
    const ConfusionMatrix cm =
        confusion_matrix(ev.labels, ev.predictions, k, manifest.taxonomy.coarse_names);
    const MetricsReport report = build_report(cm, -1, config_digest(rc.model));
    emit_report_json(report, (fs::path(out_dir) / "metrics.json").string());
    emit_report_csv(report, (fs::path(out_dir) / "metrics.csv").string());

    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "train done: %d epochs, final train acc %.4f, test acc %.4f, kappa %.4f -> %s",
                  rc.epochs, records.empty() ? 0.0 : records.back().train_acc,
                  report.per_class.accuracy, report.kappa, out_dir.c_str());
    std::cout << buf << '\n';
    return kExitOk;
}

// ---- evaluate -----------------------------------------------------------

int cmd_evaluate(const std::string& ckpt_path, const std::string& data_root,
                 const std::string& kind, const std::string& taxonomy, double test_fraction,
                 bool no_split, int batch, int positive_class, const std::string& json_path,
                 const std::string& out_flag) {
    auto [params, cfg] = load_checkpoint(ckpt_path);

    DatasetManifest manifest = load_and_check(data_root, kind, taxonomy);
    const int k = static_cast<int>(manifest.taxonomy.coarse_names.size());
    if (k != cfg.num_classes)
        throw CheckpointError("checkpoint/config mismatch: checkpoint has " +
                              std::to_string(cfg.num_classes) + " classes ([" +
                              std::to_string(cfg.projection_dim) + "," +
                              std::to_string(cfg.num_classes) + "] head) but the dataset has " +
                              std::to_string(k));
    if (!no_split) {
        if (test_fraction <= 0) {
            test_fraction = 0.2;
            if (!kind.empty() && parse_kind(kind) == DatasetKind::herlev) test_fraction = 0.1;
        }
        split_manifest(manifest, test_fraction, cfg.seed);
    }
    const ManifestProvider data(manifest, no_split ? Split::train : Split::test,
                                cfg.image_size);
    std::cout << "evaluating " << data.size() << " samples\n";

    const EvalResult ev = evaluate_provider(params, cfg, data, batch);
    const ConfusionMatrix cm =
        confusion_matrix(ev.labels, ev.predictions, k, manifest.taxonomy.coarse_names);
    const MetricsReport report = build_report(cm, positive_class, config_digest(cfg));
    print_report(std::cout, report);

    std::string json_out = json_path;
    if (json_out.empty() && !out_flag.empty())
        json_out = (fs::path(resolve_out_dir(out_flag)) / "metrics.json").string();
    if (!json_out.empty()) {
        ensure_dir(fs::path(json_out).parent_path().string());
        emit_report_json(report, json_out);
    }
    return kExitOk;
}

// ---- predict ------------------------------------------------------------

int cmd_predict(const std::string& ckpt_path, const std::string& kind,
                const std::vector<std::string>& images) {
    auto [params, cfg] = load_checkpoint(ckpt_path);
    std::vector<std::string> names = class_names_for(kind, cfg.num_classes);
    if (names.empty())
        for (int i = 0; i < cfg.num_classes; ++i) names.push_back("class" + std::to_string(i));

    size_t failures = 0;
    for (const std::string& path : images) {
        try {
            const Tensor img = resize(load_image(path), cfg.image_size);
            Tensor batch = img.with_shape({1, cfg.image_size, cfg.image_size, cfg.channels});
            const Tensor logits = forward(batch, params, cfg, Mode::eval);
            const Tensor probs = softmax(logits, 1);
            int best = 0;
            for (int i = 1; i < cfg.num_classes; ++i)
                if (probs.data()[i] > probs.data()[best]) best = i;
            std::ostringstream line;
            line << path << '\t' << names[size_t(best)] << '\t';
            for (int i = 0; i < cfg.num_classes; ++i) {
                char buf[24];
                std::snprintf(buf, sizeof(buf), "%s%s=%.6f", i ? " " : "", names[size_t(i)].c_str(),
                              double(probs.data()[i]));
                line << buf;
            }
            std::cout << line.str() << '\n';
        } catch (const Error& e) {
            ++failures;
            std::cerr << "predict: " << path << ": " << e.what() << '\n';
        }
    }
    return failures == images.size() ? kExitInput : kExitOk;
}

// ---- bench --------------------------------------------------------------

int cmd_bench(const std::vector<int64_t>& ms, int64_t n, int64_t l, int64_t d,
              const std::string& out_path, bool no_time) {
    if (ms.empty()) throw ArgumentError("bench: at least one M value required");
    for (int64_t m : ms)
        if (m < 1) throw ArgumentError("bench: M values must be >= 1");
    if (n < 1 || l < 1 || d < 1) throw ArgumentError("bench: N, L and D must be >= 1");

    std::vector<BenchRow> rows;
    for (int64_t m : ms) rows.push_back(bench_row(m, n, l, d, !no_time));
    if (out_path.empty()) {
        write_bench_csv(std::cout, rows);
    } else {
        std::ofstream os(out_path);
        if (!os) throw IoError("cannot open " + out_path + " for writing");
        write_bench_csv(os, rows);
    }
    return kExitOk;
}

// ---- selftest / synth ---------------------------------------------------

int cmd_selftest(const std::string& perturb) {
    const std::vector<SelftestResult> results = run_selftest(perturb);
    size_t width = 0;
    for (const auto& r : results) width = std::max(width, r.name.size());
    for (const auto& r : results)
        std::cout << (r.passed ? "PASS  " : "FAIL  ") << std::left
                  << std::setw(int(width) + 2) << r.name << r.detail << '\n';
    const size_t failed =
        size_t(std::count_if(results.begin(), results.end(),
                             [](const SelftestResult& r) { return !r.passed; }));
    std::cout << results.size() - failed << "/" << results.size() << " checks passed\n";
    return failed == 0 ? kExitOk : kExitSelftest;
}

int cmd_synth(const std::string& out, int classes, int per_class, int size, uint64_t seed) {
    SynthSpec spec;
    spec.classes = classes;
    spec.per_class = per_class;
    spec.image_size = size;
    spec.seed = seed;
    generate_synth_dataset(spec, out);
    std::cout << "wrote " << classes * per_class << " images (" << classes << " classes) to "
              << out << '\n';
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "latent-bottleneck transformer image classifier\n"
        "Environment: LBT_OUT_DIR sets the default output directory; "
        "LBT_KERNELS=scalar|avx2 forces a compute-kernel variant."};
    app.require_subcommand(1);

    // train
    std::string config_path, out_flag;
    std::vector<std::string> overrides;
    int64_t seed_flag = -1;
    auto* train = app.add_subcommand("train", "train a model and write checkpoint + reports");
    train->add_option("--config", config_path, "key = value config file");
    train->add_option("--seed", seed_flag, "override the run seed");
    train->add_option("--out", out_flag, "output directory");
    train->add_option("--override", overrides, "extra key=value settings (repeatable)");

    // evaluate
    std::string ckpt_path, data_root, kind, taxonomy, json_path;
    double test_fraction = -1;
    bool no_split = false;
    int batch = 32, positive_class = -1;
    auto* evaluate = app.add_subcommand("evaluate", "run a checkpoint over a dataset's test split");
    evaluate->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    evaluate->add_option("--data", data_root, "dataset root directory")->required();
    evaluate->add_option("--kind", kind, "sipakmed | herlev | custom")->default_val("custom");
    evaluate->add_option("--taxonomy", taxonomy, "taxonomy file for custom datasets");
    evaluate->add_option("--test-fraction", test_fraction,
                         "held-out fraction (default: dataset kind's)");
    evaluate->add_flag("--no-split", no_split, "evaluate every sample instead of the test split");
    evaluate->add_option("--batch", batch, "evaluation batch size");
    evaluate->add_option("--positive-class", positive_class,
                         "screening-positive class index (binary tasks)");
    evaluate->add_option("--json", json_path, "also write the report JSON here");
    evaluate->add_option("--out", out_flag, "directory for metrics.json");

    // predict
    std::vector<std::string> images;
    auto* predict = app.add_subcommand("predict", "classify image files");
    predict->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    predict->add_option("--kind", kind, "dataset kind for class names");
    predict->add_option("images", images, "image files")->required();

    // bench
    std::vector<int64_t> bench_m = {64, 128, 256, 512, 1296};
    int64_t bench_n = 256, bench_l = 4, bench_d = 256;
    bool no_time = false;
    auto* bench = app.add_subcommand("bench", "attention cost scaling vs data-array length");
    bench->add_option("--m", bench_m, "data-array lengths M (comma separated)")
        ->delimiter(',');
    bench->add_option("--n", bench_n, "latent length N");
    bench->add_option("--l", bench_l, "latent transformer depth L");
    bench->add_option("--d", bench_d, "model width D");
    bench->add_option("--out", out_flag, "write CSV here instead of stdout");
    bench->add_flag("--no-time", no_time, "skip wall-clock measurement");

    // selftest
    std::string perturb;
    auto* selftest = app.add_subcommand("selftest", "gradient checks, invariants and oracles");
    selftest
        ->add_option("--perturb", perturb,
                     "negative control: corrupt the named gradient check so it must fail")
        ->default_val("");

    // synth
    std::string synth_out = "synth_data";
    int synth_classes = 2, synth_per_class = 100, synth_size = 32;
    uint64_t synth_seed = 1;
    auto* synth = app.add_subcommand("synth", "generate a separable synthetic image dataset");
    synth->add_option("--out", synth_out, "output directory");
    synth->add_option("--classes", synth_classes, "number of classes");
    synth->add_option("--per-class", synth_per_class, "images per class");
    synth->add_option("--size", synth_size, "square image size");
    synth->add_option("--seed", synth_seed, "generator seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (const char* env = std::getenv("LBT_KERNELS"); env && *env) kernels::select(env);

        if (train->parsed()) {
            if (seed_flag >= 0) overrides.push_back("seed=" + std::to_string(seed_flag));
            if (!out_flag.empty()) overrides.push_back("out_dir=" + out_flag);
            return cmd_train(config_path, std::move(overrides));
        }
        if (evaluate->parsed())
            return cmd_evaluate(ckpt_path, data_root, kind, taxonomy, test_fraction, no_split,
                                batch, positive_class, json_path, out_flag);
        if (predict->parsed()) return cmd_predict(ckpt_path, kind, images);
        if (bench->parsed())
            return cmd_bench(bench_m, bench_n, bench_l, bench_d, out_flag, no_time);
        if (selftest->parsed()) return cmd_selftest(perturb);
        if (synth->parsed())
            return cmd_synth(synth_out, synth_classes, synth_per_class, synth_size, synth_seed);
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCheckpoint;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    }
    return kExitOk;
}
