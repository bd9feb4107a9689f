#include "lbt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "lbt/dataio.hpp"
#include "lbt/error.hpp"
#include "lbt/rng.hpp"

namespace lbt {

namespace {

// Hue in [0,1) to fully saturated RGB in [0,1].
void hue_to_rgb(double h, double rgb[3]) {
    const double x = h * 6.0;
    rgb[0] = std::clamp(std::abs(x - 3.0) - 1.0, 0.0, 1.0);
    rgb[1] = std::clamp(2.0 - std::abs(x - 2.0), 0.0, 1.0);
    rgb[2] = std::clamp(2.0 - std::abs(x - 4.0), 0.0, 1.0);
}

Tensor synth_image(int size, int cls, int classes, Rng rng) {
    Tensor img({size, size, 3});
    float* p = img.data();
    for (int64_t i = 0; i < img.numel(); ++i) p[i] = float(rng.uniform(0.35, 0.65));

    double rgb[3];
    hue_to_rgb(double(cls) / double(classes), rgb);
    const double shade = rng.uniform(0.85, 1.0);
    const double cx = size * rng.uniform(0.40, 0.60);
    const double cy = size * rng.uniform(0.40, 0.60);
    const double radius = size * rng.uniform(0.28, 0.38);
    const double r2 = radius * radius;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double dx = x + 0.5 - cx;
            const double dy = y + 0.5 - cy;
            if (dx * dx + dy * dy > r2) continue;
            float* px = p + (int64_t(y) * size + x) * 3;
            for (int c = 0; c < 3; ++c) px[c] = float(rgb[c] * shade);
        }
    }
    return img;
}

} // namespace

SynthData synth_samples(const SynthSpec& spec) {
    if (spec.classes < 2) throw ArgumentError("synth: need at least 2 classes");
    if (spec.per_class < 1 || spec.image_size < 4)
        throw ArgumentError("synth: per_class must be >=1 and image_size >=4");
    SynthData out;
    Rng base(spec.seed);
    for (int c = 0; c < spec.classes; ++c) {
        Rng cls_rng = base.fork(uint64_t(c));
        for (int i = 0; i < spec.per_class; ++i) {
            out.images.push_back(
                synth_image(spec.image_size, c, spec.classes, cls_rng.fork(uint64_t(i))));
            out.labels.push_back(c);
        }
    }
    return out;
}

void generate_synth_dataset(const SynthSpec& spec, const std::string& root) {
    const SynthData data = synth_samples(spec);
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create directory " + root + ": " + ec.message());

    std::string taxonomy;
    size_t idx = 0;
    for (int c = 0; c < spec.classes; ++c) {
        const std::string cls = "class_" + std::to_string(c);
        taxonomy += cls + "," + cls + "\n";
        const fs::path dir = fs::path(root) / cls;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
        for (int i = 0; i < spec.per_class; ++i, ++idx)
            save_bmp((dir / ("img_" + std::to_string(i) + ".bmp")).string(), data.images[idx]);
    }
    write_file((fs::path(root) / "taxonomy.txt").string(), taxonomy);
}

} // namespace lbt
