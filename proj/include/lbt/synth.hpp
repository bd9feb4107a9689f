#pragma once

// Deterministic synthetic image datasets for smoke tests and demos.
//
// Each class is assigned a distinct hue; every sample is a filled disc of
// that hue (with slight per-sample jitter in position, radius and shade)
// on a noisy gray background.  Classes are well separated in mean color,
// so a small classifier should reach high accuracy quickly.

#include <cstdint>
#include <string>
#include <vector>

#include "lbt/tensor.hpp"

namespace lbt {

struct SynthSpec {
    int classes = 2;
    int per_class = 100;
    int image_size = 32;
    uint64_t seed = 1;
};

// In-memory samples: images[i] is [S,S,3] in [0,1], labels[i] in [0, classes).
struct SynthData {
    std::vector<Tensor> images;
    std::vector<int64_t> labels;
};

SynthData synth_samples(const SynthSpec& spec);

// Writes root/class_<c>/img_<i>.bmp for every sample plus root/taxonomy.txt
// mapping each class directory to itself, so the tree loads as a manifest.
void generate_synth_dataset(const SynthSpec& spec, const std::string& root);

} // namespace lbt
