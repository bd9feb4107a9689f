#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lbt/tensor.hpp"

namespace lbt {

// ---- image codecs -------------------------------------------------------
// Images are Tensor[H,W,3], RGB, values in [0,1].

// Supported: 24-bit uncompressed BMP; 8-bit RGB/RGBA PNG (alpha dropped).
// Anything else raises DecodeError naming the format.
Tensor decode_image(std::span<const uint8_t> bytes);

std::string encode_bmp(const Tensor& image); // 24-bit, bottom-up rows
std::string encode_png(const Tensor& image); // 8-bit RGB, zlib-compressed

Tensor load_image(const std::string& path);
void save_bmp(const std::string& path, const Tensor& image);
void save_png(const std::string& path, const Tensor& image);

// ---- geometry -----------------------------------------------------------

// Bilinear, half-pixel-aligned sample centers; same-size resize is an exact
// identity and outputs stay within the input value range.
Tensor resize_bilinear(const Tensor& image, int64_t out_h, int64_t out_w);
Tensor resize(const Tensor& image, int target); // square target

// Training augmentation: horizontal flip with probability 1/2, then an
// independent zoom factor per axis drawn uniformly from [-0.2, 0.2]
// (zoom-in = center crop + resize up; zoom-out = resize down + centered
// reflect padding). Exactly three rng draws, so outputs replay bit-identically
// from the same generator state.
Tensor augment(const Tensor& image, Rng& rng);

// ---- dataset manifest ---------------------------------------------------

enum class DatasetKind { sipakmed, herlev, custom };

DatasetKind parse_kind(const std::string& name); // throws ArgumentError
std::string kind_name(DatasetKind kind);

struct Taxonomy {
    std::vector<std::string> fine_names;
    std::vector<std::string> coarse_names;
    std::vector<int> fine_to_coarse; // index aligned with fine_names
};

// Five fine cervical-cell classes mapping onto Normal/Abnormal/Benign.
Taxonomy sipakmed_taxonomy();
// Seven fine classes mapping onto Normal/Abnormal.
Taxonomy herlev_taxonomy();
// Plain-text lines "fine_name,coarse_name"; fine order = file order.
Taxonomy load_taxonomy_file(const std::string& path);

enum class Split : int { train = 0, test = 1 };

struct SampleRef {
    std::string path;
    int fine = 0;
    int coarse = 0;
    Split split = Split::train;
};

struct DatasetManifest {
    DatasetKind kind = DatasetKind::custom;
    Taxonomy taxonomy;
    std::vector<SampleRef> samples;
    bool split_done = false;
    double test_fraction = 0.0;
    uint64_t split_seed = 0;
    std::vector<std::string> warnings; // e.g. fine classes with no images
};

// Scans <root>/<fine_class_dir>/*.bmp|*.png. Directory names are matched
// case-insensitively after normalization (and for sipakmed an optional "im_"
// prefix is accepted); unknown directories raise TaxonomyError. For custom
// kind the taxonomy file defaults to <root>/taxonomy.txt.
DatasetManifest load_manifest(const std::string& root, DatasetKind kind,
                              const std::string& taxonomy_file = "");

// Stratified by fine class: overall train size floor((1-test_fraction)*total),
// allocated across classes by largest fractional remainder with at least one
// sample of every class in each split. Deterministic per seed.
void split_manifest(DatasetManifest& m, double test_fraction, uint64_t seed);

void export_manifest_json(const DatasetManifest& m, const std::string& path);

std::vector<int64_t> class_counts_fine(const DatasetManifest& m);
std::vector<int64_t> class_counts_coarse(const DatasetManifest& m);
int64_t split_count(const DatasetManifest& m, Split s);

// ---- sample providers ---------------------------------------------------

// Batch assembly interface for training/evaluation. get() must be pure given
// (index, augment, rng state) so parallel prefetch cannot change results.
class SampleProvider {
public:
    virtual ~SampleProvider() = default;
    virtual int64_t size() const = 0;
    virtual int num_classes() const = 0;
    // image [S,S,3] in [0,1] plus its integer label
    virtual std::pair<Tensor, int64_t> get(int64_t index, bool augment, Rng& rng) const = 0;
};

// In-memory images + labels (synthetic data, tests).
class VectorProvider : public SampleProvider {
public:
    VectorProvider(std::vector<Tensor> images, std::vector<int64_t> labels, int num_classes);
    int64_t size() const override { return static_cast<int64_t>(images_.size()); }
    int num_classes() const override { return num_classes_; }
    std::pair<Tensor, int64_t> get(int64_t index, bool augment, Rng& rng) const override;

private:
    std::vector<Tensor> images_;
    std::vector<int64_t> labels_;
    int num_classes_;
};

// Decodes and resizes manifest samples of one split on demand; labels are the
// coarse categories.
class ManifestProvider : public SampleProvider {
public:
    ManifestProvider(const DatasetManifest& m, Split split, int image_size);
    int64_t size() const override { return static_cast<int64_t>(indices_.size()); }
    int num_classes() const override;
    std::pair<Tensor, int64_t> get(int64_t index, bool augment, Rng& rng) const override;
    const SampleRef& ref(int64_t index) const;

private:
    const DatasetManifest* manifest_;
    std::vector<size_t> indices_;
    int image_size_;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

} // namespace lbt
