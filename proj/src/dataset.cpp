#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lbt/dataio.hpp"

namespace fs = std::filesystem;

namespace lbt {

namespace {

// Lowercase, non-alphanumerics collapsed to single underscores, trimmed.
std::string normalize_name(std::string_view s) {
    std::string out;
    for (const char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        else if (!out.empty() && out.back() != '_')
            out.push_back('_');
    }
    while (!out.empty() && out.back() == '_') out.pop_back();
    return out;
}

// Accepted directory spellings per fine class, normalized.
struct FineAlias {
    std::string canonical;
    std::vector<std::string> aliases;
};

const std::vector<FineAlias>& sipakmed_aliases() {
    static const std::vector<FineAlias> a = {
        {"parabasal", {"parabasal"}},
        {"superficial_intermediate", {"superficial_intermediate"}},
        {"dyskeratotic", {"dyskeratotic"}},
        {"koilocytotic", {"koilocytotic"}},
        {"metaplastic", {"metaplastic"}},
    };
    return a;
}

const std::vector<FineAlias>& herlev_aliases() {
    static const std::vector<FineAlias> a = {
        {"superficial_squamous_epithelial", {"superficial_squamous_epithelial",
                                             "normal_superficiel", "normal_superficial"}},
        {"intermediate_squamous_epithelial", {"intermediate_squamous_epithelial",
                                              "normal_intermediate"}},
        {"columnar_epithelial", {"columnar_epithelial", "normal_columnar"}},
        {"mild_squamous_non_keratinizing_dysplasia",
         {"mild_squamous_non_keratinizing_dysplasia", "light_dysplastic", "mild_dysplasia"}},
        {"moderate_squamous_non_keratinizing_dysplasia",
         {"moderate_squamous_non_keratinizing_dysplasia", "moderate_dysplastic",
          "moderate_dysplasia"}},
        {"severe_squamous_non_keratinizing_dysplasia",
         {"severe_squamous_non_keratinizing_dysplasia", "severe_dysplastic",
          "severe_dysplasia"}},
        {"squamous_cell_carcinoma_in_situ_intermediate",
         {"squamous_cell_carcinoma_in_situ_intermediate", "carcinoma_in_situ"}},
    };
    return a;
}

bool has_image_ext(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return ext == ".bmp" || ext == ".png";
}

// Maps a directory name to a fine-class index, or -1.
int match_fine(const Taxonomy& tax, const std::vector<FineAlias>* aliases, DatasetKind kind,
               const std::string& dir_name) {
    std::string norm = normalize_name(dir_name);
    if (kind == DatasetKind::sipakmed && norm.starts_with("im_")) norm = norm.substr(3);
    if (aliases) {
        for (size_t i = 0; i < aliases->size(); ++i)
            for (const std::string& a : (*aliases)[i].aliases)
                if (norm == a) return static_cast<int>(i);
        return -1;
    }
    for (size_t i = 0; i < tax.fine_names.size(); ++i)
        if (norm == normalize_name(tax.fine_names[i])) return static_cast<int>(i);
    return -1;
}

} // namespace

DatasetKind parse_kind(const std::string& name) {
    const std::string n = normalize_name(name);
    if (n == "sipakmed") return DatasetKind::sipakmed;
    if (n == "herlev") return DatasetKind::herlev;
    if (n == "custom") return DatasetKind::custom;
    throw ArgumentError("unknown dataset kind \"" + name +
                        "\" (expected sipakmed, herlev or custom)");
}

std::string kind_name(DatasetKind kind) {
    switch (kind) {
        case DatasetKind::sipakmed: return "sipakmed";
        case DatasetKind::herlev: return "herlev";
        case DatasetKind::custom: return "custom";
    }
    return "custom";
}

Taxonomy sipakmed_taxonomy() {
    Taxonomy t;
    t.coarse_names = {"Normal", "Abnormal", "Benign"};
    t.fine_names = {"Parabasal", "Superficial-Intermediate", "Dyskeratotic", "Koilocytotic",
                    "Metaplastic"};
    t.fine_to_coarse = {0, 0, 1, 1, 2};
    return t;
}

Taxonomy herlev_taxonomy() {
    Taxonomy t;
    t.coarse_names = {"Normal", "Abnormal"};
    t.fine_names = {"Superficial squamous epithelial", "Intermediate squamous epithelial",
                    "Columnar epithelial", "Mild squamous non-keratinizing dysplasia",
                    "Moderate squamous non-keratinizing dysplasia",
                    "Severe squamous non-keratinizing dysplasia",
                    "Squamous cell carcinoma in situ intermediate"};
    t.fine_to_coarse = {0, 0, 0, 1, 1, 1, 1};
    return t;
}

Taxonomy load_taxonomy_file(const std::string& path) {
    const std::string text = read_file(path);
    Taxonomy t;
    std::istringstream lines(text);
    std::string line;
    int lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::string trimmed = normalize_name(line); // just to test emptiness
        if (trimmed.empty()) continue;
        const size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw TaxonomyError("taxonomy file " + path + " line " + std::to_string(lineno) +
                                ": expected \"fine_name,coarse_name\"");
        auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string fine = strip(line.substr(0, comma));
        const std::string coarse = strip(line.substr(comma + 1));
        if (fine.empty() || coarse.empty())
            throw TaxonomyError("taxonomy file " + path + " line " + std::to_string(lineno) +
                                ": empty class name");
        for (const std::string& existing : t.fine_names)
            if (normalize_name(existing) == normalize_name(fine))
                throw TaxonomyError("taxonomy file " + path + ": duplicate fine class \"" +
                                    fine + "\"");
        int coarse_id = -1;
        for (size_t i = 0; i < t.coarse_names.size(); ++i)
            if (normalize_name(t.coarse_names[i]) == normalize_name(coarse))
                coarse_id = static_cast<int>(i);
        if (coarse_id < 0) {
            coarse_id = static_cast<int>(t.coarse_names.size());
            t.coarse_names.push_back(coarse);
        }
        t.fine_names.push_back(fine);
        t.fine_to_coarse.push_back(coarse_id);
    }
    if (t.fine_names.empty())
        throw TaxonomyError("taxonomy file " + path + " defines no classes");
    return t;
}

DatasetManifest load_manifest(const std::string& root, DatasetKind kind,
                              const std::string& taxonomy_file) {
    if (!fs::is_directory(root)) throw IoError("dataset root is not a directory: " + root);

    DatasetManifest m;
    m.kind = kind;
    const std::vector<FineAlias>* aliases = nullptr;
    switch (kind) {
        case DatasetKind::sipakmed:
            m.taxonomy = sipakmed_taxonomy();
            aliases = &sipakmed_aliases();
            break;
        case DatasetKind::herlev:
            m.taxonomy = herlev_taxonomy();
            aliases = &herlev_aliases();
            break;
        case DatasetKind::custom: {
            const std::string tf =
                taxonomy_file.empty() ? (fs::path(root) / "taxonomy.txt").string() : taxonomy_file;
            m.taxonomy = load_taxonomy_file(tf);
            break;
        }
    }

    std::vector<fs::path> dirs;
    for (const fs::directory_entry& e : fs::directory_iterator(root))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());

    std::vector<int64_t> per_fine(m.taxonomy.fine_names.size(), 0);
    for (const fs::path& dir : dirs) {
        const int fine = match_fine(m.taxonomy, aliases, kind, dir.filename().string());
        if (fine < 0)
            throw TaxonomyError("directory \"" + dir.filename().string() +
                                "\" is not a known " + kind_name(kind) + " class");
        std::vector<fs::path> files;
        for (const fs::directory_entry& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && has_image_ext(e.path())) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const fs::path& f : files) {
            m.samples.push_back({f.string(), fine, m.taxonomy.fine_to_coarse[fine],
                                 Split::train});
            ++per_fine[static_cast<size_t>(fine)];
        }
    }
    for (size_t i = 0; i < per_fine.size(); ++i)
        if (per_fine[i] == 0)
            m.warnings.push_back("fine class \"" + m.taxonomy.fine_names[i] + "\" has no images");
    return m;
}

void split_manifest(DatasetManifest& m, double test_fraction, uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ArgumentError("test_fraction must be in (0,1), got " +
                            std::to_string(test_fraction));
    if (m.samples.empty()) throw ArgumentError("cannot split an empty manifest");

    const size_t num_fine = m.taxonomy.fine_names.size();
    std::vector<std::vector<size_t>> members(num_fine);
    for (size_t i = 0; i < m.samples.size(); ++i)
        members[static_cast<size_t>(m.samples[i].fine)].push_back(i);

    const int64_t total = static_cast<int64_t>(m.samples.size());
    const double train_frac = 1.0 - test_fraction;
    const int64_t train_total = static_cast<int64_t>(std::floor(train_frac * total));

    // Largest-remainder allocation of train_total across the (non-empty)
    // classes, keeping at least one sample of each on both sides.
    struct Quota {
        size_t cls;
        int64_t n;
        int64_t take;
        double remainder;
    };
    std::vector<Quota> quotas;
    int64_t base_sum = 0;
    for (size_t c = 0; c < num_fine; ++c) {
        const int64_t n = static_cast<int64_t>(members[c].size());
        if (n == 0) continue;
        if (n < 2)
            throw ArgumentError("fine class \"" + m.taxonomy.fine_names[c] +
                                "\" has only " + std::to_string(n) +
                                " sample(s); stratified splitting needs at least 2");
        const double q = train_frac * static_cast<double>(n);
        int64_t base = static_cast<int64_t>(std::floor(q));
        base = std::clamp<int64_t>(base, 1, n - 1);
        quotas.push_back({c, n, base, q - std::floor(q)});
        base_sum += base;
    }

    int64_t diff = train_total - base_sum;
    if (diff > 0) {
        std::vector<size_t> order(quotas.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&quotas](size_t a, size_t b) {
            return quotas[a].remainder > quotas[b].remainder;
        });
        for (size_t i = 0; diff > 0; i = (i + 1) % order.size()) {
            Quota& q = quotas[order[i]];
            if (q.take < q.n - 1) {
                ++q.take;
                --diff;
            } else if (i + 1 == order.size()) {
                break; // every class at its cap; cannot allocate further
            }
        }
    } else if (diff < 0) {
        std::vector<size_t> order(quotas.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&quotas](size_t a, size_t b) {
            return quotas[a].remainder < quotas[b].remainder;
        });
        for (size_t i = 0; diff < 0; i = (i + 1) % order.size()) {
            Quota& q = quotas[order[i]];
            if (q.take > 1) {
                --q.take;
                ++diff;
            } else if (i + 1 == order.size()) {
                break;
            }
        }
    }

    const Rng base(seed);
    for (const Quota& q : quotas) {
        std::vector<size_t>& idx = members[q.cls];
        Rng stream = base.fork(0x5B117).fork(static_cast<uint64_t>(q.cls));
        stream.shuffle(idx);
        for (size_t i = 0; i < idx.size(); ++i)
            m.samples[idx[i]].split =
                static_cast<int64_t>(i) < q.take ? Split::train : Split::test;
    }
    m.split_done = true;
    m.test_fraction = test_fraction;
    m.split_seed = seed;
}

void export_manifest_json(const DatasetManifest& m, const std::string& path) {
    nlohmann::json j;
    j["kind"] = kind_name(m.kind);
    j["taxonomy"] = {{"fine", m.taxonomy.fine_names},
                     {"coarse", m.taxonomy.coarse_names},
                     {"fine_to_coarse", m.taxonomy.fine_to_coarse}};
    j["split_done"] = m.split_done;
    j["test_fraction"] = m.test_fraction;
    j["split_seed"] = m.split_seed;
    j["warnings"] = m.warnings;
    nlohmann::json samples = nlohmann::json::array();
    for (const SampleRef& s : m.samples)
        samples.push_back({{"path", s.path},
                           {"fine", s.fine},
                           {"coarse", s.coarse},
                           {"split", s.split == Split::train ? "train" : "test"}});
    j["samples"] = std::move(samples);
    write_file(path, j.dump(2) + "\n");
}

std::vector<int64_t> class_counts_fine(const DatasetManifest& m) {
    std::vector<int64_t> counts(m.taxonomy.fine_names.size(), 0);
    for (const SampleRef& s : m.samples) ++counts[static_cast<size_t>(s.fine)];
    return counts;
}

std::vector<int64_t> class_counts_coarse(const DatasetManifest& m) {
    std::vector<int64_t> counts(m.taxonomy.coarse_names.size(), 0);
    for (const SampleRef& s : m.samples) ++counts[static_cast<size_t>(s.coarse)];
    return counts;
}

int64_t split_count(const DatasetManifest& m, Split s) {
    int64_t n = 0;
    for (const SampleRef& r : m.samples)
        if (r.split == s) ++n;
    return n;
}

// ---- providers ----------------------------------------------------------

VectorProvider::VectorProvider(std::vector<Tensor> images, std::vector<int64_t> labels,
                               int num_classes)
    : images_(std::move(images)), labels_(std::move(labels)), num_classes_(num_classes) {
    if (images_.size() != labels_.size())
        throw ArgumentError("VectorProvider: " + std::to_string(images_.size()) +
                            " images vs " + std::to_string(labels_.size()) + " labels");
    for (const int64_t l : labels_)
        if (l < 0 || l >= num_classes_)
            throw ArgumentError("VectorProvider: label " + std::to_string(l) +
                                " out of range [0," + std::to_string(num_classes_) + ")");
}

std::pair<Tensor, int64_t> VectorProvider::get(int64_t index, bool do_augment, Rng& rng) const {
    if (index < 0 || index >= size())
        throw IndexError("VectorProvider: index " + std::to_string(index) + " out of range");
    const Tensor& img = images_[static_cast<size_t>(index)];
    return {do_augment ? augment(img, rng) : img, labels_[static_cast<size_t>(index)]};
}

ManifestProvider::ManifestProvider(const DatasetManifest& m, Split split, int image_size)
    : manifest_(&m), image_size_(image_size) {
    if (!m.split_done && split == Split::test)
        throw StateError("ManifestProvider: manifest has no split assignment");
    for (size_t i = 0; i < m.samples.size(); ++i)
        if (!m.split_done || m.samples[i].split == split) indices_.push_back(i);
}

int ManifestProvider::num_classes() const {
    return static_cast<int>(manifest_->taxonomy.coarse_names.size());
}

const SampleRef& ManifestProvider::ref(int64_t index) const {
    return manifest_->samples[indices_[static_cast<size_t>(index)]];
}

std::pair<Tensor, int64_t> ManifestProvider::get(int64_t index, bool do_augment,
                                                 Rng& rng) const {
    if (index < 0 || index >= size())
        throw IndexError("ManifestProvider: index " + std::to_string(index) + " out of range");
    const SampleRef& s = ref(index);
    Tensor img = resize(load_image(s.path), image_size_);
    if (do_augment) img = augment(img, rng);
    return {std::move(img), s.coarse};
}

} // namespace lbt
