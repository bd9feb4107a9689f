#include "lbt/runconfig.hpp"

#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lbt/dataio.hpp"

namespace lbt {

namespace {

using nlohmann::json;

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        // model
        "image_size", "patch_size", "channels", "projection_dim", "latent_len", "num_heads",
        "latent_layers", "repeats", "share_weights", "dropout", "num_classes", "seed",
        // optimizer
        "lr", "weight_decay", "beta1", "beta2", "eps", "clamp_lo", "clamp_hi",
        // training loop
        "epochs", "batch_size", "augment", "keep_best",
        // data
        "data_root", "dataset_kind", "taxonomy_file", "test_fraction", "val_fraction",
        // output
        "out_dir"};
    return keys;
}

std::string strip(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

// JSON literal, or a bare word taken as a string.
json parse_value(const std::string& raw, const std::string& where) {
    const std::string v = strip(raw);
    if (v.empty()) throw ConfigError(where + ": empty value");
    try {
        return json::parse(v);
    } catch (const json::exception&) {
        return json(v);
    }
}

void check_key(const std::string& key, const std::string& where) {
    if (!known_keys().count(key))
        throw ConfigError(where + ": unknown key \"" + key + "\"");
}

std::map<std::string, json> parse_config_file(const std::string& path) {
    std::map<std::string, json> out;
    const std::string text = read_file(path);
    std::istringstream lines(text);
    std::string line;
    int lineno = 0;
    while (std::getline(lines, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        if (strip(line).empty()) continue;
        const size_t eq = line.find('=');
        const std::string where = path + ":" + std::to_string(lineno);
        if (eq == std::string::npos)
            throw ConfigError(where + ": expected \"key = value\"");
        const std::string key = strip(line.substr(0, eq));
        check_key(key, where);
        if (out.count(key)) throw ConfigError(where + ": duplicate key \"" + key + "\"");
        out[key] = parse_value(line.substr(eq + 1), where);
    }
    return out;
}

std::map<std::string, json> parse_overrides(std::span<const std::string> overrides) {
    std::map<std::string, json> out;
    for (const std::string& o : overrides) {
        const size_t eq = o.find('=');
        const std::string where = "override \"" + o + "\"";
        if (eq == std::string::npos) throw ConfigError(where + ": expected key=value");
        const std::string key = strip(o.substr(0, eq));
        check_key(key, where);
        out[key] = parse_value(o.substr(eq + 1), where);
    }
    return out;
}

class Resolver {
public:
    Resolver(std::map<std::string, json> file, std::map<std::string, json> over)
        : file_(std::move(file)), over_(std::move(over)) {}

    void add_kind_default(const std::string& key, json v) { kind_[key] = std::move(v); }

    const json* find(const std::string& key) const {
        for (const auto* m : {&over_, &file_, &kind_})
            if (const auto it = m->find(key); it != m->end()) return &it->second;
        return nullptr;
    }

    bool set_by_user(const std::string& key) const {
        return over_.count(key) || file_.count(key);
    }

    template <typename T>
    void get(const std::string& key, T& into) const {
        const json* v = find(key);
        if (!v) return;
        try {
            into = v->get<T>();
        } catch (const json::exception&) {
            throw ConfigError("key \"" + key + "\": cannot read " + v->dump() + " as " +
                              type_name<T>());
        }
    }

private:
    template <typename T>
    static const char* type_name() {
        if constexpr (std::is_same_v<T, bool>) return "a boolean";
        else if constexpr (std::is_integral_v<T>) return "an integer";
        else if constexpr (std::is_floating_point_v<T>) return "a number";
        else return "a string";
    }

    std::map<std::string, json> file_, over_, kind_;
};

} // namespace

RunConfig resolve_run_config(const std::string& config_path,
                             std::span<const std::string> overrides) {
    std::map<std::string, json> file;
    if (!config_path.empty()) file = parse_config_file(config_path);
    Resolver r(std::move(file), parse_overrides(overrides));

    // Dataset-kind defaults fill any gap the user left.
    std::string kind;
    if (const json* v = r.find("dataset_kind")) kind = v->get<std::string>();
    if (!kind.empty()) {
        switch (parse_kind(kind)) {
            case DatasetKind::sipakmed:
                r.add_kind_default("image_size", 224);
                r.add_kind_default("patch_size", 14);
                r.add_kind_default("num_classes", 3);
                r.add_kind_default("test_fraction", 0.2);
                break;
            case DatasetKind::herlev:
                r.add_kind_default("image_size", 72);
                r.add_kind_default("patch_size", 2);
                r.add_kind_default("num_classes", 2);
                r.add_kind_default("test_fraction", 0.1);
                break;
            case DatasetKind::custom:
                break;
        }
    }

    RunConfig rc;
    rc.dataset_kind = kind;
    r.get("image_size", rc.model.image_size);
    r.get("patch_size", rc.model.patch_size);
    r.get("channels", rc.model.channels);
    r.get("projection_dim", rc.model.projection_dim);
    r.get("latent_len", rc.model.latent_len);
    r.get("num_heads", rc.model.num_heads);
    r.get("latent_layers", rc.model.latent_layers);
    r.get("repeats", rc.model.repeats);
    r.get("share_weights", rc.model.share_weights);
    r.get("dropout", rc.model.dropout);
    r.get("num_classes", rc.model.num_classes);
    r.get("seed", rc.model.seed);
    r.get("lr", rc.lamb.lr);
    r.get("weight_decay", rc.lamb.weight_decay);
    r.get("beta1", rc.lamb.beta1);
    r.get("beta2", rc.lamb.beta2);
    r.get("eps", rc.lamb.eps);
    r.get("clamp_lo", rc.lamb.clamp_lo);
    r.get("clamp_hi", rc.lamb.clamp_hi);
    r.get("epochs", rc.epochs);
    r.get("batch_size", rc.batch_size);
    r.get("augment", rc.augment);
    r.get("keep_best", rc.keep_best);
    r.get("data_root", rc.data_root);
    r.get("taxonomy_file", rc.taxonomy_file);
    r.get("test_fraction", rc.test_fraction);
    r.get("val_fraction", rc.val_fraction);
    r.get("out_dir", rc.out_dir);

    rc.model.validate();
    if (rc.epochs <= 0 || rc.batch_size <= 0)
        throw ConfigError("epochs and batch_size must be positive");
    if (!(rc.test_fraction > 0.0 && rc.test_fraction < 1.0))
        throw ConfigError("test_fraction must be in (0,1), got " +
                          std::to_string(rc.test_fraction));
    if (rc.val_fraction < 0.0 || rc.val_fraction >= 1.0)
        throw ConfigError("val_fraction must be in [0,1), got " +
                          std::to_string(rc.val_fraction));
    return rc;
}

FitConfig to_fit_config(const RunConfig& rc) {
    FitConfig fc;
    fc.epochs = rc.epochs;
    fc.batch_size = rc.batch_size;
    fc.lamb = rc.lamb;
    fc.seed = rc.model.seed;
    fc.augment = rc.augment;
    fc.keep_best = rc.keep_best;
    return fc;
}

} // namespace lbt
