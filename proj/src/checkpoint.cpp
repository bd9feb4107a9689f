#include "lbt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace lbt {

namespace {

constexpr char kMagic[8] = {'L', 'B', 'T', 'C', 'K', 'P', 'T', '\n'};
constexpr uint8_t kVersion = 1;

uint64_t fnv1a(const uint8_t* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i64(std::string& out, int64_t v) { put_u64(out, static_cast<uint64_t>(v)); }

void put_f32(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

class Reader {
public:
    Reader(const uint8_t* data, size_t n) : data_(data), n_(n) {}

    const uint8_t* take(size_t n) {
        if (pos_ + n > n_) throw CheckpointError("checkpoint: truncated record");
        const uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    uint16_t u16() {
        const uint8_t* p = take(2);
        return static_cast<uint16_t>(p[0] | (p[1] << 8));
    }
    uint32_t u32() {
        const uint8_t* p = take(4);
        return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
               (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
    }
    uint64_t u64() {
        uint64_t v = 0;
        const uint8_t* p = take(8);
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
        return v;
    }
    int64_t i64() { return static_cast<int64_t>(u64()); }
    uint8_t u8() { return *take(1); }
    size_t remaining() const { return n_ - pos_; }

private:
    const uint8_t* data_;
    size_t n_;
    size_t pos_ = 0;
};

} // namespace

nlohmann::json config_to_json(const ModelConfig& cfg) {
    return nlohmann::json{{"image_size", cfg.image_size},
                          {"patch_size", cfg.patch_size},
                          {"channels", cfg.channels},
                          {"projection_dim", cfg.projection_dim},
                          {"latent_len", cfg.latent_len},
                          {"num_heads", cfg.num_heads},
                          {"latent_layers", cfg.latent_layers},
                          {"repeats", cfg.repeats},
                          {"share_weights", cfg.share_weights},
                          {"dropout", cfg.dropout},
                          {"num_classes", cfg.num_classes},
                          {"seed", cfg.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    try {
        cfg.image_size = j.at("image_size").get<int>();
        cfg.patch_size = j.at("patch_size").get<int>();
        cfg.channels = j.at("channels").get<int>();
        cfg.projection_dim = j.at("projection_dim").get<int>();
        cfg.latent_len = j.at("latent_len").get<int>();
        cfg.num_heads = j.at("num_heads").get<int>();
        cfg.latent_layers = j.at("latent_layers").get<int>();
        cfg.repeats = j.at("repeats").get<int>();
        cfg.share_weights = j.at("share_weights").get<bool>();
        cfg.dropout = j.at("dropout").get<double>();
        cfg.num_classes = j.at("num_classes").get<int>();
        cfg.seed = j.at("seed").get<uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint: bad config block: ") + e.what());
    }
    return cfg;
}

std::string config_digest(const ModelConfig& cfg) {
    const std::string dump = config_to_json(cfg).dump();
    const uint64_t h = fnv1a(reinterpret_cast<const uint8_t*>(dump.data()), dump.size());
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

void save_checkpoint(ParamStore& params, const ModelConfig& cfg, const std::string& path) {
    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    buf.push_back(static_cast<char>(kVersion));

    const std::string cfg_json = config_to_json(cfg).dump();
    put_u32(buf, static_cast<uint32_t>(cfg_json.size()));
    buf.append(cfg_json);

    const std::vector<NamedParam> named = named_params(params);
    put_u32(buf, static_cast<uint32_t>(named.size()));
    for (const NamedParam& np : named) {
        put_u16(buf, static_cast<uint16_t>(np.name.size()));
        buf.append(np.name);
        buf.push_back(static_cast<char>(np.tensor->rank()));
        for (const int64_t d : np.tensor->shape()) put_i64(buf, d);
        for (const float v : np.tensor->vec()) put_f32(buf, v);
    }
    put_u64(buf, fnv1a(reinterpret_cast<const uint8_t*>(buf.data()), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint: cannot open for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("checkpoint: write failed: " + path);
}

std::pair<ParamStore, ModelConfig> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    const uint8_t* bytes = reinterpret_cast<const uint8_t*>(buf.data());
    if (buf.size() < sizeof(kMagic) + 1 + 8 || std::memcmp(bytes, kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("checkpoint: bad magic (not a checkpoint file): " + path);
    // Digest first: nothing else is trusted until the byte stream checks out.
    const size_t body = buf.size() - 8;
    Reader tail(bytes + body, 8);
    if (tail.u64() != fnv1a(bytes, body))
        throw CheckpointError("checkpoint: digest mismatch (file truncated or corrupt): " + path);

    Reader r(bytes, body);
    r.take(sizeof(kMagic));
    const uint8_t version = r.u8();
    if (version != kVersion)
        throw CheckpointError("checkpoint: unknown format version " + std::to_string(version));

    const uint32_t cfg_len = r.u32();
    const uint8_t* cfg_bytes = r.take(cfg_len);
    nlohmann::json cfg_json;
    try {
        cfg_json = nlohmann::json::parse(cfg_bytes, cfg_bytes + cfg_len);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint: config JSON parse error: ") + e.what());
    }
    const ModelConfig cfg = config_from_json(cfg_json);

    ParamStore params = make_param_store<float>(cfg);
    std::vector<NamedParam> named = named_params(params);
    std::unordered_map<std::string, NamedParam*> by_name;
    for (NamedParam& np : named) by_name[np.name] = &np;

    const uint32_t count = r.u32();
    if (count != named.size())
        throw CheckpointError("checkpoint: has " + std::to_string(count) + " tensors, config implies " +
                              std::to_string(named.size()));
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = r.u16();
        const uint8_t* name_bytes = r.take(name_len);
        const std::string name(reinterpret_cast<const char*>(name_bytes), name_len);
        const uint8_t rank = r.u8();
        std::vector<int64_t> shape(rank);
        for (uint8_t d = 0; d < rank; ++d) shape[d] = r.i64();

        const auto it = by_name.find(name);
        if (it == by_name.end())
            throw CheckpointError("checkpoint: unexpected tensor \"" + name + "\"");
        NamedParam* np = it->second;
        if (!np) throw CheckpointError("checkpoint: duplicate tensor \"" + name + "\"");
        if (shape != np->tensor->shape())
            throw CheckpointError("checkpoint: tensor \"" + name + "\" has shape " +
                                  shape_str(shape) + ", config implies " +
                                  shape_str(np->tensor->shape()));
        const int64_t n = np->tensor->numel();
        const uint8_t* payload = r.take(static_cast<size_t>(n) * 4);
        float* dst = np->tensor->data();
        for (int64_t e = 0; e < n; ++e) {
            uint32_t bits = static_cast<uint32_t>(payload[4 * e]) |
                            (static_cast<uint32_t>(payload[4 * e + 1]) << 8) |
                            (static_cast<uint32_t>(payload[4 * e + 2]) << 16) |
                            (static_cast<uint32_t>(payload[4 * e + 3]) << 24);
            std::memcpy(&dst[e], &bits, 4);
        }
        it->second = nullptr; // consumed
    }
    if (r.remaining() != 0)
        throw CheckpointError("checkpoint: trailing bytes after tensor records");
    return {std::move(params), cfg};
}

void check_compatible(const ModelConfig& have, const ModelConfig& want) {
    std::vector<std::string> diffs;
    auto cmp = [&diffs](const char* field, auto a, auto b) {
        if (a != b) {
            std::ostringstream os;
            os << field << " " << a << " vs " << b;
            diffs.push_back(os.str());
        }
    };
    cmp("image_size", have.image_size, want.image_size);
    cmp("patch_size", have.patch_size, want.patch_size);
    cmp("channels", have.channels, want.channels);
    cmp("projection_dim", have.projection_dim, want.projection_dim);
    cmp("latent_len", have.latent_len, want.latent_len);
    cmp("num_heads", have.num_heads, want.num_heads);
    cmp("latent_layers", have.latent_layers, want.latent_layers);
    cmp("repeats", have.repeats, want.repeats);
    cmp("share_weights", have.share_weights, want.share_weights);
    cmp("num_classes", have.num_classes, want.num_classes);
    if (!diffs.empty()) {
        std::string msg = "checkpoint/config mismatch:";
        for (const std::string& d : diffs) msg += " [" + d + "]";
        throw CheckpointError(msg);
    }
}

} // namespace lbt
