#include "msscanet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "msscanet/config.hpp"
#include "msscanet/errors.hpp"

namespace msscanet {

namespace {

void put_bytes(std::ostream& os, const void* p, size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put_le(std::ostream& os, T value) {
    unsigned char buf[sizeof(T)];
    using U = std::make_unsigned_t<T>;
    U u;
    std::memcpy(&u, &value, sizeof(T));
    for (size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
    put_bytes(os, buf, sizeof(T));
}

void put_f64_le(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_le(os, bits);
}

void put_f32_le(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_le(os, bits);
}

struct Reader {
    std::ifstream in;
    explicit Reader(const std::string& path) : in(path, std::ios::binary) {
        if (!in) throw DataError("cannot open checkpoint file: " + path);
    }
    void bytes(void* p, size_t n) {
        in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (static_cast<size_t>(in.gcount()) != n)
            throw DataError("truncated checkpoint: unexpected end of file");
    }
    template <typename T>
    T le() {
        unsigned char buf[sizeof(T)];
        bytes(buf, sizeof(T));
        std::make_unsigned_t<T> u = 0;
        for (size_t i = 0; i < sizeof(T); ++i)
            u |= static_cast<std::make_unsigned_t<T>>(buf[i]) << (8 * i);
        T v;
        std::memcpy(&v, &u, sizeof(T));
        return v;
    }
    double f64() {
        const uint64_t bits = le<uint64_t>();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    float f32() {
        const uint32_t bits = le<uint32_t>();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

std::string config_to_kv(const ModelConfig& c, const std::map<std::string, std::string>& extra) {
    std::string s;
    auto kv = [&](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
    kv("image_size", std::to_string(c.image_size));
    kv("patch_short", std::to_string(c.patch_short));
    kv("patch_long", std::to_string(c.patch_long));
    kv("embed_dim", std::to_string(c.embed_dim));
    kv("window", std::to_string(c.window));
    kv("depth", std::to_string(c.depth));
    kv("heads", std::to_string(c.heads));
    kv("reduction", std::to_string(c.reduction));
    kv("head_hidden", std::to_string(c.head_hidden));
    kv("use_short_branch", c.use_short_branch ? "true" : "false");
    kv("use_long_branch", c.use_long_branch ? "true" : "false");
    kv("use_spatial", c.use_spatial ? "true" : "false");
    kv("use_channel", c.use_channel ? "true" : "false");
    kv("use_cross", c.use_cross ? "true" : "false");
    kv("seed", std::to_string(c.seed));
    for (const auto& [k, v] : extra) kv(k, v);
    return s;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path, int dtype,
                     const std::map<std::string, std::string>& extra) {
    if (dtype != 0 && dtype != 1) throw UsageError("checkpoint dtype must be 0 (f64) or 1 (f32)");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write checkpoint file: " + path);

    put_bytes(os, "MSCN", 4);
    put_le<uint16_t>(os, kCheckpointVersion);
    put_le<uint32_t>(os, static_cast<uint32_t>(model.parameters.size()));
    for (const auto& [name, t] : model.parameters) {
        put_le<uint16_t>(os, static_cast<uint16_t>(name.size()));
        put_bytes(os, name.data(), name.size());
        put_le<uint8_t>(os, static_cast<uint8_t>(t->rank()));
        for (int64_t e : t->shape) put_le<uint32_t>(os, static_cast<uint32_t>(e));
        put_le<uint8_t>(os, static_cast<uint8_t>(dtype));
        if (dtype == 0)
            for (double v : t->data) put_f64_le(os, v);
        else
            for (double v : t->data) put_f32_le(os, static_cast<float>(v));
    }
    const std::string cfg = config_to_kv(model.config, extra);
    put_le<uint32_t>(os, static_cast<uint32_t>(cfg.size()));
    put_bytes(os, cfg.data(), cfg.size());
    if (!os) throw DataError("write failure while saving checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, "MSCN", 4) != 0)
        throw DataError("checkpoint magic mismatch: not a model checkpoint: " + path);
    const auto version = r.le<uint16_t>();
    if (version != kCheckpointVersion)
        throw DataError("unsupported checkpoint version " + std::to_string(version));

    const auto count = r.le<uint32_t>();
    std::map<std::string, std::pair<Shape, std::vector<double>>> tensors;
    for (uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.le<uint16_t>();
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len);
        const auto rank = r.le<uint8_t>();
        Shape shape(rank);
        for (auto& e : shape) e = static_cast<int64_t>(r.le<uint32_t>());
        const auto dtype = r.le<uint8_t>();
        if (dtype != 0 && dtype != 1)
            throw DataError("checkpoint tensor '" + name + "' has unknown dtype code " +
                            std::to_string(dtype));
        std::vector<double> data(static_cast<size_t>(shape_size(shape)));
        if (dtype == 0)
            for (auto& v : data) v = r.f64();
        else
            for (auto& v : data) v = static_cast<double>(r.f32());
        if (!tensors.emplace(name, std::make_pair(std::move(shape), std::move(data))).second)
            throw DataError("checkpoint contains duplicate parameter name '" + name + "'");
    }

    const auto cfg_len = r.le<uint32_t>();
    std::string cfg_text(cfg_len, '\0');
    r.bytes(cfg_text.data(), cfg_len);

    auto kv = parse_kv_text(cfg_text);
    ModelConfig config;
    apply_model_config(kv, config);
    LoadedCheckpoint out{build_model(config), std::map<std::string, std::string>(kv.begin(), kv.end())};

    for (auto& [name, t] : out.model.parameters) {
        auto it = tensors.find(name);
        if (it == tensors.end())
            throw DataError("checkpoint is missing parameter '" + name + "' expected by its config");
        if (it->second.first != t->shape)
            throw DataError("checkpoint parameter '" + name + "' has shape " +
                            shape_str(it->second.first) + ", expected " + shape_str(t->shape));
        t->data = std::move(it->second.second);
        tensors.erase(it);
    }
    if (!tensors.empty())
        throw DataError("checkpoint contains unexpected parameter '" + tensors.begin()->first + "'");
    return out;
}

}  // namespace msscanet
