#include "hct/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace hct {

namespace {

constexpr char kMagic[4] = {'H', 'C', 'T', 'C'};
constexpr uint32_t kVersion = 1;

void put(std::ofstream& f, const void* p, size_t n) {
    f.write(static_cast<const char*>(p), std::streamsize(n));
}
template <typename T>
void put_pod(std::ofstream& f, T v) {
    put(f, &v, sizeof(T));
}
void put_str(std::ofstream& f, const std::string& s) {
    put_pod<uint32_t>(f, uint32_t(s.size()));
    put(f, s.data(), s.size());
}
void put_vec(std::ofstream& f, const std::vector<double>& v) {
    put_pod<uint64_t>(f, uint64_t(v.size()));
    put(f, v.data(), v.size() * 8);
}

void get(std::ifstream& f, void* p, size_t n, const std::string& path) {
    f.read(static_cast<char*>(p), std::streamsize(n));
    if (size_t(f.gcount()) != n)
        throw DataError("checkpoint '" + path + "': truncated file");
}
template <typename T>
T get_pod(std::ifstream& f, const std::string& path) {
    T v;
    get(f, &v, sizeof(T), path);
    return v;
}
std::string get_str(std::ifstream& f, const std::string& path) {
    const uint32_t n = get_pod<uint32_t>(f, path);
    std::string s(n, '\0');
    get(f, s.data(), n, path);
    return s;
}
std::vector<double> get_vec(std::ifstream& f, const std::string& path) {
    const uint64_t n = get_pod<uint64_t>(f, path);
    std::vector<double> v(n);
    get(f, v.data(), n * 8, path);
    return v;
}

} // namespace

void save_checkpoint(const std::string& path, const ParamRegistry& reg, AdamW* opt,
                     const CheckpointMeta& meta) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint '" + path + "' for writing");
    put(f, kMagic, 4);
    put_pod<uint32_t>(f, kVersion);
    put_pod<int64_t>(f, meta.epoch);
    put_pod<uint64_t>(f, meta.config_hash);
    put_str(f, meta.rng_state);

    put_pod<uint32_t>(f, uint32_t(reg.items().size()));
    for (const auto& [name, v] : reg.items()) {
        put_str(f, name);
        put_pod<uint32_t>(f, uint32_t(v->shape.size()));
        for (int64_t d : v->shape) put_pod<int64_t>(f, d);
        put_vec(f, v->data);
    }

    put_pod<uint8_t>(f, opt != nullptr);
    if (opt) {
        put_pod<int64_t>(f, opt->t());
        put_pod<uint32_t>(f, uint32_t(opt->slots().size()));
        for (const auto& s : opt->slots()) {
            put_str(f, s.name);
            put_vec(f, s.m);
            put_vec(f, s.v);
        }
    }
}

CheckpointMeta load_checkpoint(const std::string& path, const ParamRegistry& reg, AdamW* opt,
                               uint64_t expected_hash, bool force) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint '" + path + "'");
    char magic[4];
    get(f, magic, 4, path);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("checkpoint '" + path + "': bad magic");
    const uint32_t version = get_pod<uint32_t>(f, path);
    if (version != kVersion)
        throw DataError("checkpoint '" + path + "': unsupported version " +
                        std::to_string(version));

    CheckpointMeta meta;
    meta.epoch = get_pod<int64_t>(f, path);
    meta.config_hash = get_pod<uint64_t>(f, path);
    meta.rng_state = get_str(f, path);
    if (meta.config_hash != expected_hash && !force)
        throw ConfigError("checkpoint '" + path +
                          "' was written under a different configuration "
                          "(pass --force to load anyway)");

    const uint32_t n = get_pod<uint32_t>(f, path);
    for (uint32_t i = 0; i < n; ++i) {
        const std::string name = get_str(f, path);
        const uint32_t rank = get_pod<uint32_t>(f, path);
        Shape shape(rank);
        for (auto& d : shape) d = get_pod<int64_t>(f, path);
        auto data = get_vec(f, path);
        if (!reg.contains(name)) {
            if (force) continue;
            throw DataError("checkpoint '" + path + "': unknown parameter '" + name + "'");
        }
        auto p = reg.find(name);
        if (p->shape != shape)
            throw DataError("checkpoint '" + path + "': shape mismatch for '" + name + "'");
        p->data = std::move(data);
    }

    const bool has_opt = get_pod<uint8_t>(f, path);
    if (has_opt && opt) {
        opt->set_t(get_pod<int64_t>(f, path));
        const uint32_t ns = get_pod<uint32_t>(f, path);
        for (uint32_t i = 0; i < ns; ++i) {
            const std::string name = get_str(f, path);
            auto m = get_vec(f, path);
            auto v = get_vec(f, path);
            for (auto& s : opt->slots())
                if (s.name == name) {
                    s.m = std::move(m);
                    s.v = std::move(v);
                    break;
                }
        }
    }
    return meta;
}

} // namespace hct
