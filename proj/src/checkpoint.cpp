#include "cdgc/io/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace cdgc {

namespace {

constexpr char kMagic[8] = {'C', 'D', 'G', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& f) {
    T v{};
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

void put_string(std::ofstream& f, const std::string& s) {
    put<uint32_t>(f, static_cast<uint32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& f) {
    const uint32_t len = get<uint32_t>(f);
    if (len > (1u << 20)) throw std::runtime_error("checkpoint: corrupt string length");
    std::string s(len, '\0');
    f.read(s.data(), len);
    if (!f) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

}  // namespace

void save_checkpoint_file(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
    f.write(kMagic, sizeof(kMagic));
    put<uint32_t>(f, kVersion);
    put<uint64_t>(f, ckpt.config_hash);
    put<uint32_t>(f, static_cast<uint32_t>(ckpt.metadata.size()));
    for (const auto& [k, v] : ckpt.metadata) {
        put_string(f, k);
        put_string(f, v);
    }
    put<uint32_t>(f, static_cast<uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        put_string(f, name);
        put<uint32_t>(f, static_cast<uint32_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) put<int64_t>(f, t.dim(i));
        f.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const uint32_t version = get<uint32_t>(f);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ckpt;
    ckpt.config_hash = get<uint64_t>(f);
    const uint32_t n_meta = get<uint32_t>(f);
    for (uint32_t i = 0; i < n_meta; ++i) {
        std::string k = get_string(f);
        ckpt.metadata[k] = get_string(f);
    }
    const uint32_t n_tensors = get<uint32_t>(f);
    for (uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = get_string(f);
        const uint32_t ndim = get<uint32_t>(f);
        if (ndim > 8) throw std::runtime_error("checkpoint: corrupt rank for " + name);
        Shape shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = get<int64_t>(f);
        Tensor<float> t(shape);
        f.read(reinterpret_cast<char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!f) throw std::runtime_error("checkpoint: truncated tensor " + name);
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

}  // namespace cdgc
