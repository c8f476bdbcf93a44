#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cdgc/core/tensor.hpp"
#include "cdgc/nn/module.hpp"

namespace cdgc {

// Self-describing model container. Binary layout (little-endian):
//   magic "CDGCKPT1" | u32 version | u64 config_hash
//   u32 n_meta  | per entry: u32 klen, key bytes, u32 vlen, value bytes
//   u32 n_tensors | per tensor: u32 nlen, name bytes, u32 ndim,
//                   i64 dims[ndim], f32 data[numel]
struct Checkpoint {
    uint64_t config_hash = 0;
    std::map<std::string, std::string> metadata;
    std::vector<std::pair<std::string, Tensor<float>>> tensors;

    const Tensor<float>* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

void save_checkpoint_file(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint_file(const std::string& path);

// Captures every parameter and buffer of a module under its registry name.
inline Checkpoint snapshot_module(Module<float>& m, uint64_t config_hash,
                                  std::map<std::string, std::string> metadata = {}) {
    Checkpoint ckpt;
    ckpt.config_hash = config_hash;
    ckpt.metadata = std::move(metadata);
    for (auto& [name, p] : m.named_parameters()) ckpt.tensors.emplace_back(name, p->value());
    for (auto& [name, b] : m.named_buffers()) ckpt.tensors.emplace_back(name, *b);
    return ckpt;
}

// Restores a snapshot into a module; structure must match exactly.
inline void restore_module(Module<float>& m, const Checkpoint& ckpt,
                           uint64_t expected_config_hash) {
    if (ckpt.config_hash != expected_config_hash)
        throw std::runtime_error("checkpoint: config hash mismatch (file " +
                                 std::to_string(ckpt.config_hash) + ", model " +
                                 std::to_string(expected_config_hash) + ")");
    auto assign = [&](const std::string& name, Tensor<float>& dst) {
        const Tensor<float>* src = ckpt.find(name);
        if (!src) throw std::runtime_error("checkpoint: missing tensor " + name);
        if (!src->same_shape(dst))
            throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file " +
                                     shape_str(src->shape()) + ", model " +
                                     shape_str(dst.shape()));
        dst = *src;
    };
    for (auto& [name, p] : m.named_parameters()) assign(name, p->value());
    for (auto& [name, b] : m.named_buffers()) assign(name, *b);
}

}  // namespace cdgc
