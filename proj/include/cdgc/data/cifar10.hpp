#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cdgc/data/dataset.hpp"

namespace cdgc {

// CIFAR-10 binary batch format: fixed 3073-byte records, one label byte
// followed by 3072 pixel bytes in row-major R,G,B planes. Pixels map to
// [-1,1] via v = byte/127.5 - 1.
inline constexpr int64_t kCifarRecordBytes = 3073;

inline void load_cifar10_file(const std::string& path, Dataset& out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cifar10: cannot open " + path);
    f.seekg(0, std::ios::end);
    const int64_t total = static_cast<int64_t>(f.tellg());
    f.seekg(0);
    if (total % kCifarRecordBytes != 0)
        throw std::runtime_error("cifar10: truncated file " + path + " (" + std::to_string(total) +
                                 " bytes is not a multiple of 3073)");
    const int64_t n = total / kCifarRecordBytes;
    std::vector<unsigned char> buf(static_cast<size_t>(kCifarRecordBytes));
    for (int64_t i = 0; i < n; ++i) {
        f.read(reinterpret_cast<char*>(buf.data()), kCifarRecordBytes);
        if (!f) throw std::runtime_error("cifar10: short read in " + path);
        if (buf[0] >= 10)
            throw std::runtime_error("cifar10: label byte " + std::to_string(int(buf[0])) +
                                     " out of range in " + path);
        ImageRecord rec;
        rec.label = buf[0];
        rec.pixels = Tensor<float>({3, 32, 32});
        for (int64_t j = 0; j < 3072; ++j)
            rec.pixels[j] = static_cast<float>(buf[static_cast<size_t>(j + 1)]) / 127.5f - 1.0f;
        out.records.push_back(std::move(rec));
    }
}

// Loads every *.bin in the directory in lexicographic order.
inline Dataset load_cifar10(const std::string& directory) {
    Dataset ds;
    ds.n_classes = 10;
    ds.resolution = 32;
    std::vector<std::string> files;
    for (const auto& e : std::filesystem::directory_iterator(directory))
        if (e.is_regular_file() && e.path().extension() == ".bin") files.push_back(e.path().string());
    if (files.empty()) throw std::runtime_error("cifar10: no .bin files in " + directory);
    std::sort(files.begin(), files.end());
    for (const auto& f : files) load_cifar10_file(f, ds);
    return ds;
}

}  // namespace cdgc
