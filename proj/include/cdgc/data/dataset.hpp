#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdgc/core/tensor.hpp"

namespace cdgc {

// One normalized image with its class id. `nuisance` carries the generator's
// category-irrelevant factor for probe experiments (-1 when unknown).
struct ImageRecord {
    Tensor<float> pixels;  // (3,H,W), values in [-1,1]
    int label = 0;
    int nuisance = -1;
};

struct Dataset {
    std::vector<ImageRecord> records;
    int n_classes = 0;
    int resolution = 0;

    int64_t size() const { return static_cast<int64_t>(records.size()); }

    Dataset subset(const std::vector<int64_t>& idx) const {
        Dataset out;
        out.n_classes = n_classes;
        out.resolution = resolution;
        out.records.reserve(idx.size());
        for (int64_t i : idx) out.records.push_back(records.at(static_cast<size_t>(i)));
        return out;
    }

    Dataset take(int64_t n) const {
        if (n > size()) n = size();
        Dataset out;
        out.n_classes = n_classes;
        out.resolution = resolution;
        out.records.assign(records.begin(), records.begin() + n);
        return out;
    }
};

// Stacks records into a (B,3,H,W) batch tensor plus labels.
inline std::pair<Tensor<float>, std::vector<int>> make_batch(const Dataset& ds,
                                                             const std::vector<int64_t>& idx) {
    if (idx.empty()) throw std::invalid_argument("make_batch: empty index list");
    const auto& first = ds.records.at(static_cast<size_t>(idx[0])).pixels;
    const int64_t C = first.dim(0), H = first.dim(1), W = first.dim(2);
    Tensor<float> x({static_cast<int64_t>(idx.size()), C, H, W});
    std::vector<int> labels(idx.size());
    for (size_t b = 0; b < idx.size(); ++b) {
        const ImageRecord& r = ds.records.at(static_cast<size_t>(idx[b]));
        std::copy_n(r.pixels.data(), C * H * W, x.data() + static_cast<int64_t>(b) * C * H * W);
        labels[b] = r.label;
    }
    return {std::move(x), std::move(labels)};
}

}  // namespace cdgc
