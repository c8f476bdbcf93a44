#pragma once

#include <numeric>
#include <vector>

#include "cdgc/core/rng.hpp"
#include "cdgc/data/augment.hpp"
#include "cdgc/data/dataset.hpp"

namespace cdgc {

inline std::vector<int64_t> shuffled_indices(int64_t n, uint64_t seed) {
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    for (int64_t i = n - 1; i > 0; --i)
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(rng.uniform_int(i + 1))]);
    return idx;
}

// Batch composition is a pure function of (seed, epoch, batch index): the
// epoch permutation comes from (seed, epoch) and every record's augmentation
// stream from (seed, epoch, batch).
inline std::pair<Tensor<float>, std::vector<int>> make_augmented_batch(
    const Dataset& ds, const std::vector<int64_t>& order, int64_t batch_index, int64_t batch_size,
    const AugmentationConfig& aug, uint64_t seed, int64_t epoch) {
    const int64_t begin = batch_index * batch_size;
    const int64_t end = std::min<int64_t>(begin + batch_size, static_cast<int64_t>(order.size()));
    std::vector<int64_t> idx(order.begin() + begin, order.begin() + end);
    auto [x, labels] = make_batch(ds, idx);
    if (aug.enabled) {
        Rng rng(Rng::derive(Rng::derive(seed, static_cast<uint64_t>(epoch)),
                            static_cast<uint64_t>(batch_index)));
        const int64_t chw = x.numel() / x.dim(0);
        for (int64_t b = 0; b < x.dim(0); ++b) {
            Tensor<float> img({x.dim(1), x.dim(2), x.dim(3)});
            std::copy_n(x.data() + b * chw, chw, img.data());
            Tensor<float> out = augment(img, aug, rng);
            std::copy_n(out.data(), chw, x.data() + b * chw);
        }
    }
    return {std::move(x), std::move(labels)};
}

}  // namespace cdgc
