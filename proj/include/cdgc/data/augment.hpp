#pragma once

#include <stdexcept>

#include "cdgc/core/rng.hpp"
#include "cdgc/data/dataset.hpp"

namespace cdgc {

// Zero-pad, random crop, horizontal flip — the Wide-ResNet CIFAR convention.
struct AugmentationConfig {
    int pad = 4;
    int crop = 32;
    double hflip_prob = 0.5;
    bool enabled = true;

    void validate(int resolution) const {
        if (crop > resolution + 2 * pad)
            throw std::invalid_argument("augment: crop exceeds padded size");
        if (hflip_prob < 0.0 || hflip_prob > 1.0)
            throw std::invalid_argument("augment: hflip_prob outside [0,1]");
    }
};

// Consumes exactly three rng draws (crop y, crop x, flip) when enabled.
inline Tensor<float> augment(const Tensor<float>& pixels, const AugmentationConfig& cfg, Rng& rng) {
    if (!cfg.enabled) return pixels;
    const int64_t C = pixels.dim(0), H = pixels.dim(1), W = pixels.dim(2);
    cfg.validate(static_cast<int>(H));
    const int64_t span_y = H + 2 * cfg.pad - cfg.crop + 1;
    const int64_t span_x = W + 2 * cfg.pad - cfg.crop + 1;
    const int64_t oy = rng.uniform_int(span_y);
    const int64_t ox = rng.uniform_int(span_x);
    const bool flip = rng.bernoulli(cfg.hflip_prob);

    Tensor<float> out({C, cfg.crop, cfg.crop});
    for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < cfg.crop; ++y)
            for (int64_t x = 0; x < cfg.crop; ++x) {
                const int64_t sy = y + oy - cfg.pad;
                const int64_t sx = x + ox - cfg.pad;
                float v = 0.f;
                if (sy >= 0 && sy < H && sx >= 0 && sx < W) v = pixels[(c * H + sy) * W + sx];
                const int64_t dx = flip ? (cfg.crop - 1 - x) : x;
                out[(c * cfg.crop + y) * cfg.crop + dx] = v;
            }
    return out;
}

}  // namespace cdgc
