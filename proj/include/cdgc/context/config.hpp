#pragma once

#include <array>
#include <sstream>
#include <stdexcept>
#include <string>

#include "cdgc/core/rng.hpp"
#include "cdgc/data/condition.hpp"

namespace cdgc {

// GM: plain autoencoder, no conditional input, no dispelling.
// CGM: conditional autoencoder.
// CDCGM: conditional autoencoder with the category dispelling branch.
enum class ContextVariant { GM, CGM, CDCGM };

inline const char* variant_name(ContextVariant v) {
    switch (v) {
        case ContextVariant::GM: return "gm";
        case ContextVariant::CGM: return "cgm";
        case ContextVariant::CDCGM: return "cdcgm";
    }
    return "?";
}

inline ContextVariant variant_from_name(const std::string& s) {
    if (s == "gm") return ContextVariant::GM;
    if (s == "cgm") return ContextVariant::CGM;
    if (s == "cdcgm") return ContextVariant::CDCGM;
    throw std::invalid_argument("unknown context variant: " + s);
}

struct RepulsionConfig {
    bool enabled = true;
    float margin = 0.01f;   // delta
    float weight = 0.001f;
};

struct DispelConfig {
    bool enabled = true;
    float lambda_max = 0.01f;
    int64_t ramp_steps = -1;  // -1: ramp over the first half of training
};

struct ContextModelConfig {
    ContextVariant variant = ContextVariant::CDCGM;
    int resolution = 32;
    int n_classes = 4;
    std::array<int64_t, 6> encoder_widths = {32, 64, 64, 128, 256, 256};
    RepulsionConfig repulsion;
    DispelConfig dispel;

    ContextModelConfig() = default;
    explicit ContextModelConfig(ContextVariant v, int n, int res = 32)
        : variant(v), resolution(res), n_classes(n) {
        dispel.enabled = (v == ContextVariant::CDCGM);
        if (v == ContextVariant::GM) repulsion.enabled = false;
    }

    bool conditional() const { return variant != ContextVariant::GM; }
    int cond_dim() const { return conditional() ? condition_dim(n_classes) : 0; }
    int64_t context_channels() const { return encoder_widths[3]; }
    int context_resolution() const { return resolution == 32 ? 8 : 28; }

    void validate() const {
        if (resolution != 32 && resolution != 224)
            throw std::invalid_argument("context config: resolution must be 32 or 224");
        if (n_classes < 2) throw std::invalid_argument("context config: n_classes must be >= 2");
        if (variant != ContextVariant::CDCGM && dispel.enabled)
            throw std::invalid_argument("context config: dispel requires the cdcgm variant");
        if (variant == ContextVariant::CDCGM && !dispel.enabled)
            throw std::invalid_argument("context config: cdcgm requires dispel enabled");
        if (variant == ContextVariant::GM && repulsion.enabled)
            throw std::invalid_argument(
                "context config: repulsion needs conditional decoding (not available for gm)");
        if (repulsion.enabled && repulsion.margin <= 0)
            throw std::invalid_argument("context config: repulsion margin must be positive");
        for (int64_t w : encoder_widths)
            if (w < 1) throw std::invalid_argument("context config: encoder widths must be >= 1");
    }

    std::string canonical_string() const {
        std::ostringstream os;
        os << "cdgc/" << variant_name(variant) << "/res" << resolution << "/n" << n_classes
           << "/cond" << cond_dim() << "/w";
        for (int64_t w : encoder_widths) os << "_" << w;
        return os.str();
    }

    uint64_t hash() const { return fnv1a64(canonical_string()); }
};

}  // namespace cdgc
