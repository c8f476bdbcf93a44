#pragma once

#include <stdexcept>

#include "cdgc/core/ops.hpp"
#include "cdgc/core/ops_nn.hpp"
#include "cdgc/nn/layers.hpp"

namespace cdgc {

// Squeeze-and-Excitation: global average pool, two-layer bottleneck, sigmoid
// gate, channel-wise rescale.
template <typename T>
class SeBlock : public Module<T> {
public:
    SeBlock(int64_t channels, int64_t reduction = 16)
        : channels_(channels),
          fc1_(channels, channels / reduction, true),
          fc2_(channels / reduction, channels, true) {
        if (channels % reduction != 0)
            throw std::invalid_argument("se_block: channels not divisible by reduction");
        this->register_module("fc1", fc1_);
        this->register_module("fc2", fc2_);
    }

    Var<T> forward(const Var<T>& f) {
        Var<T> s = global_avg_pool(f);                       // (B,C)
        s = sigmoid(fc2_.forward(relu(fc1_.forward(s))));    // (B,C) in (0,1)
        s = reshape(s, {f.shape()[0], channels_, 1, 1});
        return mul(f, s);
    }

private:
    int64_t channels_;
    Linear<T> fc1_, fc2_;
};

}  // namespace cdgc
