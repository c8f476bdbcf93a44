#pragma once

#include <memory>
#include <stdexcept>

#include "cdgc/core/ops.hpp"
#include "cdgc/core/ops_nn.hpp"
#include "cdgc/nn/layers.hpp"

namespace cdgc {

// Channel-pooled views of the context tensor.
template <typename T>
struct PooledContext {
    Var<T> mean_map;  // (B,1,H,W)
    Var<T> max_map;   // (B,1,H,W)
};

template <typename T>
PooledContext<T> pool_context(const Var<T>& t) {
    if (t.shape()[1] < 1) throw std::invalid_argument("pool_context: no channels");
    return {channel_mean(t), channel_max(t)};
}

// Integer-ratio resampling: nearest-neighbour replication upward, 2x2
// average pooling downward.
template <typename T>
Var<T> resample_context(const Var<T>& map, int64_t target_h, int64_t target_w) {
    const int64_t h = map.shape()[2], w = map.shape()[3];
    if (h == target_h && w == target_w) return map;
    if (target_h > h) {
        if (target_h % h != 0 || target_w % w != 0 || target_h / h != target_w / w)
            throw std::invalid_argument("resample_context: non-integer upsample ratio");
        return upsample_nearest(map, target_h / h);
    }
    if (h % target_h != 0 || w % target_w != 0 || h / target_h != w / target_w)
        throw std::invalid_argument("resample_context: non-integer downsample ratio");
    int64_t ratio = h / target_h;
    if ((ratio & (ratio - 1)) != 0)
        throw std::invalid_argument("resample_context: downsample ratio must be a power of two");
    Var<T> out = map;
    for (; ratio > 1; ratio /= 2) out = avg_pool2x2(out);
    return out;
}

// L1: c(3,1,1)-BN-ReLU-c(3,1,1)-BN-Sigmoid over the two pooled maps.
template <typename T>
class AttentionMapNet : public Module<T> {
public:
    explicit AttentionMapNet(int64_t hidden = 8)
        : c1_(2, hidden, 3, 1, 1, false), bn1_(hidden), c2_(hidden, 1, 3, 1, 1, false), bn2_(1) {
        this->register_module("c1", c1_);
        this->register_module("bn1", bn1_);
        this->register_module("c2", c2_);
        this->register_module("bn2", bn2_);
    }

    Var<T> forward(const PooledContext<T>& pooled) {
        Var<T> h = concat_channels(std::vector<Var<T>>{pooled.mean_map, pooled.max_map});
        h = relu(bn1_.forward(c1_.forward(h)));
        return sigmoid(bn2_.forward(c2_.forward(h)));
    }

private:
    Conv2d<T> c1_;
    BatchNorm2d<T> bn1_;
    Conv2d<T> c2_;
    BatchNorm2d<T> bn2_;
};

// L2: c(3,1,1)-BN-ReLU-c(3,1,1), the context embedding (no squashing).
template <typename T>
class ContextEmbedNet : public Module<T> {
public:
    explicit ContextEmbedNet(int64_t hidden = 8)
        : c1_(2, hidden, 3, 1, 1, false), bn1_(hidden), c2_(hidden, 1, 3, 1, 1, true) {
        this->register_module("c1", c1_);
        this->register_module("bn1", bn1_);
        this->register_module("c2", c2_);
    }

    Var<T> forward(const PooledContext<T>& pooled) {
        Var<T> h = concat_channels(std::vector<Var<T>>{pooled.mean_map, pooled.max_map});
        return c2_.forward(relu(bn1_.forward(c1_.forward(h))));
    }

private:
    Conv2d<T> c1_;
    BatchNorm2d<T> bn1_;
    Conv2d<T> c2_;
};

// Pre-activation bottleneck BN-ReLU-c(1,1,0)-BN-ReLU-c(3,1,1)-BN-ReLU-c(1,1,0)
// with the inner width reduced by `reduction`; channel-preserving. Shared by
// the feature embedding L3 and the re-bias unit R1.
template <typename T>
class BottleneckNet : public Module<T> {
public:
    BottleneckNet(int64_t channels, double reduction)
        : inner_(std::max<int64_t>(1, static_cast<int64_t>(static_cast<double>(channels) * reduction))),
          bn1_(channels), c1_(channels, inner_, 1, 1, 0, false), bn2_(inner_),
          c2_(inner_, inner_, 3, 1, 1, false), bn3_(inner_), c3_(inner_, channels, 1, 1, 0, true) {
        this->register_module("bn1", bn1_);
        this->register_module("c1", c1_);
        this->register_module("bn2", bn2_);
        this->register_module("c2", c2_);
        this->register_module("bn3", bn3_);
        this->register_module("c3", c3_);
    }

    Var<T> forward(const Var<T>& x) {
        Var<T> h = c1_.forward(relu(bn1_.forward(x)));
        h = c2_.forward(relu(bn2_.forward(h)));
        return c3_.forward(relu(bn3_.forward(h)));
    }

    int64_t inner_width() const { return inner_; }

private:
    int64_t inner_;
    BatchNorm2d<T> bn1_;
    Conv2d<T> c1_;
    BatchNorm2d<T> bn2_;
    Conv2d<T> c2_;
    BatchNorm2d<T> bn3_;
    Conv2d<T> c3_;
};

// A_c = sigmoid( sum_hw Me[0,h,w] * Fe[c,h,w] ), per sample.
template <typename T>
Var<T> channel_relevance(const Var<T>& context_embed, const Var<T>& feature_embed) {
    if (context_embed.shape()[2] != feature_embed.shape()[2] ||
        context_embed.shape()[3] != feature_embed.shape()[3])
        throw std::invalid_argument("channel_relevance: spatial size mismatch");
    return sigmoid(sum_spatial(mul(feature_embed, context_embed)));
}

// F'[c,h,w] = A[c] * M[h,w] * F[c,h,w].
template <typename T>
Var<T> amplify(const Var<T>& feature, const Var<T>& attention_map, const Var<T>& relevance) {
    return mul(mul(feature, attention_map), relevance);
}

struct AttendBlockConfig {
    double reduction = 0.5;  // bottleneck width factor: 1/2 at 32 px, 1/4 at 224 px
    int64_t l1_hidden = 8;
    int64_t l2_hidden = 8;
    bool use_channel_attention = true;  // "w/o CA" ablation when false
    bool use_rebias = true;             // "w/o Re-bias" ablation when false

    void validate() const {
        if (reduction != 0.5 && reduction != 0.25)
            throw std::invalid_argument("attend config: reduction must be 1/2 or 1/4");
    }
};

// One insertion point: owns the feature embedding L3, the re-bias unit R1
// and (for the no-CA arm) the two-conv projection of M to feature channels.
// The attention map M and the context embedding Me arrive already resampled
// to the feature resolution; they are produced once per input by the shared
// L1/L2 networks.
template <typename T>
class AttendPoint : public Module<T> {
public:
    AttendPoint(int64_t channels, const AttendBlockConfig& cfg) : channels_(channels), cfg_(cfg) {
        cfg_.validate();
        if (cfg_.use_channel_attention) {
            l3_ = std::make_unique<BottleneckNet<T>>(channels, cfg_.reduction);
            this->register_module("l3", *l3_);
        } else {
            proj_c1_ = std::make_unique<Conv2d<T>>(1, channels, 3, 1, 1, false);
            proj_bn_ = std::make_unique<BatchNorm2d<T>>(channels);
            proj_c2_ = std::make_unique<Conv2d<T>>(channels, channels, 3, 1, 1, true);
            this->register_module("proj_c1", *proj_c1_);
            this->register_module("proj_bn", *proj_bn_);
            this->register_module("proj_c2", *proj_c2_);
        }
        if (cfg_.use_rebias) {
            r1_ = std::make_unique<BottleneckNet<T>>(channels, cfg_.reduction);
            this->register_module("r1", *r1_);
        }
    }

    // out = ReLU(F + F' + R1(F')), identity added before activation.
    Var<T> forward(const Var<T>& feature, const Var<T>& attention_map,
                   const Var<T>& context_embed) {
        if (feature.shape()[2] != attention_map.shape()[2] ||
            feature.shape()[3] != attention_map.shape()[3])
            throw std::invalid_argument("attend: resolution mismatch after resampling");
        Var<T> amplified;
        if (force_zero_gate_) {
            amplified = Var<T>(Tensor<T>(feature.shape()));
        } else if (cfg_.use_channel_attention) {
            Var<T> fe = l3_->forward(feature);
            Var<T> a = channel_relevance(context_embed, fe);
            amplified = amplify(feature, attention_map, a);
        } else {
            Var<T> p = proj_c2_->forward(relu(proj_bn_->forward(proj_c1_->forward(attention_map))));
            amplified = mul(feature, p);
        }
        Var<T> out = add(feature, amplified);
        if (cfg_.use_rebias) out = add(out, r1_->forward(amplified));
        return relu(out);
    }

    // Forces M*A to zero; used by the zero-branch equivalence checks.
    void set_force_zero_gate(bool v) { force_zero_gate_ = v; }

    int64_t channels() const { return channels_; }
    BottleneckNet<T>* rebias_net() { return r1_.get(); }
    BottleneckNet<T>* embed_net() { return l3_.get(); }

private:
    int64_t channels_;
    AttendBlockConfig cfg_;
    std::unique_ptr<BottleneckNet<T>> l3_;
    std::unique_ptr<BottleneckNet<T>> r1_;
    std::unique_ptr<Conv2d<T>> proj_c1_;
    std::unique_ptr<BatchNorm2d<T>> proj_bn_;
    std::unique_ptr<Conv2d<T>> proj_c2_;
    bool force_zero_gate_ = false;
};

// The reusable part of the framework: pooling plus L1/L2, evaluated once per
// input at the context resolution. Insertion points resample the results.
template <typename T>
class ContextAttention : public Module<T> {
public:
    struct Maps {
        Var<T> attention;  // M,  (B,1,hT,wT)
        Var<T> embed;      // Me, (B,1,hT,wT)
    };

    explicit ContextAttention(const AttendBlockConfig& cfg)
        : l1_(cfg.l1_hidden), l2_(cfg.l2_hidden) {
        this->register_module("l1", l1_);
        this->register_module("l2", l2_);
    }

    Maps compute(const Var<T>& context) {
        PooledContext<T> pooled = pool_context(context);
        return {l1_.forward(pooled), l2_.forward(pooled)};
    }

    AttentionMapNet<T>& l1() { return l1_; }
    ContextEmbedNet<T>& l2() { return l2_; }

private:
    AttentionMapNet<T> l1_;
    ContextEmbedNet<T> l2_;
};

}  // namespace cdgc
