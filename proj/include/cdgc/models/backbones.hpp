#pragma once

#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "cdgc/core/ops.hpp"
#include "cdgc/core/ops_nn.hpp"
#include "cdgc/models/se.hpp"
#include "cdgc/nn/layers.hpp"

namespace cdgc {

// A tap is an activation site: the backbone normally applies ReLU there, but
// an installed hook may replace it (attention injection) or observe the
// pre-activation feature (context export). Replacing ReLU at the site keeps
// augmented and baseline arithmetic identical everywhere else.
struct TapInfo {
    std::string name;
    int64_t channels = 0;
    int64_t h = 0, w = 0;
};

struct BackboneConfig {
    std::string family = "preact_resnet";  // vgg | preact_resnet | wrn
    int depth = 20;
    int width = 1;  // wrn widening factor
    int n_classes = 10;
    int resolution = 32;
    bool use_se = false;
    int64_t se_reduction = 16;

    void validate() const {
        if (family == "vgg") {
            if (depth != 8 && depth != 13 && depth != 16)
                throw std::invalid_argument("backbone: vgg depth must be 8, 13 or 16");
        } else if (family == "preact_resnet") {
            if (depth < 8 || (depth - 2) % 6 != 0)
                throw std::invalid_argument("backbone: resnet depth must be 6m+2");
        } else if (family == "wrn") {
            if (depth < 10 || (depth - 4) % 6 != 0)
                throw std::invalid_argument("backbone: wrn depth must be 6m+4");
            if (width < 1) throw std::invalid_argument("backbone: wrn width must be >= 1");
        } else {
            throw std::invalid_argument("backbone: unknown family " + family);
        }
        if (n_classes < 2) throw std::invalid_argument("backbone: n_classes must be >= 2");
        if (resolution != 32) throw std::invalid_argument("backbone: only 32-pixel inputs");
    }

    std::string canonical_string() const {
        std::ostringstream os;
        os << family << "-" << depth;
        if (family == "wrn") os << "-" << width;
        os << "/n" << n_classes << (use_se ? "/se" : "");
        return os.str();
    }
    uint64_t hash() const { return fnv1a64(canonical_string()); }
};

template <typename T>
class Backbone : public Module<T> {
public:
    // Hook(tap_name, pre_activation) -> activated output.
    using Hook = std::function<Var<T>(const std::string&, const Var<T>&)>;

    virtual ~Backbone() = default;
    virtual Var<T> forward(const Var<T>& x, const Hook& hook = nullptr) = 0;
    virtual std::vector<TapInfo> taps() const = 0;
    virtual const BackboneConfig& config() const = 0;

    TapInfo tap_info(const std::string& name) const {
        for (const TapInfo& t : taps())
            if (t.name == name) return t;
        throw std::invalid_argument("backbone: unknown tap " + name);
    }

protected:
    Var<T> activate(const std::string& tap, const Var<T>& pre, const Hook& hook) {
        if (hook) {
            Var<T> out = hook(tap, pre);
            if (out.defined()) return out;
        }
        return relu(pre);
    }
};

// Pre-activation residual block: BN-ReLU-conv3x3-BN-ReLU-conv3x3 plus a
// shortcut; the projection shortcut consumes the activated input. The first
// BN-ReLU is a tappable activation site.
template <typename T>
class PreactBlock : public Module<T> {
public:
    PreactBlock(int64_t in_ch, int64_t out_ch, int64_t stride, bool use_se, int64_t se_reduction)
        : bn1_(in_ch), conv1_(in_ch, out_ch, 3, stride, 1, false), bn2_(out_ch),
          conv2_(out_ch, out_ch, 3, 1, 1, false), needs_projection_(stride != 1 || in_ch != out_ch) {
        this->register_module("bn1", bn1_);
        this->register_module("conv1", conv1_);
        this->register_module("bn2", bn2_);
        this->register_module("conv2", conv2_);
        if (needs_projection_) {
            projection_ = std::make_unique<Conv2d<T>>(in_ch, out_ch, 1, stride, 0, false);
            this->register_module("shortcut", *projection_);
        }
        if (use_se) {
            se_ = std::make_unique<SeBlock<T>>(out_ch, se_reduction);
            this->register_module("se", *se_);
        }
    }

    // `tap` non-empty marks the first activation as a hook site.
    Var<T> forward(const Var<T>& x, const std::string& tap,
                   const typename Backbone<T>::Hook& hook) {
        Var<T> a = tap.empty() ? relu(bn1_.forward(x)) : activate_(tap, bn1_.forward(x), hook);
        Var<T> h = conv2_.forward(relu(bn2_.forward(conv1_.forward(a))));
        if (se_) h = se_->forward(h);
        Var<T> sc = needs_projection_ ? projection_->forward(a) : x;
        return add(h, sc);
    }

private:
    Var<T> activate_(const std::string& tap, const Var<T>& pre,
                     const typename Backbone<T>::Hook& hook) {
        if (hook) {
            Var<T> out = hook(tap, pre);
            if (out.defined()) return out;
        }
        return relu(pre);
    }

    BatchNorm2d<T> bn1_;
    Conv2d<T> conv1_;
    BatchNorm2d<T> bn2_;
    Conv2d<T> conv2_;
    bool needs_projection_;
    std::unique_ptr<Conv2d<T>> projection_;
    std::unique_ptr<SeBlock<T>> se_;
};

// CIFAR-style pre-activation ResNet / Wide ResNet: stem conv, three stages at
// 32/16/8 spatial resolution, final BN-ReLU, global average pool, one linear
// head. Taps: "stage3_in" (16x16, entering the last stage) and "final" (8x8,
// before the head's activation).
template <typename T>
class PreactResNet : public Backbone<T> {
public:
    explicit PreactResNet(BackboneConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const int m = (cfg_.depth - (cfg_.family == "wrn" ? 4 : 2)) / 6;
        const int64_t k = cfg_.family == "wrn" ? cfg_.width : 1;
        widths_ = {16 * k, 32 * k, 64 * k};
        stem_ = std::make_unique<Conv2d<T>>(3, 16, 3, 1, 1, false);
        this->register_module("stem", *stem_);
        int64_t in_ch = 16;
        for (int stage = 0; stage < 3; ++stage) {
            const int64_t out_ch = widths_[static_cast<size_t>(stage)];
            for (int b = 0; b < m; ++b) {
                const int64_t stride = (stage > 0 && b == 0) ? 2 : 1;
                blocks_.push_back(std::make_unique<PreactBlock<T>>(in_ch, out_ch, stride,
                                                                   cfg_.use_se, cfg_.se_reduction));
                this->register_module(
                    "stage" + std::to_string(stage + 1) + "_" + std::to_string(b), *blocks_.back());
                block_tap_.push_back(stage == 2 && b == 0 ? "stage3_in" : "");
                in_ch = out_ch;
            }
        }
        final_bn_ = std::make_unique<BatchNorm2d<T>>(in_ch);
        this->register_module("final_bn", *final_bn_);
        head_ = std::make_unique<Linear<T>>(in_ch, cfg_.n_classes);
        this->register_module("head", *head_);
    }

    Var<T> forward(const Var<T>& x, const typename Backbone<T>::Hook& hook = nullptr) override {
        Var<T> h = stem_->forward(x);
        for (size_t i = 0; i < blocks_.size(); ++i) h = blocks_[i]->forward(h, block_tap_[i], hook);
        Var<T> pre = final_bn_->forward(h);
        Var<T> a = this->activate("final", pre, hook);
        return head_->forward(global_avg_pool(a));
    }

    std::vector<TapInfo> taps() const override {
        return {{"stage3_in", widths_[1], 16, 16}, {"final", widths_[2], 8, 8}};
    }

    const BackboneConfig& config() const override { return cfg_; }

private:
    BackboneConfig cfg_;
    std::array<int64_t, 3> widths_{};
    std::unique_ptr<Conv2d<T>> stem_;
    std::vector<std::unique_ptr<PreactBlock<T>>> blocks_;
    std::vector<std::string> block_tap_;
    std::unique_ptr<BatchNorm2d<T>> final_bn_;
    std::unique_ptr<Linear<T>> head_;
};

// VGG with BatchNorm, no dropout, one fully connected layer. Taps sit on the
// conv outputs directly preceding the max-pools at 16x16 and 8x8.
template <typename T>
class Vgg : public Backbone<T> {
public:
    explicit Vgg(BackboneConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const std::vector<int64_t> plan = layer_plan(cfg_.depth);
        int64_t in_ch = 3, spatial = 32;
        int conv_idx = 0;
        for (int64_t entry : plan) {
            if (entry == kPool) {
                ops_.push_back({OpKind::Pool, -1, ""});
                spatial /= 2;
                continue;
            }
            convs_.push_back(std::make_unique<Conv2d<T>>(in_ch, entry, 3, 1, 1, false));
            bns_.push_back(std::make_unique<BatchNorm2d<T>>(entry));
            this->register_module("conv" + std::to_string(conv_idx), *convs_.back());
            this->register_module("bn" + std::to_string(conv_idx), *bns_.back());
            ++conv_idx;
            in_ch = entry;
            ops_.push_back({OpKind::Conv, static_cast<int>(convs_.size()) - 1, ""});
        }
        // Mark the pre-pool activations at 16x16 and 8x8 as taps.
        spatial = 32;
        for (size_t i = 0; i < ops_.size(); ++i) {
            if (ops_[i].kind == OpKind::Pool) {
                if (i > 0 && ops_[i - 1].kind == OpKind::Conv) {
                    if (spatial == 16) ops_[i - 1].tap = "prepool16";
                    if (spatial == 8) ops_[i - 1].tap = "prepool8";
                }
                spatial /= 2;
            }
        }
        taps_.push_back({"prepool16", conv_channels_before_pool(16), 16, 16});
        taps_.push_back({"prepool8", conv_channels_before_pool(8), 8, 8});
        head_ = std::make_unique<Linear<T>>(in_ch, cfg_.n_classes);
        this->register_module("head", *head_);
        head_in_ = in_ch;
    }

    Var<T> forward(const Var<T>& x, const typename Backbone<T>::Hook& hook = nullptr) override {
        Var<T> h = x;
        for (const OpEntry& op : ops_) {
            if (op.kind == OpKind::Pool) {
                h = max_pool2x2(h);
            } else {
                Var<T> pre = bns_[static_cast<size_t>(op.index)]->forward(
                    convs_[static_cast<size_t>(op.index)]->forward(h));
                h = op.tap.empty() ? relu(pre) : this->activate(op.tap, pre, hook);
            }
        }
        return head_->forward(reshape(h, {h.shape()[0], head_in_}));
    }

    std::vector<TapInfo> taps() const override { return taps_; }
    const BackboneConfig& config() const override { return cfg_; }

    static std::vector<int64_t> layer_plan(int depth) {
        switch (depth) {
            case 8:
                return {32, kPool, 64, kPool, 128, 128, kPool, 256, 256, kPool, 256, kPool};
            case 13:
                return {64, 64, kPool, 128, 128, kPool, 256, 256, kPool,
                        512, 512, kPool, 512, 512, kPool};
            case 16:
                return {64, 64, kPool, 128, 128, kPool, 256, 256, 256, kPool,
                        512, 512, 512, kPool, 512, 512, 512, kPool};
            default:
                throw std::invalid_argument("vgg: unsupported depth");
        }
    }

private:
    static constexpr int64_t kPool = -1;
    enum class OpKind { Conv, Pool };
    struct OpEntry {
        OpKind kind;
        int index;
        std::string tap;
    };

    int64_t conv_channels_before_pool(int64_t spatial) const {
        int64_t cur = 32, ch = 0;
        for (const int64_t entry : layer_plan(cfg_.depth)) {
            if (entry == kPool) {
                if (cur == spatial) return ch;
                cur /= 2;
            } else {
                ch = entry;
            }
        }
        throw std::logic_error("vgg: no pool at requested resolution");
    }

    BackboneConfig cfg_;
    std::vector<std::unique_ptr<Conv2d<T>>> convs_;
    std::vector<std::unique_ptr<BatchNorm2d<T>>> bns_;
    std::vector<OpEntry> ops_;
    std::vector<TapInfo> taps_;
    std::unique_ptr<Linear<T>> head_;
    int64_t head_in_ = 0;
};

template <typename T>
std::unique_ptr<Backbone<T>> build_backbone(const BackboneConfig& cfg) {
    cfg.validate();
    if (cfg.family == "vgg") return std::make_unique<Vgg<T>>(cfg);
    return std::make_unique<PreactResNet<T>>(cfg);
}

}  // namespace cdgc
