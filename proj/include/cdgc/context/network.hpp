#pragma once

#include <memory>
#include <vector>

#include "cdgc/context/config.hpp"
#include "cdgc/core/ops.hpp"
#include "cdgc/core/ops_nn.hpp"
#include "cdgc/data/condition.hpp"
#include "cdgc/nn/layers.hpp"

namespace cdgc {

namespace detail {

struct GroupSpec {
    int64_t k, stride, pad;
};

// Six encoder groups; the first four form E1. For 224-pixel inputs the
// second stride-1 group becomes strided so the context lands at 28x28.
inline std::array<GroupSpec, 6> encoder_groups(int resolution) {
    if (resolution == 32)
        return {{{4, 2, 1}, {3, 1, 1}, {4, 2, 1}, {3, 1, 1}, {4, 2, 1}, {4, 2, 1}}};
    return {{{4, 2, 1}, {3, 1, 1}, {4, 2, 1}, {4, 2, 1}, {4, 2, 1}, {4, 2, 1}}};
}

}  // namespace detail

// One codec group: conv (or transposed conv) followed by BN+ReLU, except the
// output layer which is a biased transposed conv squashed by tanh.
template <typename T>
class CodecGroup : public Module<T> {
public:
    enum class Kind { Conv, Deconv, DeconvTanh };

    CodecGroup(Kind kind, int64_t in_ch, int64_t out_ch, const detail::GroupSpec& g)
        : kind_(kind) {
        if (kind == Kind::Conv)
            conv_ = std::make_unique<Conv2d<T>>(in_ch, out_ch, g.k, g.stride, g.pad, false);
        else
            deconv_ = std::make_unique<ConvTranspose2d<T>>(in_ch, out_ch, g.k, g.stride, g.pad,
                                                           kind == Kind::DeconvTanh);
        if (conv_) this->register_module("conv", *conv_);
        if (deconv_) this->register_module("conv", *deconv_);
        if (kind != Kind::DeconvTanh) {
            bn_ = std::make_unique<BatchNorm2d<T>>(out_ch);
            this->register_module("bn", *bn_);
        }
    }

    Var<T> forward(const Var<T>& x) {
        Var<T> h = conv_ ? conv_->forward(x) : deconv_->forward(x);
        if (kind_ == Kind::DeconvTanh) return tanh_op(h);
        return relu(bn_->forward(h));
    }

private:
    Kind kind_;
    std::unique_ptr<Conv2d<T>> conv_;
    std::unique_ptr<ConvTranspose2d<T>> deconv_;
    std::unique_ptr<BatchNorm2d<T>> bn_;
};

// Category-dispelling discriminator: two strided conv groups over the
// context tensor, global average pooling, linear head.
template <typename T>
class ContextDiscriminator : public Module<T> {
public:
    ContextDiscriminator(int64_t in_ch, int n_classes)
        : g1_(in_ch, 2 * in_ch, 4, 2, 1), g2_(2 * in_ch, 2 * in_ch, 4, 2, 1),
          head_(2 * in_ch, n_classes) {
        this->register_module("g1", g1_);
        this->register_module("g2", g2_);
        this->register_module("head", head_);
    }

    Var<T> logits(const Var<T>& t) {
        return head_.forward(global_avg_pool(g2_.forward(g1_.forward(t))));
    }

private:
    ConvBnRelu<T> g1_, g2_;
    Linear<T> head_;
};

// The context network: conditional autoencoder E1/E2/G1/G2 with an additive
// skip at the context tensor, plus the dispelling discriminator. Only E1,
// E2 and G1 participate in context extraction at evaluation time.
template <typename T>
class CdgcNetwork : public Module<T> {
public:
    explicit CdgcNetwork(ContextModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        const auto groups = detail::encoder_groups(cfg_.resolution);
        const auto& w = cfg_.encoder_widths;
        const int64_t nc = cfg_.cond_dim();

        for (int i = 0; i < 6; ++i) {
            const int64_t in_ch = i == 0 ? 3 : w[static_cast<size_t>(i - 1)];
            encoder_.push_back(std::make_unique<CodecGroup<T>>(
                CodecGroup<T>::Kind::Conv, in_ch, w[static_cast<size_t>(i)], groups[static_cast<size_t>(i)]));
            this->register_module("e" + std::to_string(i + 1), *encoder_.back());
        }
        // G1 mirrors groups 6 and 5.
        for (int i = 5; i >= 4; --i) {
            const int64_t out_ch = w[static_cast<size_t>(i - 1)];
            g1_.push_back(std::make_unique<CodecGroup<T>>(CodecGroup<T>::Kind::Deconv,
                                                          w[static_cast<size_t>(i)], out_ch,
                                                          groups[static_cast<size_t>(i)]));
            this->register_module("g1_" + std::to_string(6 - i), *g1_.back());
        }
        // G2 mirrors groups 4..1; each layer also sees the conditional channels.
        for (int i = 3; i >= 0; --i) {
            const int64_t in_ch = w[static_cast<size_t>(i)] + nc;
            const int64_t out_ch = i == 0 ? 3 : w[static_cast<size_t>(i - 1)];
            const bool strided = groups[static_cast<size_t>(i)].stride == 2;
            typename CodecGroup<T>::Kind kind =
                i == 0 ? CodecGroup<T>::Kind::DeconvTanh
                       : (strided ? CodecGroup<T>::Kind::Deconv : CodecGroup<T>::Kind::Conv);
            g2_.push_back(std::make_unique<CodecGroup<T>>(kind, in_ch, out_ch,
                                                          groups[static_cast<size_t>(i)]));
            this->register_module("g2_" + std::to_string(4 - i), *g2_.back());
        }
        discriminator_ = std::make_unique<ContextDiscriminator<T>>(cfg_.context_channels(),
                                                                   cfg_.n_classes);
        this->register_module("discriminator", *discriminator_);
        if (cfg_.conditional() && cfg_.n_classes > kMaxOneHotClasses) {
            embedder_ = std::make_unique<ConditionEmbedder<T>>(cfg_.n_classes);
            this->register_module("embedder", *embedder_);
        }
    }

    const ContextModelConfig& config() const { return cfg_; }
    ConditionEmbedder<T>* embedder() { return embedder_.get(); }

    // T = E1(x) + G1(E2(E1(x))).
    Var<T> encode_context(const Var<T>& x) {
        if (x.shape()[2] != cfg_.resolution || x.shape()[3] != cfg_.resolution)
            throw std::invalid_argument("encode_context: input resolution mismatch");
        Var<T> h = x;
        for (int i = 0; i < 4; ++i) h = encoder_[static_cast<size_t>(i)]->forward(h);
        Var<T> z = h;
        for (int i = 4; i < 6; ++i) z = encoder_[static_cast<size_t>(i)]->forward(z);
        for (auto& g : g1_) z = g->forward(z);
        return add(h, z);
    }

    // x' = G2(T, g(y)); the conditional vector is appended to the input of
    // every G2 layer as constant channels.
    Var<T> decode(const Var<T>& t, const Var<T>& cond) {
        const int64_t nc = cfg_.cond_dim();
        if (nc == 0) {
            if (cond.defined()) throw std::invalid_argument("decode: gm variant takes no condition");
        } else {
            if (!cond.defined() || cond.shape() != Shape{t.shape()[0], nc})
                throw std::invalid_argument("decode: condition must be (batch, " +
                                            std::to_string(nc) + ")");
        }
        Var<T> h = t;
        for (auto& g : g2_) {
            if (nc > 0) {
                Var<T> maps = expand(reshape(cond, {t.shape()[0], nc, 1, 1}),
                                     {t.shape()[0], nc, h.shape()[2], h.shape()[3]});
                h = concat_channels(std::vector<Var<T>>{h, maps});
            }
            h = g->forward(h);
        }
        return h;
    }

    Var<T> decode_labels(const Var<T>& t, const std::vector<int>& labels) {
        if (cfg_.cond_dim() == 0) return decode(t, Var<T>());
        return decode(t, encode_conditions<T>(labels, cfg_.n_classes, embedder_.get()));
    }

    Var<T> discriminator_logits(const Var<T>& t) { return discriminator_->logits(t); }

    // Class probabilities from the dispelling discriminator.
    Var<T> discriminate(const Var<T>& t) { return softmax(discriminator_->logits(t)); }

    // Parameters of the autoencoder side (everything except the discriminator).
    std::vector<Var<T>*> autoencoder_parameters() {
        std::vector<Var<T>*> out;
        auto collect = [&out](Module<T>& m) {
            for (auto* p : m.parameters()) out.push_back(p);
        };
        for (auto& e : encoder_) collect(*e);
        for (auto& g : g1_) collect(*g);
        for (auto& g : g2_) collect(*g);
        if (embedder_) collect(*embedder_);
        return out;
    }

    std::vector<Var<T>*> discriminator_parameters() { return discriminator_->parameters(); }

private:
    ContextModelConfig cfg_;
    std::vector<std::unique_ptr<CodecGroup<T>>> encoder_;
    std::vector<std::unique_ptr<CodecGroup<T>>> g1_, g2_;
    std::unique_ptr<ContextDiscriminator<T>> discriminator_;
    std::unique_ptr<ConditionEmbedder<T>> embedder_;
};

}  // namespace cdgc
