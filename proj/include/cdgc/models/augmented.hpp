#pragma once

#include <map>
#include <memory>

#include "cdgc/attend/block.hpp"
#include "cdgc/context/network.hpp"
#include "cdgc/models/backbones.hpp"

namespace cdgc {

// Source of the global context tensor consumed by the attention framework.
// Implementations are frozen: the returned tensor never carries gradient
// linkage back to the provider.
template <typename T>
class ContextProvider {
public:
    virtual ~ContextProvider() = default;
    virtual Tensor<T> context(const Tensor<T>& batch) = 0;
    virtual int64_t channels() const = 0;
    virtual int64_t resolution() const = 0;
};

template <typename T>
class CdgcContextProvider : public ContextProvider<T> {
public:
    explicit CdgcContextProvider(CdgcNetwork<T>* net) : net_(net) { net_->set_training(false); }

    Tensor<T> context(const Tensor<T>& batch) override {
        NoGradGuard guard;
        return net_->encode_context(Var<T>(batch)).value();
    }
    int64_t channels() const override { return net_->config().context_channels(); }
    int64_t resolution() const override { return net_->config().context_resolution(); }

private:
    CdgcNetwork<T>* net_;
};

// The discriminative-model arm: the context comes from a tapped feature map
// of a trained classifier.
template <typename T>
class FeatureContextProvider : public ContextProvider<T> {
public:
    FeatureContextProvider(Backbone<T>* model, std::string tap)
        : model_(model), tap_(std::move(tap)), info_(model->tap_info(tap_)) {
        if (info_.h != 8 || info_.w != 8)
            throw std::invalid_argument("feature context: tap must be the 8x8 stage");
        model_->set_training(false);
    }

    Tensor<T> context(const Tensor<T>& batch) override {
        NoGradGuard guard;
        Tensor<T> captured;
        typename Backbone<T>::Hook hook = [&](const std::string& tap, const Var<T>& pre) -> Var<T> {
            if (tap == tap_) captured = pre.value();
            return Var<T>();  // decline: backbone applies its own ReLU
        };
        model_->forward(Var<T>(batch), hook);
        if (captured.empty()) throw std::logic_error("feature context: tap not reached");
        return captured;
    }
    int64_t channels() const override { return info_.channels; }
    int64_t resolution() const override { return info_.h; }

private:
    Backbone<T>* model_;
    std::string tap_;
    TapInfo info_;
};

// Detached feature export for the discriminative-model comparison.
template <typename T>
Tensor<T> export_feature_context(Backbone<T>& model, const Tensor<T>& batch,
                                 const std::string& tap) {
    FeatureContextProvider<T> provider(&model, tap);
    return provider.context(batch);
}

// Baseline backbone plus attend blocks at the chosen taps. The context, its
// pooling and the L1/L2 networks run once per input; every insertion point
// consumes resampled copies of those shared maps. Backbone parameters and
// arithmetic are untouched when the branch is zeroed.
template <typename T>
class AugmentedClassifier : public Module<T> {
public:
    AugmentedClassifier(std::unique_ptr<Backbone<T>> backbone, ContextProvider<T>* provider,
                        std::vector<std::string> points, AttendBlockConfig attend_cfg)
        : backbone_(std::move(backbone)), provider_(provider), attend_cfg_(attend_cfg),
          shared_(attend_cfg) {
        attend_cfg_.validate();
        this->register_module("backbone", *backbone_);
        this->register_module("context_attention", shared_);
        for (const std::string& name : points) {
            const TapInfo info = backbone_->tap_info(name);
            const int64_t ctx_res = provider_->resolution();
            if (info.h % ctx_res != 0 && ctx_res % info.h != 0)
                throw std::invalid_argument("augmented: tap " + name +
                                            " not reachable from the context resolution");
            points_.push_back(std::make_unique<AttendPoint<T>>(info.channels, attend_cfg_));
            this->register_module("attend_" + name, *points_.back());
            point_names_.push_back(name);
            point_infos_.push_back(info);
        }
    }

    Var<T> forward(const Var<T>& x) {
        Tensor<T> ctx = provider_->context(x.value());
        auto maps = shared_.compute(Var<T>(std::move(ctx)));
        last_map_node_ = maps.attention.node().get();
        std::map<std::string, std::pair<Var<T>, Var<T>>> resampled;
        for (size_t i = 0; i < point_names_.size(); ++i) {
            const TapInfo& info = point_infos_[i];
            resampled.emplace(point_names_[i],
                              std::make_pair(resample_context(maps.attention, info.h, info.w),
                                             resample_context(maps.embed, info.h, info.w)));
        }
        typename Backbone<T>::Hook hook = [&](const std::string& tap, const Var<T>& pre) -> Var<T> {
            for (size_t i = 0; i < point_names_.size(); ++i)
                if (point_names_[i] == tap) {
                    auto& [m, me] = resampled.at(tap);
                    return points_[i]->forward(pre, m, me);
                }
            return Var<T>();
        };
        return backbone_->forward(x, hook);
    }

    Backbone<T>& backbone() { return *backbone_; }
    std::vector<AttendPoint<T>*> attend_points() {
        std::vector<AttendPoint<T>*> out;
        for (auto& p : points_) out.push_back(p.get());
        return out;
    }
    ContextAttention<T>& shared_attention() { return shared_; }
    const void* last_attention_map_node() const { return last_map_node_; }

    void set_force_zero_gate(bool v) {
        for (auto& p : points_) p->set_force_zero_gate(v);
    }

private:
    std::unique_ptr<Backbone<T>> backbone_;
    ContextProvider<T>* provider_;
    AttendBlockConfig attend_cfg_;
    ContextAttention<T> shared_;
    std::vector<std::unique_ptr<AttendPoint<T>>> points_;
    std::vector<std::string> point_names_;
    std::vector<TapInfo> point_infos_;
    const void* last_map_node_ = nullptr;
};

}  // namespace cdgc
