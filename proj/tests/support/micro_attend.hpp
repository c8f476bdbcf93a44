#pragma once

#include <vector>

#include "cdgc/attend/block.hpp"
#include "support/reference_ops.hpp"

// Micro-scale attend block (2 feature channels over 4x4) for the
// finite-difference suites: shared L1/L2, one insertion point, gradients
// taken with respect to the feature map, the context tensor and every
// parameter.
namespace testsupport {

template <typename T>
struct MicroAttendModel {
    cdgc::AttendBlockConfig cfg;
    std::unique_ptr<cdgc::ContextAttention<T>> shared;
    std::unique_ptr<cdgc::AttendPoint<T>> point;
    cdgc::Var<T> feature;  // (2,2,4,4)
    cdgc::Var<T> context;  // (2,3,4,4)

    explicit MicroAttendModel(uint64_t seed, bool use_ca = true, bool use_rebias = true) {
        cfg.reduction = 0.5;
        cfg.l1_hidden = 4;
        cfg.l2_hidden = 4;
        cfg.use_channel_attention = use_ca;
        cfg.use_rebias = use_rebias;
        shared = std::make_unique<cdgc::ContextAttention<T>>(cfg);
        point = std::make_unique<cdgc::AttendPoint<T>>(2, cfg);
        cdgc::Rng init(seed);
        shared->init_params(init);
        point->init_params(init);
        int flip = 0;
        auto prep = [&flip](cdgc::BatchNorm2d<T>& bn) {
            bn.set_update_running_stats(false);
            // Push BN outputs off zero so inner ReLU kinks stay clear of the
            // differencing interval.
            for (int64_t c = 0; c < bn.beta().numel(); ++c)
                bn.beta().value()[c] = T((flip++ % 2) ? 0.45 : -0.4);
        };
        for_each_bn(*shared, prep);
        for_each_bn(*point, prep);
        cdgc::Rng data(seed ^ 0xabcd);
        feature = cdgc::Var<T>(random_tensor<T>({1, 2, 4, 4}, data, 0.8), true);
        context = cdgc::Var<T>(random_tensor<T>({1, 3, 4, 4}, data, 0.8), true);
    }

    template <typename Fn>
    static void for_each_bn(cdgc::Module<T>& m, Fn fn) {
        if (auto* bn = dynamic_cast<cdgc::BatchNorm2d<T>*>(&m)) fn(*bn);
        for (auto& [name, child] : m.children()) for_each_bn(*child, fn);
    }

    cdgc::Var<T> loss() {
        auto maps = shared->compute(context);
        cdgc::Var<T> m = cdgc::resample_context(maps.attention, 4, 4);
        cdgc::Var<T> me = cdgc::resample_context(maps.embed, 4, 4);
        cdgc::Var<T> out = point->forward(feature, m, me);
        return mean_all(mul(out, out));
    }

    // Smallest separation between the top two channels at any pixel: the
    // channel-max pooling is differentiable only away from ties.
    double max_pool_tie_margin() const {
        const auto& t = context.value();
        const int64_t C = t.shape()[1], HW = t.shape()[2] * t.shape()[3];
        double margin = 1e9;
        for (int64_t b = 0; b < t.shape()[0]; ++b)
            for (int64_t i = 0; i < HW; ++i) {
                double best = -1e30, second = -1e30;
                for (int64_t c = 0; c < C; ++c) {
                    const double v = t[(b * C + c) * HW + i];
                    if (v > best) { second = best; best = v; }
                    else if (v > second) second = v;
                }
                margin = std::min(margin, best - second);
            }
        return margin;
    }

    // Distance of the final pre-activation from the ReLU kink, re-derived
    // with the same submodules (forwards are pure while stats are frozen).
    double final_margin() {
        auto maps = shared->compute(context);
        cdgc::Var<T> m = cdgc::resample_context(maps.attention, 4, 4);
        cdgc::Var<T> me = cdgc::resample_context(maps.embed, 4, 4);
        cdgc::Var<T> fe = point->embed_net()->forward(feature);
        cdgc::Var<T> a = cdgc::channel_relevance(me, fe);
        cdgc::Var<T> amp = cdgc::amplify(feature, m, a);
        cdgc::Var<T> pre = add(add(feature, amp), point->rebias_net()->forward(amp));
        double margin = 1e9;
        for (int64_t i = 0; i < pre.numel(); ++i)
            margin = std::min(margin, static_cast<double>(std::abs(pre.value()[i])));
        return margin;
    }

    std::vector<cdgc::Var<T>*> leaves() {
        std::vector<cdgc::Var<T>*> out{&feature, &context};
        for (auto* p : shared->parameters()) out.push_back(p);
        for (auto* p : point->parameters()) out.push_back(p);
        return out;
    }
};

}  // namespace testsupport
