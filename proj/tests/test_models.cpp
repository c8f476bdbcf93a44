#include <map>
#include <numeric>

#include "cdgc/context/network.hpp"
#include "cdgc/models/augmented.hpp"
#include "doctest.h"
#include "support/reference_ops.hpp"

using namespace cdgc;
using testsupport::random_tensor;

namespace {

ContextModelConfig slim_context_config() {
    ContextModelConfig cfg(ContextVariant::CGM, 4, 32);
    cfg.encoder_widths = {4, 6, 6, 8, 12, 12};
    return cfg;
}

Var<float> random_images(int64_t b, uint64_t seed) {
    Rng rng(seed);
    Tensor<float> x({b, 3, 32, 32});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    return Var<float>(std::move(x));
}

int64_t conv_tensor_count(Module<float>& m) {
    int64_t n = 0;
    for (auto& [name, p] : m.named_parameters())
        if (p->value().ndim() == 4) ++n;
    return n;
}

}  // namespace

TEST_CASE("vgg13 produces 10 logits; invalid depths are rejected") {
    BackboneConfig cfg;
    cfg.family = "vgg";
    cfg.depth = 13;
    auto net = build_backbone<float>(cfg);
    he_init(*net, 1);
    net->set_training(false);
    Var<float> logits = net->forward(random_images(2, 3));
    CHECK(logits.shape() == Shape{2, 10});

    BackboneConfig bad = cfg;
    bad.depth = 11;
    CHECK_THROWS(build_backbone<float>(bad));
    BackboneConfig bad2;
    bad2.family = "preact_resnet";
    bad2.depth = 21;
    CHECK_THROWS(build_backbone<float>(bad2));
    BackboneConfig bad3;
    bad3.family = "alexnet";
    CHECK_THROWS(build_backbone<float>(bad3));
}

TEST_CASE("wrn-16-10 counts 16 convolution layers and widens to 640") {
    BackboneConfig cfg;
    cfg.family = "wrn";
    cfg.depth = 16;
    cfg.width = 10;
    auto net = build_backbone<float>(cfg);
    CHECK(conv_tensor_count(*net) == 16);
    CHECK(net->tap_info("final").channels == 640);
    CHECK(net->tap_info("stage3_in").channels == 320);
}

TEST_CASE("preact resnet-20 stages sit at 32/16/8 and taps capture them") {
    BackboneConfig cfg;  // preact_resnet 20
    auto net = build_backbone<float>(cfg);
    he_init(*net, 5);
    net->set_training(false);

    auto taps = net->taps();
    REQUIRE(taps.size() == 2);
    CHECK(taps[0].name == "stage3_in");
    CHECK(taps[0].channels == 32);
    CHECK(taps[0].h == 16);
    CHECK(taps[1].name == "final");
    CHECK(taps[1].channels == 64);
    CHECK(taps[1].h == 8);

    std::map<std::string, Shape> seen;
    Backbone<float>::Hook hook = [&](const std::string& tap, const Var<float>& pre) -> Var<float> {
        seen[tap] = pre.shape();
        return Var<float>();
    };
    Var<float> logits = net->forward(random_images(2, 6), hook);
    CHECK(logits.shape() == Shape{2, 10});
    CHECK(seen.at("stage3_in") == Shape{2, 32, 16, 16});
    CHECK(seen.at("final") == Shape{2, 64, 8, 8});
}

TEST_CASE("vgg taps sit on the pre-pool activations at 16 and 8") {
    BackboneConfig cfg;
    cfg.family = "vgg";
    cfg.depth = 8;
    auto net = build_backbone<float>(cfg);
    he_init(*net, 7);
    net->set_training(false);
    CHECK(net->tap_info("prepool16").channels == 64);
    CHECK(net->tap_info("prepool8").channels == 128);
    std::map<std::string, Shape> seen;
    Backbone<float>::Hook hook = [&](const std::string& tap, const Var<float>& pre) -> Var<float> {
        seen[tap] = pre.shape();
        return Var<float>();
    };
    net->forward(random_images(1, 8), hook);
    CHECK(seen.at("prepool16") == Shape{1, 64, 16, 16});
    CHECK(seen.at("prepool8") == Shape{1, 128, 8, 8});
}

TEST_CASE("se block: forced-open gate is the identity, shapes preserved") {
    SeBlock<float> se(32, 16);
    he_init(se, 9);
    // Saturate the gate: huge positive bias on the second projection.
    for (auto& [name, p] : se.named_parameters())
        if (name == "fc2.bias") p->value().fill(40.f);
    Rng rng(10);
    Var<float> f(random_tensor<float>({2, 32, 8, 8}, rng));
    Var<float> out = se.forward(f);
    REQUIRE(out.shape() == f.shape());
    CHECK(bitwise_equal(out.value(), f.value()));  // sigmoid(~40) rounds to exactly 1

    CHECK_THROWS(SeBlock<float>(10, 16));  // divisibility violation
}

TEST_CASE("feature context export: shape, determinism, no gradient linkage") {
    BackboneConfig cfg;
    cfg.family = "wrn";
    cfg.depth = 16;
    cfg.width = 10;
    auto net = build_backbone<float>(cfg);
    he_init(*net, 11);
    Var<float> x = random_images(2, 12);
    Tensor<float> t1 = export_feature_context(*net, x.value(), "final");
    CHECK(t1.shape() == Shape{2, 640, 8, 8});
    Tensor<float> t2 = export_feature_context(*net, x.value(), "final");
    CHECK(bitwise_equal(t1, t2));
    CHECK_THROWS(export_feature_context(*net, x.value(), "stage3_in"));  // not the 8x8 tap
    CHECK_THROWS(export_feature_context(*net, x.value(), "nope"));
}

TEST_CASE("augmented classifier: insertion arms, frozen context, zero branch") {
    ContextModelConfig ccfg = slim_context_config();
    CdgcNetwork<float> context_net(ccfg);
    he_init(context_net, 13);
    CdgcContextProvider<float> provider(&context_net);

    BackboneConfig bcfg;  // resnet-20
    AttendBlockConfig acfg;

    SUBCASE("one-layer arm uses only the 8x8 tap") {
        auto backbone = build_backbone<float>(bcfg);
        he_init(*backbone, 14);
        AugmentedClassifier<float> aug(std::move(backbone), &provider, {"final"}, acfg);
        he_init(aug.shared_attention(), 15);
        for (auto* p : aug.attend_points()) he_init(*p, 16);
        aug.set_training(false);
        Var<float> logits = aug.forward(random_images(2, 17));
        CHECK(logits.shape() == Shape{2, 10});
        CHECK(aug.attend_points().size() == 1);
    }

    SUBCASE("two-layer arm resamples to 16x16; context stays frozen") {
        auto backbone = build_backbone<float>(bcfg);
        he_init(*backbone, 18);
        AugmentedClassifier<float> aug(std::move(backbone), &provider, {"stage3_in", "final"},
                                       acfg);
        he_init(aug.shared_attention(), 19);
        for (auto* p : aug.attend_points()) he_init(*p, 20);
        aug.set_training(true);
        context_net.set_training(false);

        Var<float> x = random_images(4, 21);
        Var<float> logits = aug.forward(x);
        Var<float> loss = cross_entropy_logits(logits, {0, 1, 2, 3});
        aug.zero_grad();
        backward(loss);

        bool classifier_has_grad = false;
        for (auto* p : aug.parameters())
            for (int64_t i = 0; i < p->grad().numel() && !classifier_has_grad; ++i)
                classifier_has_grad = p->grad()[i] != 0.f;
        CHECK(classifier_has_grad);
        for (auto* p : context_net.parameters()) CHECK(p->grad_view().empty());
    }

    SUBCASE("zero branch reproduces the baseline bitwise") {
        BackboneConfig cfg2 = bcfg;
        auto baseline = build_backbone<float>(cfg2);
        he_init(*baseline, 22);
        auto inner = build_backbone<float>(cfg2);
        he_init(*inner, 22);  // identical weights
        AugmentedClassifier<float> aug(std::move(inner), &provider, {"stage3_in", "final"}, acfg);
        he_init(aug.shared_attention(), 23);
        for (auto* p : aug.attend_points()) he_init(*p, 24);
        aug.set_force_zero_gate(true);
        baseline->set_training(false);
        aug.set_training(false);
        for (int trial = 0; trial < 4; ++trial) {
            Var<float> x = random_images(2, 30 + static_cast<uint64_t>(trial));
            Var<float> a = aug.forward(x);
            Var<float> b = baseline->forward(x);
            CHECK(bitwise_equal(a.value(), b.value()));
        }
    }

    SUBCASE("parameter count identity") {
        auto backbone = build_backbone<float>(bcfg);
        const int64_t baseline_count = backbone->parameter_count();
        AugmentedClassifier<float> aug(std::move(backbone), &provider, {"stage3_in", "final"},
                                       acfg);
        ContextAttention<float> shared_ref(acfg);
        AttendPoint<float> p16(32, acfg), p8(64, acfg);
        CHECK(aug.parameter_count() == baseline_count + shared_ref.parameter_count() +
                                           p16.parameter_count() + p8.parameter_count());
    }

    SUBCASE("eval-mode forward is deterministic") {
        auto backbone = build_backbone<float>(bcfg);
        he_init(*backbone, 25);
        AugmentedClassifier<float> aug(std::move(backbone), &provider, {"final"}, acfg);
        he_init(aug.shared_attention(), 26);
        for (auto* p : aug.attend_points()) he_init(*p, 27);
        aug.set_training(false);
        Var<float> x = random_images(3, 28);
        Var<float> a = aug.forward(x);
        Var<float> b = aug.forward(x);
        CHECK(bitwise_equal(a.value(), b.value()));
    }
}

TEST_CASE("dm-arm provider plugs a classifier feature in as context") {
    BackboneConfig source_cfg;  // resnet-20: 8x8 tap has 64 channels
    auto source = build_backbone<float>(source_cfg);
    he_init(*source, 31);
    FeatureContextProvider<float> provider(source.get(), "final");
    CHECK(provider.channels() == 64);
    CHECK(provider.resolution() == 8);

    BackboneConfig bcfg;
    auto backbone = build_backbone<float>(bcfg);
    he_init(*backbone, 32);
    AttendBlockConfig acfg;
    AugmentedClassifier<float> aug(std::move(backbone), &provider, {"stage3_in", "final"}, acfg);
    he_init(aug.shared_attention(), 33);
    for (auto* p : aug.attend_points()) he_init(*p, 34);
    aug.set_training(false);
    Var<float> logits = aug.forward(random_images(2, 35));
    CHECK(logits.shape() == Shape{2, 10});
}
