#include <filesystem>
#include <fstream>
#include <numeric>

#include "cdgc/context/losses.hpp"
#include "cdgc/context/network.hpp"
#include "cdgc/context/train.hpp"
#include "cdgc/data/toyset.hpp"
#include "doctest.h"
#include "support/grad_check.hpp"
#include "support/micro_context.hpp"
#include "support/reference_ops.hpp"

using namespace cdgc;
using testsupport::check_gradients;
using testsupport::random_tensor;

namespace {

Var<float> toy_batch(int64_t b, int res, uint64_t seed, std::vector<int>* labels_out = nullptr,
                     int n_classes = 4) {
    Dataset ds = generate_toyset(seed, n_classes, 4, b);
    std::vector<int64_t> idx(static_cast<size_t>(b));
    std::iota(idx.begin(), idx.end(), 0);
    auto [x, y] = make_batch(ds, idx);
    if (labels_out) *labels_out = y;
    (void)res;
    return Var<float>(std::move(x));
}

}  // namespace

TEST_CASE("context tensor is 8x8 for 32-pixel inputs") {
    ContextModelConfig cfg(ContextVariant::CDCGM, 4, 32);
    CdgcNetwork<float> net(cfg);
    he_init(net, 3);
    net.set_training(false);
    std::vector<int> y;
    Var<float> x = toy_batch(3, 32, 5, &y);
    Var<float> t = net.encode_context(x);
    CHECK(t.shape() == Shape{3, 128, 8, 8});

    Var<float> recon = net.decode_labels(t, y);
    CHECK(recon.shape() == Shape{3, 3, 32, 32});
    for (int64_t i = 0; i < recon.numel(); ++i) {
        CHECK(recon.value()[i] > -1.0f);
        CHECK(recon.value()[i] < 1.0f);
    }
}

TEST_CASE("context tensor is 28x28 for 224-pixel configs") {
    ContextModelConfig cfg(ContextVariant::CGM, 4, 224);
    cfg.encoder_widths = {8, 12, 12, 16, 24, 24};  // slim widths for the shape check
    CdgcNetwork<float> net(cfg);
    he_init(net, 3);
    net.set_training(false);
    Rng rng(1);
    Var<float> x(random_tensor<float>({1, 3, 224, 224}, rng));
    Var<float> t = net.encode_context(x);
    CHECK(t.shape() == Shape{1, 16, 28, 28});
    Var<float> recon = net.decode_labels(t, {2});
    CHECK(recon.shape() == Shape{1, 3, 224, 224});
}

TEST_CASE("gm variant has no conditional channels and rejects conditions") {
    ContextModelConfig cfg(ContextVariant::GM, 4, 32);
    CHECK(cfg.cond_dim() == 0);
    CdgcNetwork<float> net(cfg);
    he_init(net, 7);
    net.set_training(false);
    Var<float> x = toy_batch(2, 32, 6);
    Var<float> t = net.encode_context(x);
    Var<float> recon = net.decode(t, Var<float>());
    CHECK(recon.shape() == Shape{2, 3, 32, 32});
    CHECK_THROWS(net.decode(t, Var<float>(Tensor<float>({2, 4}))));
}

TEST_CASE("all-zero parameters map any input to a zero context") {
    ContextModelConfig cfg(ContextVariant::CGM, 4, 32);
    cfg.encoder_widths = {4, 6, 6, 8, 12, 12};
    CdgcNetwork<float> net(cfg);
    for (auto* p : net.parameters()) p->value().fill(0.f);
    net.set_training(false);
    Var<float> x = toy_batch(2, 32, 9);
    Var<float> t = net.encode_context(x);
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(t.value()[i] == 0.f);
}

TEST_CASE("eval-mode context extraction is deterministic and row-independent") {
    ContextModelConfig cfg(ContextVariant::CDCGM, 4, 32);
    cfg.encoder_widths = {8, 12, 12, 16, 24, 24};
    CdgcNetwork<float> net(cfg);
    he_init(net, 11);
    net.set_training(false);
    Var<float> one = toy_batch(1, 32, 12);
    Tensor<float> doubled({2, 3, 32, 32});
    std::copy_n(one.value().data(), one.value().numel(), doubled.data());
    std::copy_n(one.value().data(), one.value().numel(), doubled.data() + one.value().numel());
    Var<float> t = net.encode_context(Var<float>(std::move(doubled)));
    const int64_t half = t.numel() / 2;
    for (int64_t i = 0; i < half; ++i) CHECK(t.value()[i] == t.value()[half + i]);
}

TEST_CASE("discriminator outputs a probability row per sample") {
    ContextModelConfig cfg(ContextVariant::CDCGM, 4, 32);
    cfg.encoder_widths = {8, 12, 12, 16, 24, 24};
    CdgcNetwork<float> net(cfg);
    he_init(net, 13);
    net.set_training(false);
    Var<float> x = toy_batch(5, 32, 14);
    Var<float> probs = net.discriminate(net.encode_context(x));
    REQUIRE(probs.shape() == Shape{5, 4});
    for (int b = 0; b < 5; ++b) {
        double s = 0;
        for (int j = 0; j < 4; ++j) {
            const float p = probs.value()[b * 4 + j];
            s += p;
            // Untrained head on BatchNorm-bounded features stays far from
            // a confident prediction.
            CHECK(p > 0.02f);
            CHECK(p < 0.80f);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("repulsive loss unit values") {
    Tensor<float> a({1, 3, 2, 2});
    for (int64_t i = 0; i < a.numel(); ++i) a[i] = 0.25f * static_cast<float>(i % 5) - 0.5f;
    Var<float> x1(a), x2(a);
    SUBCASE("identical decodes pay the full margin") {
        Var<float> l = repulsive_loss(x1, x2, 0.01f);
        CHECK(l.value()[0] == doctest::Approx(0.01).epsilon(1e-9));
    }
    SUBCASE("discrepancy at or above the margin is free") {
        Tensor<float> b = a;
        for (int64_t i = 0; i < b.numel(); ++i) b[i] += 0.02f;  // d = 0.02
        Var<float> l = repulsive_loss(x1, Var<float>(b), 0.01f);
        CHECK(l.value()[0] == 0.0f);
    }
    SUBCASE("hand case d=0.004, margin=0.01") {
        // Literal two-pixel pair: |diffs| are 0.002 and 0.006, so d = 0.004.
        Var<double> p1(Tensor<double>({2}, {0.10, 0.20}));
        Var<double> p2(Tensor<double>({2}, {0.102, 0.206}));
        Var<double> l = repulsive_loss(p1, p2, 0.01);
        CHECK(std::abs(l.value()[0] - 0.006) < 1e-9);
    }
    SUBCASE("errors") {
        CHECK_THROWS(repulsive_loss(x1, Var<float>(Tensor<float>({1, 3, 2, 3})), 0.01f));
        CHECK_THROWS(repulsive_loss(x1, x2, 0.0f));
    }
}

TEST_CASE("repulsive loss is non-negative, zero iff d >= margin, 1-Lipschitz in d") {
    Rng rng(21);
    const double margin = 0.05;
    double prev_d = -1, prev_l = -1;
    for (int trial = 0; trial < 40; ++trial) {
        Tensor<double> a = random_tensor<double>({1, 1, 4, 4}, rng, 0.2);
        Tensor<double> b = a;
        const double shift = rng.uniform(0.0, 0.12);
        for (int64_t i = 0; i < b.numel(); ++i) b[i] += shift;
        Var<double> l = repulsive_loss(Var<double>(a), Var<double>(b), margin);
        const double d = shift;  // uniform shift => mean abs diff == shift
        const double lv = l.value()[0];
        CHECK(lv >= 0.0);
        if (d >= margin) CHECK(lv == 0.0);
        if (d < margin) CHECK(lv == doctest::Approx(margin - d).epsilon(1e-9));
        if (prev_d >= 0) CHECK(std::abs(lv - prev_l) <= std::abs(d - prev_d) + 1e-12);
        prev_d = d;
        prev_l = lv;
    }
}

TEST_CASE("dispel losses match their closed forms") {
    Tensor<float> probs({3, 4});
    // Row 0: p_y = 1 (perfect discriminator); row 1: p_y = 0.5; row 2: p_y ~ 0.
    probs[0 * 4 + 1] = 1.0f;
    probs[1 * 4 + 2] = 0.5f;
    probs[1 * 4 + 0] = 0.5f;
    probs[2 * 4 + 3] = 1e-9f;
    probs[2 * 4 + 0] = 1.0f - 1e-9f;

    auto [d1, f1] = dispel_losses(Var<float>(probs), {1, 2, 3});
    (void)f1;
    CHECK(d1.value()[0] ==
          doctest::Approx((-std::log(1.0) - std::log(0.5) - std::log(1e-9)) / 3.0).epsilon(1e-4));

    // Per-row fool values via single-row calls.
    Tensor<float> row({1, 4});
    row[1] = 1.0f;
    auto [dr, fr] = dispel_losses(Var<float>(row), {1});
    CHECK(dr.value()[0] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(fr.value()[0] ==
          doctest::Approx(-std::log(1.0f - 1.0f + float(1.0 + kFoolEps) - 1.0f)).epsilon(1e-3));

    Tensor<float> row2({1, 4});
    row2[1] = 0.5f;
    row2[0] = 0.5f;
    auto [dr2, fr2] = dispel_losses(Var<float>(row2), {1});
    CHECK(fr2.value()[0] == doctest::Approx(0.6931).epsilon(1e-3));

    Tensor<float> row3({1, 4});
    row3[1] = 1e-8f;
    row3[0] = 1.0f - 1e-8f;
    auto [dr3, fr3] = dispel_losses(Var<float>(row3), {1});
    CHECK(std::abs(fr3.value()[0]) < 1e-5);
}

TEST_CASE("discriminator step leaves the encoder untouched") {
    ContextModelConfig cfg(ContextVariant::CDCGM, 4, 32);
    cfg.encoder_widths = {4, 6, 6, 8, 12, 12};
    CdgcNetwork<float> net(cfg);
    he_init(net, 23);
    net.set_training(true);
    std::vector<int> y;
    Var<float> x = toy_batch(4, 32, 24, &y);
    Var<float> t = net.encode_context(x);
    Var<float> d_loss = cross_entropy_logits(net.discriminator_logits(t.detach()), y);
    net.zero_grad();
    backward(d_loss);
    bool d_has_grad = false;
    for (auto* p : net.discriminator_parameters())
        for (int64_t i = 0; i < p->grad().numel(); ++i) d_has_grad |= (p->grad()[i] != 0.f);
    CHECK(d_has_grad);
    for (auto* p : net.autoencoder_parameters())
        for (int64_t i = 0; i < p->grad().numel(); ++i) REQUIRE(p->grad()[i] == 0.f);
}

TEST_CASE("gm training objective is invariant to label permutation") {
    ContextModelConfig cfg(ContextVariant::GM, 4, 32);
    cfg.encoder_widths = {4, 6, 6, 8, 12, 12};
    CdgcNetwork<float> net(cfg);
    he_init(net, 31);
    std::vector<int> y;
    Var<float> x = toy_batch(4, 32, 32, &y);

    auto loss_with_labels = [&](const std::vector<int>& labels) {
        (void)labels;  // gm ignores categories entirely
        Var<float> t = net.encode_context(x);
        Var<float> recon = net.decode(t, Var<float>());
        Var<float> loss = mse_loss(recon, x);
        net.zero_grad();
        backward(loss);
        Tensor<float> g0 = net.parameters()[0]->grad();
        return std::make_pair(loss.value()[0], g0);
    };
    net.set_training(false);  // freeze statistics so both passes see identical state
    auto [l1, g1] = loss_with_labels({0, 1, 2, 3});
    auto [l2, g2] = loss_with_labels({3, 2, 1, 0});
    CHECK(l1 == l2);
    CHECK(bitwise_equal(g1, g2));
}

TEST_CASE("checkpoint round-trips bitwise and validates its header") {
    ContextModelConfig cfg(ContextVariant::CDCGM, 4, 32);
    cfg.encoder_widths = {4, 6, 6, 8, 12, 12};
    CdgcNetwork<float> net(cfg);
    he_init(net, 41);
    net.set_training(false);
    Var<float> x = toy_batch(2, 32, 42);
    Tensor<float> before = net.encode_context(x).value();

    auto dir = std::filesystem::temp_directory_path() / "cdgc_ckpt_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "net.ckpt").string();
    save_checkpoint_file(snapshot_module(net, cfg.hash(), {{"step", "7"}}), path);

    he_init(net, 999);  // scramble
    Checkpoint loaded = load_checkpoint_file(path);
    CHECK(loaded.metadata.at("step") == "7");
    restore_module(net, loaded, cfg.hash());
    Tensor<float> after = net.encode_context(x).value();
    CHECK(bitwise_equal(before, after));

    SUBCASE("corrupted header is rejected with no partial state") {
        std::ofstream f(dir / "bad.ckpt", std::ios::binary);
        f.write("NOTACKPT", 8);
        f.close();
        CHECK_THROWS_WITH_AS(load_checkpoint_file((dir / "bad.ckpt").string()),
                             doctest::Contains("magic"), std::runtime_error);
    }
    SUBCASE("config hash mismatch is a structured error") {
        ContextModelConfig other(ContextVariant::CGM, 4, 32);
        other.encoder_widths = cfg.encoder_widths;
        CdgcNetwork<float> cgm(other);
        CHECK_THROWS_WITH_AS(restore_module(cgm, loaded, other.hash()),
                             doctest::Contains("config hash"), std::runtime_error);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("composite training loss gradient matches finite differences (micro model)") {
    testsupport::MicroContextModel<double> m64(20);
    m64.loss();
    REQUIRE(m64.min_margin > 8e-3);  // evaluation point clear of every kink
    auto res64 = check_gradients<double>([&] { return m64.loss(); }, m64.leaves(), 1e-3, 1e-5);
    CHECK_MESSAGE(res64.ok, res64.detail);

    testsupport::MicroContextModel<float> m32(20);
    m32.loss();
    REQUIRE(m32.min_margin > 8e-3);
    // float32 resolves the difference quotient to ~|f|*eps/(2h); the textbook
    // cbrt(eps)-scaled step keeps that noise inside the 1e-3 budget.
    auto res32 = check_gradients<float>([&] { return m32.loss(); }, m32.leaves(), 5e-3f, 1e-3f,
                                        0.35f);
    CHECK_MESSAGE(res32.ok, res32.detail);
}

TEST_CASE("divergence guard aborts on non-finite reconstruction") {
    ContextModelConfig cfg(ContextVariant::CGM, 4, 32);
    cfg.encoder_widths = {4, 6, 6, 8, 12, 12};
    CdgcNetwork<float> net(cfg);
    he_init(net, 61);
    for (auto& [name, p] : net.named_parameters())
        if (name == "g2_4.conv.bias") p->value()[0] = std::numeric_limits<float>::quiet_NaN();
    Dataset ds = generate_toyset(3, 4, 4, 8);
    ContextTrainConfig tc;
    tc.epochs = 1;
    tc.batch_size = 4;
    CHECK_THROWS_WITH_AS(train_cdgc(net, ds, tc), doctest::Contains("diverged"),
                         std::runtime_error);
}

TEST_CASE("training on the toy set reduces validation reconstruction" * doctest::timeout(1200)) {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        ContextModelConfig cfg(ContextVariant::CDCGM, 4, 32);
        cfg.encoder_widths = {8, 12, 12, 16, 24, 24};
        CdgcNetwork<float> net(cfg);
        he_init(net, seed);
        Dataset ds = generate_toyset(100 + seed, 4, 4, 400);
        ContextTrainConfig tc;
        tc.epochs = 20;
        tc.batch_size = 32;
        tc.seed = seed;
        ContextTrainReport rep = train_cdgc(net, ds, tc);
        REQUIRE(rep.val_recon.size() == 20);
        CHECK(rep.best_val_recon < rep.val_recon.front());
        CHECK(rep.val_recon.back() < rep.val_recon.front());
        CHECK(rep.best_epoch >= 0);
    }
}
