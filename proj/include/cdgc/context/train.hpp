#pragma once

#include <algorithm>
#include <cstdio>
#include <limits>
#include <vector>

#include "cdgc/context/losses.hpp"
#include "cdgc/context/network.hpp"
#include "cdgc/data/sampler.hpp"
#include "cdgc/io/checkpoint.hpp"
#include "cdgc/nn/optim.hpp"

namespace cdgc {

// Optimization settings for the context network. Trained fader-style:
// Adam, alternating discriminator/autoencoder steps, dispelling weight
// ramped linearly from zero.
struct ContextTrainConfig {
    int64_t epochs = 30;
    int64_t batch_size = 64;
    float lr = 2e-3f;
    float beta1 = 0.5f;
    uint64_t seed = 1;
    double val_fraction = 0.1;
    bool verbose = false;
};

struct ContextTrainReport {
    std::vector<double> train_recon;
    std::vector<double> val_recon;
    std::vector<double> d_loss;
    std::vector<double> fool_loss;
    int64_t best_epoch = -1;
    double best_val_recon = std::numeric_limits<double>::infinity();
};

namespace detail {

inline double validation_recon(CdgcNetwork<float>& net, const Dataset& val, int64_t batch_size) {
    NoGradGuard guard;
    net.set_training(false);
    double total = 0;
    int64_t count = 0;
    std::vector<int64_t> order(static_cast<size_t>(val.size()));
    std::iota(order.begin(), order.end(), 0);
    for (int64_t b = 0; b * batch_size < val.size(); ++b) {
        const int64_t begin = b * batch_size;
        const int64_t end = std::min<int64_t>(begin + batch_size, val.size());
        std::vector<int64_t> idx(order.begin() + begin, order.begin() + end);
        auto [x, y] = make_batch(val, idx);
        Var<float> xv(std::move(x));
        Var<float> t = net.encode_context(xv);
        Var<float> recon = net.decode_labels(t, y);
        total += static_cast<double>(mse_loss(recon, xv).value()[0]) * static_cast<double>(end - begin);
        count += end - begin;
    }
    net.set_training(true);
    return total / static_cast<double>(count);
}

}  // namespace detail

// Alternating adversarial training: per batch one discriminator step on the
// detached context, then one autoencoder step on
//   recon MSE + lambda(t) * fool + w_rep * repulsive.
// Restores the parameters of the best validation epoch before returning.
inline ContextTrainReport train_cdgc(CdgcNetwork<float>& net, const Dataset& data,
                                     const ContextTrainConfig& tc) {
    const ContextModelConfig& cfg = net.config();
    for (const auto& r : data.records)
        if (r.label < 0 || r.label >= cfg.n_classes)
            throw std::invalid_argument("train_cdgc: dataset label outside [0, n_classes)");

    // Validation split.
    auto perm = shuffled_indices(data.size(), Rng::derive(tc.seed, 0x5eed));
    const int64_t n_val = std::max<int64_t>(1, static_cast<int64_t>(
                                                   static_cast<double>(data.size()) * tc.val_fraction));
    std::vector<int64_t> val_idx(perm.begin(), perm.begin() + n_val);
    std::vector<int64_t> train_idx(perm.begin() + n_val, perm.end());
    Dataset val = data.subset(val_idx);
    Dataset train = data.subset(train_idx);

    Adam<float> ae_opt(net.autoencoder_parameters(), tc.lr, tc.beta1);
    Adam<float> d_opt(net.discriminator_parameters(), tc.lr, tc.beta1);

    const int64_t steps_per_epoch = (train.size() + tc.batch_size - 1) / tc.batch_size;
    const int64_t total_steps = steps_per_epoch * tc.epochs;
    const int64_t ramp_steps =
        cfg.dispel.ramp_steps > 0 ? cfg.dispel.ramp_steps : std::max<int64_t>(1, total_steps / 2);

    Rng wrong_rng(Rng::derive(tc.seed, 0xbad));
    ContextTrainReport report;
    Checkpoint best;
    net.set_training(true);

    int64_t step = 0;
    AugmentationConfig no_aug;
    no_aug.enabled = false;
    for (int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
        auto order = shuffled_indices(train.size(), Rng::derive(tc.seed, static_cast<uint64_t>(epoch)));
        double recon_sum = 0, d_sum = 0, fool_sum = 0;
        int64_t n_batches = 0;
        for (int64_t b = 0; b < steps_per_epoch; ++b, ++step) {
            auto [xt, y] = make_augmented_batch(train, order, b, tc.batch_size, no_aug, tc.seed,
                                                epoch);
            Var<float> x(std::move(xt));
            Var<float> t = net.encode_context(x);

            if (cfg.dispel.enabled) {
                // Discriminator step on the detached context.
                Var<float> t_detached = t.detach();
                Var<float> logits = net.discriminator_logits(t_detached);
                Var<float> d_loss = cross_entropy_logits(logits, y);
                d_opt.zero_grad();
                backward(d_loss);
                d_opt.step();
                d_sum += d_loss.value()[0];
            }

            // Autoencoder step; fool term sees the freshly updated D.
            Var<float> recon = net.decode_labels(t, y);
            Var<float> loss = mse_loss(recon, x);
            const float recon_value = loss.value()[0];
            if (!std::isfinite(recon_value))
                throw std::runtime_error("train_cdgc: reconstruction loss diverged at step " +
                                         std::to_string(step));
            recon_sum += recon_value;

            if (cfg.dispel.enabled) {
                Var<float> probs = net.discriminate(t);
                auto [d_unused, fool] = dispel_losses(probs, y);
                const float lam = cfg.dispel.lambda_max *
                                  std::min<float>(1.0f, static_cast<float>(step) /
                                                            static_cast<float>(ramp_steps));
                fool_sum += fool.value()[0];
                loss = add(loss, affine(fool, lam, 0.0f));
            }
            if (cfg.repulsion.enabled) {
                std::vector<int> y_wrong(y.size());
                for (size_t i = 0; i < y.size(); ++i) {
                    const int k = static_cast<int>(wrong_rng.uniform_int(cfg.n_classes - 1));
                    y_wrong[i] = k + (k >= y[i] ? 1 : 0);
                }
                Var<float> recon_wrong = net.decode_labels(t, y_wrong);
                Var<float> rep = repulsive_loss(recon, recon_wrong, cfg.repulsion.margin);
                loss = add(loss, affine(rep, cfg.repulsion.weight, 0.0f));
            }

            ae_opt.zero_grad();
            backward(loss);
            ae_opt.step();
            ++n_batches;
        }

        report.train_recon.push_back(recon_sum / static_cast<double>(n_batches));
        report.d_loss.push_back(cfg.dispel.enabled ? d_sum / static_cast<double>(n_batches) : 0.0);
        report.fool_loss.push_back(cfg.dispel.enabled ? fool_sum / static_cast<double>(n_batches)
                                                      : 0.0);
        const double val_recon = detail::validation_recon(net, val, tc.batch_size);
        report.val_recon.push_back(val_recon);
        if (val_recon < report.best_val_recon) {
            report.best_val_recon = val_recon;
            report.best_epoch = epoch;
            best = snapshot_module(net, cfg.hash(), {{"epoch", std::to_string(epoch)}});
        }
        if (tc.verbose)
            std::printf("[cdgc %s] epoch %lld recon %.5f val %.5f d %.4f fool %.4f\n",
                        variant_name(cfg.variant), static_cast<long long>(epoch),
                        report.train_recon.back(), val_recon, report.d_loss.back(),
                        report.fool_loss.back());
    }

    if (report.best_epoch >= 0) restore_module(net, best, cfg.hash());
    return report;
}

}  // namespace cdgc
