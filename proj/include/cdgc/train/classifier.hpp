#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>

#include "cdgc/data/sampler.hpp"
#include "cdgc/io/checkpoint.hpp"
#include "cdgc/nn/optim.hpp"
#include "cdgc/train/schedule.hpp"

namespace cdgc {

// Anything trainable that maps an image batch to logits: a bare backbone or
// an augmented classifier.
struct ClassifierHandle {
    Module<float>* module = nullptr;
    std::function<Var<float>(const Var<float>&)> forward;
};

struct EpochStats {
    int64_t epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double top1 = 0;
    double top5 = std::numeric_limits<double>::quiet_NaN();  // defined for n >= 5 only
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    int64_t best_epoch = -1;
    double best_top1 = 0;
    double best_top5 = std::numeric_limits<double>::quiet_NaN();

    // CSV schema: header `epoch,lr,train_loss,top1,top5`, one row per epoch
    // (top5 empty when undefined), then `# best_epoch=E top1=X top5=Y`.
    void write_csv(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("train report: cannot write " + path);
        f << "epoch,lr,train_loss,top1,top5\n";
        char buf[160];
        for (const EpochStats& e : epochs) {
            std::snprintf(buf, sizeof(buf), "%lld,%.8g,%.8g,%.6f,", static_cast<long long>(e.epoch),
                          e.lr, e.train_loss, e.top1);
            f << buf;
            if (!std::isnan(e.top5)) {
                std::snprintf(buf, sizeof(buf), "%.6f", e.top5);
                f << buf;
            }
            f << "\n";
        }
        std::snprintf(buf, sizeof(buf), "# best_epoch=%lld top1=%.6f top5=%.6f\n",
                      static_cast<long long>(best_epoch), best_top1, best_top5);
        f << buf;
    }
};

// Top-k accuracy with deterministic tie handling: classes are ranked by
// (logit desc, index asc), so uniform logits predict class 0.
inline std::pair<double, std::optional<double>> evaluate(
    const std::function<Var<float>(const Var<float>&)>& forward, Module<float>& module,
    const Dataset& data, int64_t batch_size = 256) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    NoGradGuard guard;
    const bool was_training = module.training();
    module.set_training(false);
    int64_t hit1 = 0, hit5 = 0;
    for (int64_t start = 0; start < data.size(); start += batch_size) {
        const int64_t end = std::min<int64_t>(start + batch_size, data.size());
        std::vector<int64_t> idx(static_cast<size_t>(end - start));
        std::iota(idx.begin(), idx.end(), start);
        auto [x, y] = make_batch(data, idx);
        Var<float> logits = forward(Var<float>(std::move(x)));
        const int64_t n = logits.shape()[1];
        for (int64_t b = 0; b < end - start; ++b) {
            const float* row = logits.value().data() + b * n;
            const float own = row[y[static_cast<size_t>(b)]];
            int64_t rank = 0;
            for (int64_t j = 0; j < n; ++j) {
                if (row[j] > own || (row[j] == own && j < y[static_cast<size_t>(b)])) ++rank;
            }
            if (rank < 1) ++hit1;
            if (rank < 5) ++hit5;
        }
    }
    module.set_training(was_training);
    const double denom = static_cast<double>(data.size());
    std::optional<double> top5;
    if (data.n_classes >= 5) top5 = static_cast<double>(hit5) / denom;
    return {static_cast<double>(hit1) / denom, top5};
}

struct TrainClassifierOptions {
    OptimizerConfig optimizer;
    ScheduleConfig schedule;
    AugmentationConfig augment;
    uint64_t seed = 1;
    bool verbose = false;
};

// Cross-entropy training with augmentation and per-epoch single-crop
// evaluation; returns the trace and leaves the module holding the weights of
// its best test-set epoch.
inline TrainReport train_classifier(const ClassifierHandle& model, const Dataset& train,
                                    const Dataset& test, const TrainClassifierOptions& opt) {
    opt.optimizer.validate();
    opt.schedule.validate();

    ScheduleConfig schedule = opt.schedule;
    schedule.base_lr = opt.optimizer.base_lr;
    Sgd<float> sgd(model.module->parameters(), static_cast<float>(lr_at(schedule, 0)),
                   static_cast<float>(opt.optimizer.momentum),
                   static_cast<float>(opt.optimizer.weight_decay));

    TrainReport report;
    Checkpoint best;
    for (int64_t epoch = 0; epoch < schedule.total_epochs; ++epoch) {
        const double lr = lr_at(schedule, epoch);
        sgd.set_lr(static_cast<float>(lr));
        model.module->set_training(true);
        auto order = shuffled_indices(train.size(), Rng::derive(opt.seed, static_cast<uint64_t>(epoch)));
        const int64_t steps = (train.size() + opt.optimizer.batch_size - 1) / opt.optimizer.batch_size;
        double loss_sum = 0;
        for (int64_t b = 0; b < steps; ++b) {
            auto [x, y] = make_augmented_batch(train, order, b, opt.optimizer.batch_size,
                                               opt.augment, opt.seed, epoch);
            Var<float> logits = model.forward(Var<float>(std::move(x)));
            Var<float> loss = cross_entropy_logits(logits, y);
            const float value = loss.value()[0];
            if (!std::isfinite(value))
                throw std::runtime_error("train_classifier: non-finite loss at epoch " +
                                         std::to_string(epoch) + " step " + std::to_string(b));
            sgd.zero_grad();
            backward(loss);
            sgd.step();
            loss_sum += value;
        }

        auto [top1, top5] = evaluate(model.forward, *model.module, test);
        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        stats.train_loss = loss_sum / static_cast<double>(steps);
        stats.top1 = top1;
        if (top5) stats.top5 = *top5;
        report.epochs.push_back(stats);
        if (top1 > report.best_top1 || report.best_epoch < 0) {
            report.best_top1 = top1;
            report.best_top5 = top5 ? *top5 : std::numeric_limits<double>::quiet_NaN();
            report.best_epoch = epoch;
            best = snapshot_module(*model.module, 0, {{"epoch", std::to_string(epoch)}});
        }
        if (opt.verbose)
            std::printf("[train] epoch %lld lr %.4g loss %.4f top1 %.4f\n",
                        static_cast<long long>(epoch), lr, stats.train_loss, top1);
    }
    if (report.best_epoch >= 0) restore_module(*model.module, best, 0);
    return report;
}

}  // namespace cdgc
