#pragma once

#include <stdexcept>
#include <vector>

namespace cdgc {

struct OptimizerConfig {
    double base_lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int64_t batch_size = 128;

    void validate() const {
        if (base_lr <= 0) throw std::invalid_argument("optimizer: base_lr must be positive");
        if (batch_size < 1) throw std::invalid_argument("optimizer: batch_size must be >= 1");
    }
};

// Step schedule with a fixed warm-up: epochs below warmup_epochs run at
// warmup_lr, afterwards the base rate decays by `decay` at each milestone.
struct ScheduleConfig {
    int64_t total_epochs = 200;
    std::vector<int64_t> milestones = {60, 120, 160};
    double decay = 0.2;
    double base_lr = 0.1;
    double warmup_lr = 0.001;
    int64_t warmup_epochs = 2;

    void validate() const {
        if (total_epochs < 1) throw std::invalid_argument("schedule: total_epochs must be >= 1");
        if (decay <= 0 || decay >= 1) throw std::invalid_argument("schedule: decay must be in (0,1)");
        for (size_t i = 0; i < milestones.size(); ++i) {
            if (milestones[i] >= total_epochs)
                throw std::invalid_argument("schedule: milestone beyond total_epochs");
            if (i > 0 && milestones[i] <= milestones[i - 1])
                throw std::invalid_argument("schedule: milestones must be strictly increasing");
        }
    }

    // Desk-scale variant: milestones rescaled to a shorter run.
    static ScheduleConfig desk(int64_t epochs) {
        ScheduleConfig s;
        s.total_epochs = epochs;
        s.milestones.clear();
        for (int64_t m : {epochs / 2, epochs * 4 / 5})
            if (m > 0 && m < epochs && (s.milestones.empty() || m > s.milestones.back()))
                s.milestones.push_back(m);
        return s;
    }
};

inline double lr_at(const ScheduleConfig& s, int64_t epoch) {
    s.validate();
    if (epoch < 0 || epoch >= s.total_epochs)
        throw std::out_of_range("lr_at: epoch outside [0, total_epochs)");
    if (epoch < s.warmup_epochs) return s.warmup_lr;
    double lr = s.base_lr;
    for (int64_t m : s.milestones)
        if (epoch >= m) lr *= s.decay;
    return lr;
}

}  // namespace cdgc
