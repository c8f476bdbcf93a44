#pragma once

#include <stdexcept>
#include <vector>

#include "cdgc/core/ops.hpp"
#include "cdgc/core/ops_nn.hpp"
#include "cdgc/nn/layers.hpp"

namespace cdgc {

inline constexpr int kMaxOneHotClasses = 10;
inline constexpr int kEmbeddedConditionDim = 10;

// Two-layer fully connected embedder mapping a one-hot of n classes down to
// a ten-dimensional conditional vector; used only when n exceeds ten.
template <typename T>
class ConditionEmbedder : public Module<T> {
public:
    explicit ConditionEmbedder(int n_classes, int hidden = 64)
        : n_classes_(n_classes), fc1_(n_classes, hidden), fc2_(hidden, kEmbeddedConditionDim) {
        this->register_module("fc1", fc1_);
        this->register_module("fc2", fc2_);
    }

    Var<T> forward(const Var<T>& one_hot) { return fc2_.forward(relu(fc1_.forward(one_hot))); }

    int n_classes() const { return n_classes_; }

private:
    int n_classes_;
    Linear<T> fc1_, fc2_;
};

template <typename T>
Tensor<T> one_hot_batch(const std::vector<int>& labels, int n) {
    Tensor<T> out({static_cast<int64_t>(labels.size()), n});
    for (size_t b = 0; b < labels.size(); ++b) {
        if (labels[b] < 0 || labels[b] >= n)
            throw std::out_of_range("encode_condition: label " + std::to_string(labels[b]) +
                                    " outside [0," + std::to_string(n) + ")");
        out[static_cast<int64_t>(b) * n + labels[b]] = T(1);
    }
    return out;
}

// g(y) for a batch: one-hot of length n when n <= 10, otherwise the learned
// ten-dimensional embedding. The embedder participates in the graph so it
// trains jointly with whatever consumes the conditions.
template <typename T>
Var<T> encode_conditions(const std::vector<int>& labels, int n, ConditionEmbedder<T>* embedder) {
    Var<T> one_hot(one_hot_batch<T>(labels, n));
    if (n <= kMaxOneHotClasses) return one_hot;
    if (!embedder) throw std::invalid_argument("encode_condition: embedder required for n > 10");
    return embedder->forward(one_hot);
}

// Single-label convenience used by the data pipeline contract.
template <typename T>
Tensor<T> encode_condition(int label, int n, ConditionEmbedder<T>* embedder = nullptr) {
    NoGradGuard guard;
    return encode_conditions<T>({label}, n, embedder).value().reshaped(
        {n <= kMaxOneHotClasses ? static_cast<int64_t>(n)
                                : static_cast<int64_t>(kEmbeddedConditionDim)});
}

inline int condition_dim(int n_classes) {
    return n_classes <= kMaxOneHotClasses ? n_classes : kEmbeddedConditionDim;
}

}  // namespace cdgc
