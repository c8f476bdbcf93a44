#pragma once

#include <utility>
#include <vector>

#include "cdgc/core/ops.hpp"

namespace cdgc {

// Hinge on the mean absolute pixel difference between two decodes:
// L = max(margin - d(x1, x2), 0).
template <typename T>
Var<T> repulsive_loss(const Var<T>& x1, const Var<T>& x2, T margin) {
    if (margin <= T(0)) throw std::invalid_argument("repulsive_loss: margin must be positive");
    if (x1.shape() != x2.shape()) throw std::invalid_argument("repulsive_loss: shape mismatch");
    return relu(affine(mean_abs_diff(x1, x2), T(-1), margin));
}

inline constexpr double kFoolEps = 1e-6;

// d_loss trains the discriminator toward the true category; fool_loss trains
// the autoencoder to suppress the discriminator's confidence in it.
//   d_loss   = mean over batch of -log p_y
//   fool_loss = mean over batch of -log(1 - p_y + eps)
template <typename T>
std::pair<Var<T>, Var<T>> dispel_losses(const Var<T>& probs, const std::vector<int>& labels) {
    Var<T> p_y = gather_class(probs, labels);
    Var<T> d_loss = affine(mean_all(log_op(p_y)), T(-1), T(0));
    Var<T> fool_loss = affine(mean_all(log_op(affine(p_y, T(-1), T(1) + T(kFoolEps)))), T(-1), T(0));
    return {std::move(d_loss), std::move(fool_loss)};
}

}  // namespace cdgc
