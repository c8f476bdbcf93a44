#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "cdgc/core/autograd.hpp"
#include "cdgc/core/gemm.hpp"
#include "cdgc/core/tensor.hpp"

// Elementwise, broadcast, reduction and loss ops. Convolution, normalization
// and pooling live in ops_nn.hpp.

namespace cdgc {
namespace detail {

// Broadcast strides for up-to-4D shapes: size-1 dims get stride 0.
struct BcastPlan {
    Shape out;
    int64_t stride_a[4] = {0, 0, 0, 0};
    int64_t stride_b[4] = {0, 0, 0, 0};
    int nd = 0;
};

inline BcastPlan make_bcast_plan(const Shape& a, const Shape& b) {
    if (a.size() != b.size() || a.empty() || a.size() > 4)
        throw std::invalid_argument("broadcast: shapes must have equal rank <= 4, got " +
                                    shape_str(a) + " vs " + shape_str(b));
    BcastPlan p;
    p.nd = static_cast<int>(a.size());
    p.out.resize(a.size());
    for (int i = 0; i < p.nd; ++i) {
        if (a[i] != b[i] && a[i] != 1 && b[i] != 1)
            throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) + " vs " +
                                        shape_str(b));
        p.out[i] = std::max(a[i], b[i]);
    }
    int64_t sa = 1, sb = 1;
    for (int i = p.nd - 1; i >= 0; --i) {
        p.stride_a[i] = (a[i] == 1) ? 0 : sa;
        p.stride_b[i] = (b[i] == 1) ? 0 : sb;
        sa *= a[i];
        sb *= b[i];
    }
    return p;
}

// Sums `g` (shaped like plan output) into `out` whose shape may have 1s.
template <typename T>
void reduce_to_shape(const Tensor<T>& g, Tensor<T>& out) {
    if (g.same_shape(out)) {
        const T* gp = g.data();
        T* op = out.data();
        for (int64_t i = 0; i < g.numel(); ++i) op[i] += gp[i];
        return;
    }
    const Shape& gs = g.shape();
    const Shape& os = out.shape();
    const int nd = static_cast<int>(gs.size());
    int64_t ostride[4] = {0, 0, 0, 0};
    int64_t s = 1;
    for (int i = nd - 1; i >= 0; --i) {
        ostride[i] = (os[i] == 1) ? 0 : s;
        s *= os[i];
    }
    int64_t idx[4] = {0, 0, 0, 0};
    const T* gp = g.data();
    for (int64_t flat = 0; flat < g.numel(); ++flat) {
        int64_t oi = 0;
        for (int i = 0; i < nd; ++i) oi += idx[i] * ostride[i];
        out[oi] += gp[flat];
        for (int i = nd - 1; i >= 0; --i) {
            if (++idx[i] < gs[i]) break;
            idx[i] = 0;
        }
    }
}

template <typename T, typename F>
Tensor<T> bcast_apply(const Tensor<T>& a, const Tensor<T>& b, const BcastPlan& p, F f) {
    Tensor<T> out(p.out);
    const int nd = p.nd;
    int64_t idx[4] = {0, 0, 0, 0};
    T* op = out.data();
    const T* ap = a.data();
    const T* bp = b.data();
    for (int64_t flat = 0; flat < out.numel(); ++flat) {
        int64_t ia = 0, ib = 0;
        for (int i = 0; i < nd; ++i) {
            ia += idx[i] * p.stride_a[i];
            ib += idx[i] * p.stride_b[i];
        }
        op[flat] = f(ap[ia], bp[ib]);
        for (int i = nd - 1; i >= 0; --i) {
            if (++idx[i] < p.out[i]) break;
            idx[i] = 0;
        }
    }
    return out;
}

}  // namespace detail

// ---- elementwise binary with broadcasting ----

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    if (a.shape() == b.shape()) {
        Tensor<T> out(a.shape());
        const T* ap = a.value().data();
        const T* bp = b.value().data();
        T* op = out.data();
        for (int64_t i = 0; i < out.numel(); ++i) op[i] = ap[i] + bp[i];
        return Var<T>::make_op(std::move(out), {a, b}, [](Node<T>& n) {
            if (n.inputs[0]->requires_grad) accumulate_grad(n.inputs[0], n.grad);
            if (n.inputs[1]->requires_grad) accumulate_grad(n.inputs[1], n.grad);
        }, 0, "add");
    }
    auto plan = detail::make_bcast_plan(a.shape(), b.shape());
    Tensor<T> out = detail::bcast_apply(a.value(), b.value(), plan, [](T x, T y) { return x + y; });
    return Var<T>::make_op(std::move(out), {a, b}, [](Node<T>& n) {
        if (n.inputs[0]->requires_grad) detail::reduce_to_shape(n.grad, n.inputs[0]->grad_buffer());
        if (n.inputs[1]->requires_grad) detail::reduce_to_shape(n.grad, n.inputs[1]->grad_buffer());
    }, 0, "add");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    auto plan = detail::make_bcast_plan(a.shape(), b.shape());
    Tensor<T> out = detail::bcast_apply(a.value(), b.value(), plan, [](T x, T y) { return x * y; });
    const Shape as = a.shape(), bs = b.shape();
    return Var<T>::make_op(std::move(out), {a, b}, [as, bs](Node<T>& n) {
        const Shape& os = n.value.shape();
        if (n.inputs[0]->requires_grad) {
            auto p = detail::make_bcast_plan(os, bs);
            Tensor<T> ga = detail::bcast_apply(n.grad, n.inputs[1]->value, p,
                                               [](T g, T y) { return g * y; });
            detail::reduce_to_shape(ga, n.inputs[0]->grad_buffer());
        }
        if (n.inputs[1]->requires_grad) {
            auto p = detail::make_bcast_plan(os, as);
            Tensor<T> gb = detail::bcast_apply(n.grad, n.inputs[0]->value, p,
                                               [](T g, T x) { return g * x; });
            detail::reduce_to_shape(gb, n.inputs[1]->grad_buffer());
        }
    }, 0, "mul");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    auto plan = detail::make_bcast_plan(a.shape(), b.shape());
    Tensor<T> out = detail::bcast_apply(a.value(), b.value(), plan, [](T x, T y) { return x - y; });
    return Var<T>::make_op(std::move(out), {a, b}, [](Node<T>& n) {
        if (n.inputs[0]->requires_grad) detail::reduce_to_shape(n.grad, n.inputs[0]->grad_buffer());
        if (n.inputs[1]->requires_grad) {
            Tensor<T> neg(n.grad.shape());
            for (int64_t i = 0; i < neg.numel(); ++i) neg[i] = -n.grad[i];
            detail::reduce_to_shape(neg, n.inputs[1]->grad_buffer());
        }
    }, 0, "sub");
}

// a*x + b, scalar coefficients.
template <typename T>
Var<T> affine(const Var<T>& x, T a, T b) {
    Tensor<T> out(x.shape());
    const T* xp = x.value().data();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * xp[i] + b;
    return Var<T>::make_op(std::move(out), {x}, [a](Node<T>& n) {
        Tensor<T>& g = n.inputs[0]->grad_buffer();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += a * n.grad[i];
    }, 0, "affine");
}

// ---- elementwise unary ----

template <typename T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out(x.shape());
    const T* xp = x.value().data();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = xp[i] > T(0) ? xp[i] : T(0);
    return Var<T>::make_op(std::move(out), {x}, [](Node<T>& n) {
        Tensor<T>& g = n.inputs[0]->grad_buffer();
        const Tensor<T>& xv = n.inputs[0]->value;
        for (int64_t i = 0; i < g.numel(); ++i)
            if (xv[i] > T(0)) g[i] += n.grad[i];
    }, 0, "relu");
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> out(x.shape());
    const T* xp = x.value().data();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-xp[i]));
    return Var<T>::make_op(std::move(out), {x}, [](Node<T>& n) {
        Tensor<T>& g = n.inputs[0]->grad_buffer();
        const Tensor<T>& y = n.value;
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * y[i] * (T(1) - y[i]);
    }, 0, "sigmoid");
}

template <typename T>
Var<T> tanh_op(const Var<T>& x) {
    Tensor<T> out(x.shape());
    const T* xp = x.value().data();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(xp[i]);
    return Var<T>::make_op(std::move(out), {x}, [](Node<T>& n) {
        Tensor<T>& g = n.inputs[0]->grad_buffer();
        const Tensor<T>& y = n.value;
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * (T(1) - y[i] * y[i]);
    }, 0, "tanh");
}

template <typename T>
Var<T> log_op(const Var<T>& x) {
    Tensor<T> out(x.shape());
    const T* xp = x.value().data();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(xp[i]);
    return Var<T>::make_op(std::move(out), {x}, [](Node<T>& n) {
        Tensor<T>& g = n.inputs[0]->grad_buffer();
        const Tensor<T>& xv = n.inputs[0]->value;
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] / xv[i];
    }, 0, "log");
}

// ---- shape ops ----

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    return Var<T>::make_op(std::move(out), {x}, [](Node<T>& n) {
        Tensor<T>& g = n.inputs[0]->grad_buffer();
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }, 0, "reshape");
}

// Broadcast x up to `target` (1s expand). Backward reduces by summation.
template <typename T>
Var<T> expand(const Var<T>& x, const Shape& target) {
    auto plan = detail::make_bcast_plan(x.shape(), target);
    if (plan.out != target)
        throw std::invalid_argument("expand: cannot reach " + shape_str(target) + " from " +
                                    shape_str(x.shape()));
    Tensor<T> tgt(target);
    Tensor<T> out = detail::bcast_apply(x.value(), tgt, plan, [](T a, T) { return a; });
    return Var<T>::make_op(std::move(out), {x}, [](Node<T>& n) {
        detail::reduce_to_shape(n.grad, n.inputs[0]->grad_buffer());
    }, 0, "expand");
}

// ---- reductions & losses ----

template <typename T>
Var<T> mean_all(const Var<T>& x) {
    const int64_t n = x.numel();
    T acc = 0;
    const T* xp = x.value().data();
    for (int64_t i = 0; i < n; ++i) acc += xp[i];
    Tensor<T> out({1});
    out[0] = acc / static_cast<T>(n);
    return Var<T>::make_op(std::move(out), {x}, [n](Node<T>& n_) {
        Tensor<T>& g = n_.inputs[0]->grad_buffer();
        const T w = n_.grad[0] / static_cast<T>(n);
        for (int64_t i = 0; i < g.numel(); ++i) g[i] += w;
    }, 0, "mean");
}

template <typename T>
Var<T> mse_loss(const Var<T>& a, const Var<T>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("mse_loss: shape mismatch");
    const int64_t n = a.numel();
    const T* ap = a.value().data();
    const T* bp = b.value().data();
    T acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        const T d = ap[i] - bp[i];
        acc += d * d;
    }
    Tensor<T> out({1});
    out[0] = acc / static_cast<T>(n);
    return Var<T>::make_op(std::move(out), {a, b}, [n](Node<T>& node) {
        const T w = T(2) * node.grad[0] / static_cast<T>(n);
        const Tensor<T>& av = node.inputs[0]->value;
        const Tensor<T>& bv = node.inputs[1]->value;
        if (node.inputs[0]->requires_grad) {
            Tensor<T>& g = node.inputs[0]->grad_buffer();
            for (int64_t i = 0; i < n; ++i) g[i] += w * (av[i] - bv[i]);
        }
        if (node.inputs[1]->requires_grad) {
            Tensor<T>& g = node.inputs[1]->grad_buffer();
            for (int64_t i = 0; i < n; ++i) g[i] -= w * (av[i] - bv[i]);
        }
    }, 0, "mse");
}

// Mean absolute elementwise difference; subgradient at zero is zero.
template <typename T>
Var<T> mean_abs_diff(const Var<T>& a, const Var<T>& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("mean_abs_diff: shape mismatch");
    const int64_t n = a.numel();
    const T* ap = a.value().data();
    const T* bp = b.value().data();
    T acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += std::abs(ap[i] - bp[i]);
    Tensor<T> out({1});
    out[0] = acc / static_cast<T>(n);
    return Var<T>::make_op(std::move(out), {a, b}, [n](Node<T>& node) {
        const T w = node.grad[0] / static_cast<T>(n);
        const Tensor<T>& av = node.inputs[0]->value;
        const Tensor<T>& bv = node.inputs[1]->value;
        for (int64_t i = 0; i < n; ++i) {
            const T d = av[i] - bv[i];
            const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
            if (node.inputs[0]->requires_grad) node.inputs[0]->grad_buffer()[i] += w * s;
            if (node.inputs[1]->requires_grad) node.inputs[1]->grad_buffer()[i] -= w * s;
        }
    }, 0, "mean_abs_diff");
}

// ---- classification heads ----

// Row-wise softmax over (B, n).
template <typename T>
Var<T> softmax(const Var<T>& x) {
    const int64_t B = x.shape()[0], n = x.shape()[1];
    Tensor<T> out(x.shape());
    const T* xp = x.value().data();
    for (int64_t b = 0; b < B; ++b) {
        const T* row = xp + b * n;
        T mx = row[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        T denom = 0;
        for (int64_t j = 0; j < n; ++j) denom += std::exp(row[j] - mx);
        for (int64_t j = 0; j < n; ++j) out[b * n + j] = std::exp(row[j] - mx) / denom;
    }
    return Var<T>::make_op(std::move(out), {x}, [B, n](Node<T>& node) {
        Tensor<T>& g = node.inputs[0]->grad_buffer();
        for (int64_t b = 0; b < B; ++b) {
            const T* y = node.value.data() + b * n;
            const T* dy = node.grad.data() + b * n;
            T dot = 0;
            for (int64_t j = 0; j < n; ++j) dot += dy[j] * y[j];
            for (int64_t j = 0; j < n; ++j) g[b * n + j] += y[j] * (dy[j] - dot);
        }
    }, 0, "softmax");
}

// Mean cross-entropy from raw logits (B, n) against integer labels.
template <typename T>
Var<T> cross_entropy_logits(const Var<T>& logits, const std::vector<int>& labels) {
    const int64_t B = logits.shape()[0], n = logits.shape()[1];
    if (static_cast<int64_t>(labels.size()) != B)
        throw std::invalid_argument("cross_entropy_logits: label count mismatch");
    Tensor<T> probs(logits.shape());
    const T* xp = logits.value().data();
    T loss = 0;
    for (int64_t b = 0; b < B; ++b) {
        const T* row = xp + b * n;
        T mx = row[0];
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        T denom = 0;
        for (int64_t j = 0; j < n; ++j) denom += std::exp(row[j] - mx);
        const T log_denom = std::log(denom);
        for (int64_t j = 0; j < n; ++j) probs[b * n + j] = std::exp(row[j] - mx) / denom;
        loss -= (row[labels[b]] - mx - log_denom);
    }
    Tensor<T> out({1});
    out[0] = loss / static_cast<T>(B);
    return Var<T>::make_op(std::move(out), {logits},
                           [B, n, labels, probs = std::move(probs)](Node<T>& node) {
                               Tensor<T>& g = node.inputs[0]->grad_buffer();
                               const T w = node.grad[0] / static_cast<T>(B);
                               for (int64_t b = 0; b < B; ++b) {
                                   for (int64_t j = 0; j < n; ++j)
                                       g[b * n + j] += w * probs[b * n + j];
                                   g[b * n + labels[b]] -= w;
                               }
                           }, 0, "cross_entropy");
}

// Picks probs[b, labels[b]] -> (B).
template <typename T>
Var<T> gather_class(const Var<T>& probs, const std::vector<int>& labels) {
    const int64_t B = probs.shape()[0], n = probs.shape()[1];
    Tensor<T> out({B});
    for (int64_t b = 0; b < B; ++b) out[b] = probs.value()[b * n + labels[b]];
    return Var<T>::make_op(std::move(out), {probs}, [n, labels](Node<T>& node) {
        Tensor<T>& g = node.inputs[0]->grad_buffer();
        for (size_t b = 0; b < labels.size(); ++b)
            g[static_cast<int64_t>(b) * n + labels[b]] += node.grad[static_cast<int64_t>(b)];
    }, 0, "gather");
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    // a (M,K) * b (K,N)
    const int64_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
    if (b.shape()[0] != K) throw std::invalid_argument("matmul: inner dim mismatch");
    Tensor<T> out({M, N});
    gemm(false, false, M, N, K, T(1), a.value().data(), K, b.value().data(), N, T(0), out.data(),
         N);
    return Var<T>::make_op(
        std::move(out), {a, b},
        [M, K, N](Node<T>& node) {
            const Tensor<T>& av = node.inputs[0]->value;
            const Tensor<T>& bv = node.inputs[1]->value;
            if (node.inputs[0]->requires_grad)
                gemm(false, true, M, K, N, T(1), node.grad.data(), N, bv.data(), N, T(1),
                     node.inputs[0]->grad_buffer().data(), K);
            if (node.inputs[1]->requires_grad)
                gemm(true, false, K, N, M, T(1), av.data(), K, node.grad.data(), N, T(1),
                     node.inputs[1]->grad_buffer().data(), N);
        },
        M * K * N, "matmul");
}

}  // namespace cdgc
