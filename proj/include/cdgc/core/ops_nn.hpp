#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

#include "cdgc/core/autograd.hpp"
#include "cdgc/core/conv_impl.hpp"
#include "cdgc/core/ops.hpp"

// Convolution, normalization, pooling and channel ops for NCHW tensors.

namespace cdgc {

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int64_t stride, int64_t pad) {
    Tensor<T> y = conv2d_forward(x.value(), w.value(), bias.defined() ? bias.value() : Tensor<T>(),
                                 stride, pad);
    const int64_t macs = w.numel() * y.shape()[2] * y.shape()[3] * y.shape()[0];
    std::vector<Var<T>> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    return Var<T>::make_op(
        std::move(y), std::move(inputs),
        [stride, pad](Node<T>& n) {
            const bool has_bias = n.inputs.size() > 2;
            Tensor<T>* dx = n.inputs[0]->requires_grad ? &n.inputs[0]->grad_buffer() : nullptr;
            Tensor<T>* dw = n.inputs[1]->requires_grad ? &n.inputs[1]->grad_buffer() : nullptr;
            Tensor<T>* db = has_bias && n.inputs[2]->requires_grad ? &n.inputs[2]->grad_buffer()
                                                                   : nullptr;
            conv2d_backward(n.inputs[0]->value, n.inputs[1]->value, n.grad, stride, pad, dx, dw,
                            db);
        },
        macs, "conv2d");
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int64_t stride,
                        int64_t pad) {
    Tensor<T> y = conv_transpose2d_forward(
        x.value(), w.value(), bias.defined() ? bias.value() : Tensor<T>(), stride, pad);
    const int64_t macs = w.numel() * x.shape()[2] * x.shape()[3] * x.shape()[0];
    std::vector<Var<T>> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    return Var<T>::make_op(
        std::move(y), std::move(inputs),
        [stride, pad](Node<T>& n) {
            const bool has_bias = n.inputs.size() > 2;
            Tensor<T>* dx = n.inputs[0]->requires_grad ? &n.inputs[0]->grad_buffer() : nullptr;
            Tensor<T>* dw = n.inputs[1]->requires_grad ? &n.inputs[1]->grad_buffer() : nullptr;
            Tensor<T>* db = has_bias && n.inputs[2]->requires_grad ? &n.inputs[2]->grad_buffer()
                                                                   : nullptr;
            conv_transpose2d_backward(n.inputs[0]->value, n.inputs[1]->value, n.grad, stride, pad,
                                      dx, dw, db);
        },
        macs, "conv_transpose2d");
}

// y = x * W^T + b; x (B,in), W (out,in), b (out).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
    const int64_t B = x.shape()[0], in = x.shape()[1], out_n = w.shape()[0];
    if (w.shape()[1] != in) throw std::invalid_argument("linear: dim mismatch");
    Tensor<T> y({B, out_n});
    gemm(false, true, B, out_n, in, T(1), x.value().data(), in, w.value().data(), in, T(0),
         y.data(), out_n);
    if (bias.defined())
        for (int64_t b = 0; b < B; ++b)
            for (int64_t j = 0; j < out_n; ++j) y[b * out_n + j] += bias.value()[j];
    std::vector<Var<T>> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    return Var<T>::make_op(
        std::move(y), std::move(inputs),
        [B, in, out_n](Node<T>& n) {
            if (n.inputs[0]->requires_grad)
                gemm(false, false, B, in, out_n, T(1), n.grad.data(), out_n,
                     n.inputs[1]->value.data(), in, T(1), n.inputs[0]->grad_buffer().data(), in);
            if (n.inputs[1]->requires_grad)
                gemm(true, false, out_n, in, B, T(1), n.grad.data(), out_n,
                     n.inputs[0]->value.data(), in, T(1), n.inputs[1]->grad_buffer().data(), in);
            if (n.inputs.size() > 2 && n.inputs[2]->requires_grad) {
                Tensor<T>& db = n.inputs[2]->grad_buffer();
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t j = 0; j < out_n; ++j) db[j] += n.grad[b * out_n + j];
            }
        },
        B * in * out_n, "linear");
}

// Batch normalization over (B,H,W) per channel using batch statistics.
// Emits batch mean / biased variance through out-params so the owning layer
// can maintain running estimates.
template <typename T>
Var<T> batch_norm_train(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps,
                        Tensor<T>* batch_mean_out = nullptr, Tensor<T>* batch_var_out = nullptr) {
    const int64_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int64_t m = B * H * W;
    Tensor<T> mean({C}), var({C}), inv_std({C});
    const T* xp = x.value().data();
    for (int64_t c = 0; c < C; ++c) {
        T acc = 0;
        for (int64_t b = 0; b < B; ++b) {
            const T* p = xp + (b * C + c) * H * W;
            for (int64_t i = 0; i < H * W; ++i) acc += p[i];
        }
        mean[c] = acc / static_cast<T>(m);
    }
    for (int64_t c = 0; c < C; ++c) {
        T acc = 0;
        for (int64_t b = 0; b < B; ++b) {
            const T* p = xp + (b * C + c) * H * W;
            for (int64_t i = 0; i < H * W; ++i) {
                const T d = p[i] - mean[c];
                acc += d * d;
            }
        }
        var[c] = acc / static_cast<T>(m);
        inv_std[c] = T(1) / std::sqrt(var[c] + eps);
    }
    if (batch_mean_out) *batch_mean_out = mean;
    if (batch_var_out) *batch_var_out = var;

    Tensor<T> xhat(x.shape());
    Tensor<T> y(x.shape());
    const T* gp = gamma.value().data();
    const T* bp = beta.value().data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const T* p = xp + (b * C + c) * H * W;
            T* xh = xhat.data() + (b * C + c) * H * W;
            T* yp = y.data() + (b * C + c) * H * W;
            for (int64_t i = 0; i < H * W; ++i) {
                xh[i] = (p[i] - mean[c]) * inv_std[c];
                yp[i] = gp[c] * xh[i] + bp[c];
            }
        }

    return Var<T>::make_op(
        std::move(y), {x, gamma, beta},
        [m, C, H, W, B, inv_std = std::move(inv_std), xhat = std::move(xhat)](Node<T>& n) {
            const T* dy = n.grad.data();
            const T* gp = n.inputs[1]->value.data();
            // Per-channel sums of dy and dy*xhat.
            Tensor<T> sum_dy({C}), sum_dy_xhat({C});
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    const T* dyp = dy + (b * C + c) * H * W;
                    const T* xh = xhat.data() + (b * C + c) * H * W;
                    T s0 = 0, s1 = 0;
                    for (int64_t i = 0; i < H * W; ++i) {
                        s0 += dyp[i];
                        s1 += dyp[i] * xh[i];
                    }
                    sum_dy[c] += s0;
                    sum_dy_xhat[c] += s1;
                }
            if (n.inputs[1]->requires_grad)
                for (int64_t c = 0; c < C; ++c) n.inputs[1]->grad_buffer()[c] += sum_dy_xhat[c];
            if (n.inputs[2]->requires_grad)
                for (int64_t c = 0; c < C; ++c) n.inputs[2]->grad_buffer()[c] += sum_dy[c];
            if (n.inputs[0]->requires_grad) {
                Tensor<T>& dx = n.inputs[0]->grad_buffer();
                const T inv_m = T(1) / static_cast<T>(m);
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t c = 0; c < C; ++c) {
                        const T* dyp = dy + (b * C + c) * H * W;
                        const T* xh = xhat.data() + (b * C + c) * H * W;
                        T* dxp = dx.data() + (b * C + c) * H * W;
                        const T k = gp[c] * inv_std[c];
                        for (int64_t i = 0; i < H * W; ++i)
                            dxp[i] += k * (dyp[i] - inv_m * sum_dy[c] -
                                           inv_m * xh[i] * sum_dy_xhat[c]);
                    }
            }
        }, 0, "batch_norm");
}

// Batch normalization with fixed (running) statistics: a per-channel affine map.
template <typename T>
Var<T> batch_norm_eval(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                       const Tensor<T>& running_mean, const Tensor<T>& running_var, T eps) {
    const int64_t B = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
    Tensor<T> scale({C}), shift({C});
    for (int64_t c = 0; c < C; ++c) {
        const T inv_std = T(1) / std::sqrt(running_var[c] + eps);
        scale[c] = gamma.value()[c] * inv_std;
        shift[c] = beta.value()[c] - running_mean[c] * gamma.value()[c] * inv_std;
    }
    Tensor<T> y(x.shape());
    const T* xp = x.value().data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const T* p = xp + (b * C + c) * HW;
            T* yp = y.data() + (b * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i) yp[i] = scale[c] * p[i] + shift[c];
        }
    Tensor<T> inv_std_t({C});
    for (int64_t c = 0; c < C; ++c) inv_std_t[c] = T(1) / std::sqrt(running_var[c] + eps);
    return Var<T>::make_op(
        std::move(y), {x, gamma, beta},
        [B, C, HW, running_mean, inv_std = std::move(inv_std_t)](Node<T>& n) {
            const T* dy = n.grad.data();
            const T* gp = n.inputs[1]->value.data();
            const T* xp = n.inputs[0]->value.data();
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c) {
                    const T* dyp = dy + (b * C + c) * HW;
                    if (n.inputs[0]->requires_grad) {
                        T* dxp = n.inputs[0]->grad_buffer().data() + (b * C + c) * HW;
                        const T k = gp[c] * inv_std[c];
                        for (int64_t i = 0; i < HW; ++i) dxp[i] += k * dyp[i];
                    }
                    if (n.inputs[1]->requires_grad || n.inputs[2]->requires_grad) {
                        const T* p = xp + (b * C + c) * HW;
                        T s_dy = 0, s_dyx = 0;
                        for (int64_t i = 0; i < HW; ++i) {
                            s_dy += dyp[i];
                            s_dyx += dyp[i] * (p[i] - running_mean[c]) * inv_std[c];
                        }
                        if (n.inputs[1]->requires_grad) n.inputs[1]->grad_buffer()[c] += s_dyx;
                        if (n.inputs[2]->requires_grad) n.inputs[2]->grad_buffer()[c] += s_dy;
                    }
                }
        }, 0, "batch_norm");
}

// ---- channel pooling (used for context maps) ----

// Per-pixel mean over channels: (B,C,H,W) -> (B,1,H,W).
template <typename T>
Var<T> channel_mean(const Var<T>& x) {
    const int64_t B = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
    Tensor<T> y({B, 1, x.shape()[2], x.shape()[3]});
    const T* xp = x.value().data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < HW; ++i) {
            T acc = 0;
            for (int64_t c = 0; c < C; ++c) acc += xp[(b * C + c) * HW + i];
            y[b * HW + i] = acc / static_cast<T>(C);
        }
    return Var<T>::make_op(std::move(y), {x}, [B, C, HW](Node<T>& n) {
        Tensor<T>& dx = n.inputs[0]->grad_buffer();
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < HW; ++i) {
                const T w = n.grad[b * HW + i] / static_cast<T>(C);
                for (int64_t c = 0; c < C; ++c) dx[(b * C + c) * HW + i] += w;
            }
    }, 0, "channel_mean");
}

// Per-pixel max over channels: (B,C,H,W) -> (B,1,H,W).
template <typename T>
Var<T> channel_max(const Var<T>& x) {
    const int64_t B = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
    Tensor<T> y({B, 1, x.shape()[2], x.shape()[3]});
    std::vector<int32_t> argmax(static_cast<size_t>(B * HW));
    const T* xp = x.value().data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < HW; ++i) {
            T best = xp[(b * C) * HW + i];
            int32_t bc = 0;
            for (int64_t c = 1; c < C; ++c) {
                const T v = xp[(b * C + c) * HW + i];
                if (v > best) {
                    best = v;
                    bc = static_cast<int32_t>(c);
                }
            }
            y[b * HW + i] = best;
            argmax[static_cast<size_t>(b * HW + i)] = bc;
        }
    return Var<T>::make_op(std::move(y), {x},
                           [B, C, HW, argmax = std::move(argmax)](Node<T>& n) {
                               Tensor<T>& dx = n.inputs[0]->grad_buffer();
                               for (int64_t b = 0; b < B; ++b)
                                   for (int64_t i = 0; i < HW; ++i) {
                                       const int64_t c = argmax[static_cast<size_t>(b * HW + i)];
                                       dx[(b * C + c) * HW + i] += n.grad[b * HW + i];
                                   }
                           }, 0, "channel_max");
}

// Concatenate along the channel axis.
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: empty input");
    const int64_t B = parts[0].shape()[0], H = parts[0].shape()[2], W = parts[0].shape()[3];
    int64_t C = 0;
    for (const auto& p : parts) {
        if (p.shape()[0] != B || p.shape()[2] != H || p.shape()[3] != W)
            throw std::invalid_argument("concat_channels: shape mismatch");
        C += p.shape()[1];
    }
    Tensor<T> y({B, C, H, W});
    const int64_t HW = H * W;
    std::vector<int64_t> offsets;
    int64_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const int64_t pc = p.shape()[1];
        for (int64_t b = 0; b < B; ++b)
            std::copy_n(p.value().data() + b * pc * HW, pc * HW,
                        y.data() + (b * C + off) * HW);
        off += pc;
    }
    return Var<T>::make_op(std::move(y), parts, [B, C, HW, offsets](Node<T>& n) {
        for (size_t k = 0; k < n.inputs.size(); ++k) {
            if (!n.inputs[k]->requires_grad) continue;
            Tensor<T>& g = n.inputs[k]->grad_buffer();
            const int64_t pc = g.shape()[1];
            for (int64_t b = 0; b < B; ++b) {
                const T* src = n.grad.data() + (b * C + offsets[k]) * HW;
                T* dst = g.data() + b * pc * HW;
                for (int64_t i = 0; i < pc * HW; ++i) dst[i] += src[i];
            }
        }
    }, 0, "concat");
}

// ---- spatial pooling / resampling ----

template <typename T>
Var<T> max_pool2x2(const Var<T>& x) {
    const int64_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (H % 2 || W % 2) throw std::invalid_argument("max_pool2x2: odd spatial size");
    const int64_t Ho = H / 2, Wo = W / 2;
    Tensor<T> y({B, C, Ho, Wo});
    std::vector<int32_t> arg(static_cast<size_t>(y.numel()));
    const T* xp = x.value().data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* src = xp + bc * H * W;
        T* dst = y.data() + bc * Ho * Wo;
        int32_t* ap = arg.data() + bc * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox) {
                const int64_t base = (2 * oy) * W + 2 * ox;
                const int64_t cand[4] = {base, base + 1, base + W, base + W + 1};
                T best = src[cand[0]];
                int32_t bi = 0;
                for (int j = 1; j < 4; ++j)
                    if (src[cand[j]] > best) {
                        best = src[cand[j]];
                        bi = j;
                    }
                dst[oy * Wo + ox] = best;
                ap[oy * Wo + ox] = static_cast<int32_t>(cand[bi]);
            }
    }
    return Var<T>::make_op(std::move(y), {x},
                           [B, C, H, W, Ho, Wo, arg = std::move(arg)](Node<T>& n) {
                               Tensor<T>& dx = n.inputs[0]->grad_buffer();
                               for (int64_t bc = 0; bc < B * C; ++bc) {
                                   T* dxp = dx.data() + bc * H * W;
                                   const T* dyp = n.grad.data() + bc * Ho * Wo;
                                   const int32_t* ap = arg.data() + bc * Ho * Wo;
                                   for (int64_t i = 0; i < Ho * Wo; ++i) dxp[ap[i]] += dyp[i];
                               }
                           }, 0, "max_pool");
}

// 2x2 average pooling (the down-sampling mode for context maps).
template <typename T>
Var<T> avg_pool2x2(const Var<T>& x) {
    const int64_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (H % 2 || W % 2) throw std::invalid_argument("avg_pool2x2: odd spatial size");
    const int64_t Ho = H / 2, Wo = W / 2;
    Tensor<T> y({B, C, Ho, Wo});
    const T* xp = x.value().data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* src = xp + bc * H * W;
        T* dst = y.data() + bc * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox) {
                const int64_t base = (2 * oy) * W + 2 * ox;
                dst[oy * Wo + ox] =
                    (src[base] + src[base + 1] + src[base + W] + src[base + W + 1]) / T(4);
            }
    }
    return Var<T>::make_op(std::move(y), {x}, [B, C, H, W, Ho, Wo](Node<T>& n) {
        Tensor<T>& dx = n.inputs[0]->grad_buffer();
        for (int64_t bc = 0; bc < B * C; ++bc) {
            T* dxp = dx.data() + bc * H * W;
            const T* dyp = n.grad.data() + bc * Ho * Wo;
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    const T w = dyp[oy * Wo + ox] / T(4);
                    const int64_t base = (2 * oy) * W + 2 * ox;
                    dxp[base] += w;
                    dxp[base + 1] += w;
                    dxp[base + W] += w;
                    dxp[base + W + 1] += w;
                }
        }
    }, 0, "avg_pool");
}

// Nearest-neighbour upsampling by an integer factor.
template <typename T>
Var<T> upsample_nearest(const Var<T>& x, int64_t factor) {
    if (factor < 1) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
    const int64_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const int64_t Ho = H * factor, Wo = W * factor;
    Tensor<T> y({B, C, Ho, Wo});
    const T* xp = x.value().data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        const T* src = xp + bc * H * W;
        T* dst = y.data() + bc * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox)
                dst[oy * Wo + ox] = src[(oy / factor) * W + (ox / factor)];
    }
    return Var<T>::make_op(std::move(y), {x}, [B, C, H, W, Ho, Wo, factor](Node<T>& n) {
        Tensor<T>& dx = n.inputs[0]->grad_buffer();
        for (int64_t bc = 0; bc < B * C; ++bc) {
            T* dxp = dx.data() + bc * H * W;
            const T* dyp = n.grad.data() + bc * Ho * Wo;
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox)
                    dxp[(oy / factor) * W + (ox / factor)] += dyp[oy * Wo + ox];
        }
    }, 0, "upsample");
}

// (B,C,H,W) -> (B,C): mean over spatial positions.
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    const int64_t B = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
    Tensor<T> y({B, C});
    const T* xp = x.value().data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        T acc = 0;
        const T* p = xp + bc * HW;
        for (int64_t i = 0; i < HW; ++i) acc += p[i];
        y[bc] = acc / static_cast<T>(HW);
    }
    return Var<T>::make_op(std::move(y), {x}, [B, C, HW](Node<T>& n) {
        Tensor<T>& dx = n.inputs[0]->grad_buffer();
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const T w = n.grad[bc] / static_cast<T>(HW);
            T* p = dx.data() + bc * HW;
            for (int64_t i = 0; i < HW; ++i) p[i] += w;
        }
    }, 0, "global_avg_pool");
}

// (B,C,H,W) -> (B,C,1,1): sum over spatial positions.
template <typename T>
Var<T> sum_spatial(const Var<T>& x) {
    const int64_t B = x.shape()[0], C = x.shape()[1], HW = x.shape()[2] * x.shape()[3];
    Tensor<T> y({B, C, 1, 1});
    const T* xp = x.value().data();
    for (int64_t bc = 0; bc < B * C; ++bc) {
        T acc = 0;
        const T* p = xp + bc * HW;
        for (int64_t i = 0; i < HW; ++i) acc += p[i];
        y[bc] = acc;
    }
    return Var<T>::make_op(std::move(y), {x}, [B, C, HW](Node<T>& n) {
        Tensor<T>& dx = n.inputs[0]->grad_buffer();
        for (int64_t bc = 0; bc < B * C; ++bc) {
            const T w = n.grad[bc];
            T* p = dx.data() + bc * HW;
            for (int64_t i = 0; i < HW; ++i) p[i] += w;
        }
    }, 0, "sum_spatial");
}

}  // namespace cdgc
