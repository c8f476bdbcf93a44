#pragma once

#include <stdexcept>
#include <vector>

#include "cdgc/core/gemm.hpp"
#include "cdgc/core/tensor.hpp"

namespace cdgc {
namespace detail {

// Reusable per-thread scratch to avoid reallocating the large im2col
// buffers on every layer call.
template <typename T>
std::vector<T>& workspace(int slot, int64_t n) {
    thread_local std::vector<T> ws[4];
    auto& buf = ws[slot];
    if (static_cast<int64_t>(buf.size()) < n) buf.resize(static_cast<size_t>(n));
    return buf;
}

struct ConvGeom {
    int64_t batch, channels, img_h, img_w;  // image side (the side with C*k*k columns)
    int64_t out_h, out_w;                   // cols side spatial
    int64_t k, stride, pad;

    int64_t cols_rows() const { return batch * out_h * out_w; }
    int64_t cols_width() const { return channels * k * k; }
};

inline int64_t conv_out_size(int64_t in, int64_t k, int64_t stride, int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// img (B,C,Hi,Wi) -> cols (B*Ho*Wo, C*k*k), zero-padded out-of-range taps.
template <typename T>
void im2col(const T* img, const ConvGeom& g, T* cols) {
    const int64_t kk = g.k * g.k;
    const int64_t ckk = g.channels * kk;
    for (int64_t b = 0; b < g.batch; ++b) {
        const T* imb = img + b * g.channels * g.img_h * g.img_w;
        T* row = cols + b * g.out_h * g.out_w * ckk;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
            for (int64_t ox = 0; ox < g.out_w; ++ox, row += ckk) {
                const int64_t iy0 = oy * g.stride - g.pad;
                const int64_t ix0 = ox * g.stride - g.pad;
                for (int64_t c = 0; c < g.channels; ++c) {
                    const T* imc = imb + c * g.img_h * g.img_w;
                    T* dst = row + c * kk;
                    for (int64_t ky = 0; ky < g.k; ++ky) {
                        const int64_t iy = iy0 + ky;
                        if (iy < 0 || iy >= g.img_h) {
                            for (int64_t kx = 0; kx < g.k; ++kx) dst[ky * g.k + kx] = T(0);
                            continue;
                        }
                        const T* src = imc + iy * g.img_w;
                        for (int64_t kx = 0; kx < g.k; ++kx) {
                            const int64_t ix = ix0 + kx;
                            dst[ky * g.k + kx] = (ix >= 0 && ix < g.img_w) ? src[ix] : T(0);
                        }
                    }
                }
            }
        }
    }
}

// cols (B*Ho*Wo, C*k*k) -> img (B,C,Hi,Wi), accumulating overlapping taps.
template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* img) {
    const int64_t kk = g.k * g.k;
    const int64_t ckk = g.channels * kk;
    std::fill(img, img + g.batch * g.channels * g.img_h * g.img_w, T(0));
    for (int64_t b = 0; b < g.batch; ++b) {
        T* imb = img + b * g.channels * g.img_h * g.img_w;
        const T* row = cols + b * g.out_h * g.out_w * ckk;
        for (int64_t oy = 0; oy < g.out_h; ++oy) {
            for (int64_t ox = 0; ox < g.out_w; ++ox, row += ckk) {
                const int64_t iy0 = oy * g.stride - g.pad;
                const int64_t ix0 = ox * g.stride - g.pad;
                for (int64_t c = 0; c < g.channels; ++c) {
                    T* imc = imb + c * g.img_h * g.img_w;
                    const T* src = row + c * kk;
                    for (int64_t ky = 0; ky < g.k; ++ky) {
                        const int64_t iy = iy0 + ky;
                        if (iy < 0 || iy >= g.img_h) continue;
                        T* dst = imc + iy * g.img_w;
                        for (int64_t kx = 0; kx < g.k; ++kx) {
                            const int64_t ix = ix0 + kx;
                            if (ix >= 0 && ix < g.img_w) dst[ix] += src[ky * g.k + kx];
                        }
                    }
                }
            }
        }
    }
}

// (B,C,H,W) -> rows (B*H*W, C)
template <typename T>
void nchw_to_rows(const T* x, int64_t b, int64_t c, int64_t hw, T* rows) {
    for (int64_t n = 0; n < b; ++n) {
        const T* xb = x + n * c * hw;
        T* rb = rows + n * hw * c;
        for (int64_t ch = 0; ch < c; ++ch) {
            const T* src = xb + ch * hw;
            for (int64_t i = 0; i < hw; ++i) rb[i * c + ch] = src[i];
        }
    }
}

// rows (B*H*W, C) -> (B,C,H,W)
template <typename T>
void rows_to_nchw(const T* rows, int64_t b, int64_t c, int64_t hw, T* x) {
    for (int64_t n = 0; n < b; ++n) {
        const T* rb = rows + n * hw * c;
        T* xb = x + n * c * hw;
        for (int64_t ch = 0; ch < c; ++ch) {
            T* dst = xb + ch * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] = rb[i * c + ch];
        }
    }
}

}  // namespace detail

// y = conv2d(x, w, b); x (B,Ci,H,W), w (Co,Ci,k,k), b (Co) or empty.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                         int64_t stride, int64_t pad) {
    const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Co = w.dim(0), k = w.dim(2);
    if (w.dim(1) != Ci) throw std::invalid_argument("conv2d: channel mismatch");
    const int64_t Ho = detail::conv_out_size(H, k, stride, pad);
    const int64_t Wo = detail::conv_out_size(W, k, stride, pad);
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: output size would be empty");

    detail::ConvGeom g{B, Ci, H, W, Ho, Wo, k, stride, pad};
    const int64_t rows = g.cols_rows(), ckk = g.cols_width();
    auto& cols = detail::workspace<T>(0, rows * ckk);
    detail::im2col(x.data(), g, cols.data());

    auto& out_rows = detail::workspace<T>(1, rows * Co);
    // out_rows (rows,Co) = cols (rows,ckk) * w^T (ckk,Co)
    gemm(false, true, rows, Co, ckk, T(1), cols.data(), ckk, w.data(), ckk, T(0), out_rows.data(),
         Co);
    if (bias.numel() > 0) {
        for (int64_t r = 0; r < rows; ++r) {
            T* p = out_rows.data() + r * Co;
            for (int64_t co = 0; co < Co; ++co) p[co] += bias[co];
        }
    }
    Tensor<T> y({B, Co, Ho, Wo});
    detail::rows_to_nchw(out_rows.data(), B, Co, Ho * Wo, y.data());
    return y;
}

// Gradients of conv2d. Pass nullptr to skip a term.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, int64_t stride,
                     int64_t pad, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
    const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Co = w.dim(0), k = w.dim(2);
    const int64_t Ho = dy.dim(2), Wo = dy.dim(3);
    detail::ConvGeom g{B, Ci, H, W, Ho, Wo, k, stride, pad};
    const int64_t rows = g.cols_rows(), ckk = g.cols_width();

    auto& dy_rows = detail::workspace<T>(2, rows * Co);
    detail::nchw_to_rows(dy.data(), B, Co, Ho * Wo, dy_rows.data());

    if (db) {
        for (int64_t co = 0; co < Co; ++co) {
            T acc = 0;
            for (int64_t r = 0; r < rows; ++r) acc += dy_rows[r * Co + co];
            (*db)[co] += acc;
        }
    }
    if (dw) {
        auto& cols = detail::workspace<T>(0, rows * ckk);
        detail::im2col(x.data(), g, cols.data());
        // dw (Co,ckk) += dy_rows^T (Co,rows) * cols (rows,ckk)
        gemm(true, false, Co, ckk, rows, T(1), dy_rows.data(), Co, cols.data(), ckk, T(1),
             dw->data(), ckk);
    }
    if (dx) {
        auto& dcols = detail::workspace<T>(3, rows * ckk);
        // dcols (rows,ckk) = dy_rows (rows,Co) * w (Co,ckk)
        gemm(false, false, rows, ckk, Co, T(1), dy_rows.data(), Co, w.data(), ckk, T(0),
             dcols.data(), ckk);
        Tensor<T> dx_local({B, Ci, H, W});
        detail::col2im(dcols.data(), g, dx_local.data());
        T* out = dx->data();
        const T* src = dx_local.data();
        for (int64_t i = 0; i < dx_local.numel(); ++i) out[i] += src[i];
    }
}

// y = conv_transpose2d(x, w, b); x (B,Ci,H,W), w (Ci,Co,k,k), b (Co) or empty.
// Output spatial size is (H-1)*stride - 2*pad + k.
template <typename T>
Tensor<T> conv_transpose2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                                   int64_t stride, int64_t pad) {
    const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (w.dim(0) != Ci) throw std::invalid_argument("conv_transpose2d: channel mismatch");
    const int64_t Co = w.dim(1), k = w.dim(2);
    const int64_t Ho = (H - 1) * stride - 2 * pad + k;
    const int64_t Wo = (W - 1) * stride - 2 * pad + k;
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv_transpose2d: output size would be empty");

    // Geometry mirrors a conv whose input is y and output is x.
    detail::ConvGeom g{B, Co, Ho, Wo, H, W, k, stride, pad};
    const int64_t rows = g.cols_rows(), ckk = g.cols_width();  // rows = B*H*W, ckk = Co*k*k

    auto& x_rows = detail::workspace<T>(1, rows * Ci);
    detail::nchw_to_rows(x.data(), B, Ci, H * W, x_rows.data());
    auto& cols = detail::workspace<T>(0, rows * ckk);
    // cols (rows,CoKK) = x_rows (rows,Ci) * w (Ci,CoKK)
    gemm(false, false, rows, ckk, Ci, T(1), x_rows.data(), Ci, w.data(), ckk, T(0), cols.data(),
         ckk);

    Tensor<T> y({B, Co, Ho, Wo});
    detail::col2im(cols.data(), g, y.data());
    if (bias.numel() > 0) {
        for (int64_t b = 0; b < B; ++b)
            for (int64_t co = 0; co < Co; ++co) {
                T* p = y.data() + (b * Co + co) * Ho * Wo;
                for (int64_t i = 0; i < Ho * Wo; ++i) p[i] += bias[co];
            }
    }
    return y;
}

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                               int64_t stride, int64_t pad, Tensor<T>* dx, Tensor<T>* dw,
                               Tensor<T>* db) {
    const int64_t B = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Co = w.dim(1), k = w.dim(2);
    const int64_t Ho = dy.dim(2), Wo = dy.dim(3);
    detail::ConvGeom g{B, Co, Ho, Wo, H, W, k, stride, pad};
    const int64_t rows = g.cols_rows(), ckk = g.cols_width();

    if (db) {
        for (int64_t b = 0; b < B; ++b)
            for (int64_t co = 0; co < Co; ++co) {
                const T* p = dy.data() + (b * Co + co) * Ho * Wo;
                T acc = 0;
                for (int64_t i = 0; i < Ho * Wo; ++i) acc += p[i];
                (*db)[co] += acc;
            }
    }
    auto& dcols = detail::workspace<T>(3, rows * ckk);
    detail::im2col(dy.data(), g, dcols.data());
    if (dx) {
        auto& dx_rows = detail::workspace<T>(2, rows * Ci);
        // dx_rows (rows,Ci) = dcols (rows,CoKK) * w^T (CoKK,Ci)
        gemm(false, true, rows, Ci, ckk, T(1), dcols.data(), ckk, w.data(), ckk, T(0),
             dx_rows.data(), Ci);
        Tensor<T> dx_local({B, Ci, H, W});
        detail::rows_to_nchw(dx_rows.data(), B, Ci, H * W, dx_local.data());
        T* out = dx->data();
        const T* src = dx_local.data();
        for (int64_t i = 0; i < dx_local.numel(); ++i) out[i] += src[i];
    }
    if (dw) {
        auto& x_rows = detail::workspace<T>(1, rows * Ci);
        detail::nchw_to_rows(x.data(), B, Ci, H * W, x_rows.data());
        // dw (Ci,CoKK) += x_rows^T (Ci,rows) * dcols (rows,CoKK)
        gemm(true, false, Ci, ckk, rows, T(1), x_rows.data(), Ci, dcols.data(), ckk, T(1),
             dw->data(), ckk);
    }
}

}  // namespace cdgc
