#pragma once

#include <stdexcept>
#include <string>

#include "cdgc/core/ops.hpp"
#include "cdgc/core/ops_nn.hpp"
#include "cdgc/nn/module.hpp"

namespace cdgc {

// Weights ~ N(0, 2/fan_in), biases zero (He initialization).
template <typename T>
void he_fill(Tensor<T>& w, int64_t fan_in, Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(rng.normal(0.0, std));
}

template <typename T>
class Conv2d : public Module<T> {
public:
    Conv2d(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride, int64_t pad, bool bias = true)
        : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad),
          weight_(Tensor<T>({out_ch, in_ch, k, k})) {
        this->register_parameter("weight", weight_);
        if (bias) {
            bias_ = Var<T>(Tensor<T>({out_ch}));
            this->register_parameter("bias", bias_);
        }
    }

    Var<T> forward(const Var<T>& x) { return conv2d(x, weight_, bias_, stride_, pad_); }

    Var<T>& weight() { return weight_; }
    Var<T>& bias() { return bias_; }
    int64_t in_channels() const { return in_ch_; }
    int64_t out_channels() const { return out_ch_; }

protected:
    void init_local(Rng& rng) override {
        he_fill(weight_.value(), in_ch_ * k_ * k_, rng);
        if (bias_.defined()) bias_.value().fill(T(0));
    }

private:
    int64_t in_ch_, out_ch_, k_, stride_, pad_;
    Var<T> weight_;
    Var<T> bias_;
};

template <typename T>
class ConvTranspose2d : public Module<T> {
public:
    ConvTranspose2d(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride, int64_t pad,
                    bool bias = true)
        : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad),
          weight_(Tensor<T>({in_ch, out_ch, k, k})) {
        this->register_parameter("weight", weight_);
        if (bias) {
            bias_ = Var<T>(Tensor<T>({out_ch}));
            this->register_parameter("bias", bias_);
        }
    }

    Var<T> forward(const Var<T>& x) { return conv_transpose2d(x, weight_, bias_, stride_, pad_); }

    Var<T>& weight() { return weight_; }

protected:
    void init_local(Rng& rng) override {
        he_fill(weight_.value(), in_ch_ * k_ * k_, rng);
        if (bias_.defined()) bias_.value().fill(T(0));
    }

private:
    int64_t in_ch_, out_ch_, k_, stride_, pad_;
    Var<T> weight_;
    Var<T> bias_;
};

template <typename T>
class BatchNorm2d : public Module<T> {
public:
    explicit BatchNorm2d(int64_t channels, T eps = T(1e-5), T momentum = T(0.1))
        : channels_(channels), eps_(eps), momentum_(momentum),
          gamma_(Tensor<T>({channels}, T(1))), beta_(Tensor<T>({channels})),
          running_mean_({channels}), running_var_(Shape{channels}, T(1)) {
        this->register_parameter("weight", gamma_);
        this->register_parameter("bias", beta_);
        this->register_buffer("running_mean", running_mean_);
        this->register_buffer("running_var", running_var_);
    }

    Var<T> forward(const Var<T>& x) {
        if (x.shape()[1] != channels_) throw std::invalid_argument("batch_norm: channel mismatch");
        if (this->training()) {
            Tensor<T> mean, var;
            Var<T> y = batch_norm_train(x, gamma_, beta_, eps_, &mean, &var);
            if (update_running_stats_) {
                for (int64_t c = 0; c < channels_; ++c) {
                    running_mean_[c] = (T(1) - momentum_) * running_mean_[c] + momentum_ * mean[c];
                    running_var_[c] = (T(1) - momentum_) * running_var_[c] + momentum_ * var[c];
                }
            }
            return y;
        }
        return batch_norm_eval(x, gamma_, beta_, running_mean_, running_var_, eps_);
    }

    // Gradient-check harnesses disable this so repeated forwards are pure.
    void set_update_running_stats(bool v) { update_running_stats_ = v; }

    Var<T>& gamma() { return gamma_; }
    Var<T>& beta() { return beta_; }

protected:
    void init_local(Rng&) override {
        gamma_.value().fill(T(1));
        beta_.value().fill(T(0));
        running_mean_.fill(T(0));
        running_var_.fill(T(1));
    }

private:
    int64_t channels_;
    T eps_, momentum_;
    Var<T> gamma_, beta_;
    Tensor<T> running_mean_, running_var_;
    bool update_running_stats_ = true;
};

template <typename T>
class Linear : public Module<T> {
public:
    Linear(int64_t in, int64_t out, bool bias = true)
        : in_(in), out_(out), weight_(Tensor<T>({out, in})) {
        this->register_parameter("weight", weight_);
        if (bias) {
            bias_ = Var<T>(Tensor<T>({out}));
            this->register_parameter("bias", bias_);
        }
    }

    Var<T> forward(const Var<T>& x) { return linear(x, weight_, bias_); }

    Var<T>& weight() { return weight_; }

protected:
    void init_local(Rng& rng) override {
        he_fill(weight_.value(), in_, rng);
        if (bias_.defined()) bias_.value().fill(T(0));
    }

private:
    int64_t in_, out_;
    Var<T> weight_;
    Var<T> bias_;
};

// conv + BatchNorm + ReLU, the C(i,j,k) building block of the context network.
template <typename T>
class ConvBnRelu : public Module<T> {
public:
    ConvBnRelu(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride, int64_t pad)
        : conv_(in_ch, out_ch, k, stride, pad, /*bias=*/false), bn_(out_ch) {
        this->register_module("conv", conv_);
        this->register_module("bn", bn_);
    }

    Var<T> forward(const Var<T>& x) { return relu(bn_.forward(conv_.forward(x))); }

    Conv2d<T>& conv() { return conv_; }
    BatchNorm2d<T>& bn() { return bn_; }

private:
    Conv2d<T> conv_;
    BatchNorm2d<T> bn_;
};

// Transposed-conv + BatchNorm + ReLU decoder group.
template <typename T>
class DeconvBnRelu : public Module<T> {
public:
    DeconvBnRelu(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride, int64_t pad)
        : conv_(in_ch, out_ch, k, stride, pad, /*bias=*/false), bn_(out_ch) {
        this->register_module("conv", conv_);
        this->register_module("bn", bn_);
    }

    Var<T> forward(const Var<T>& x) { return relu(bn_.forward(conv_.forward(x))); }

    ConvTranspose2d<T>& conv() { return conv_; }

private:
    ConvTranspose2d<T> conv_;
    BatchNorm2d<T> bn_;
};

template <typename T>
void he_init(Module<T>& model, uint64_t seed) {
    Rng rng(seed);
    model.init_params(rng);
}

}  // namespace cdgc
