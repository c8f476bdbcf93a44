#pragma once

#include <vector>

#include "cdgc/core/autograd.hpp"

namespace cdgc {

// SGD with classic momentum and L2 weight decay (applied to the gradient).
template <typename T>
class Sgd {
public:
    Sgd(std::vector<Var<T>*> params, T lr, T momentum = T(0.9), T weight_decay = T(0))
        : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
        velocity_.reserve(params_.size());
        for (Var<T>* p : params_) velocity_.emplace_back(p->value().shape());
    }

    void set_lr(T lr) { lr_ = lr; }
    T lr() const { return lr_; }

    void step() {
        for (size_t i = 0; i < params_.size(); ++i) {
            Var<T>& p = *params_[i];
            Tensor<T>& v = velocity_[i];
            Tensor<T>& g = p.grad();
            Tensor<T>& w = p.value();
            for (int64_t j = 0; j < w.numel(); ++j) {
                const T grad = g[j] + weight_decay_ * w[j];
                v[j] = momentum_ * v[j] + grad;
                w[j] -= lr_ * v[j];
            }
        }
    }

    void zero_grad() {
        for (Var<T>* p : params_) p->zero_grad();
    }

private:
    std::vector<Var<T>*> params_;
    T lr_, momentum_, weight_decay_;
    std::vector<Tensor<T>> velocity_;
};

template <typename T>
class Adam {
public:
    Adam(std::vector<Var<T>*> params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
         T eps = T(1e-8))
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (Var<T>* p : params_) {
            m_.emplace_back(p->value().shape());
            v_.emplace_back(p->value().shape());
        }
    }

    void set_lr(T lr) { lr_ = lr; }

    void step() {
        ++t_;
        const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Var<T>& p = *params_[i];
            Tensor<T>& g = p.grad();
            Tensor<T>& w = p.value();
            for (int64_t j = 0; j < w.numel(); ++j) {
                m_[i][j] = beta1_ * m_[i][j] + (T(1) - beta1_) * g[j];
                v_[i][j] = beta2_ * v_[i][j] + (T(1) - beta2_) * g[j] * g[j];
                const T mh = m_[i][j] / bc1;
                const T vh = v_[i][j] / bc2;
                w[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
            }
        }
    }

    void zero_grad() {
        for (Var<T>* p : params_) p->zero_grad();
    }

private:
    std::vector<Var<T>*> params_;
    T lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

}  // namespace cdgc
