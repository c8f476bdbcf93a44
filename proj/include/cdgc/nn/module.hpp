#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cdgc/core/autograd.hpp"
#include "cdgc/core/rng.hpp"
#include "cdgc/core/tensor.hpp"

namespace cdgc {

// Base for anything with trainable state. Children register parameters,
// buffers (non-trainable tensors such as BatchNorm running statistics) and
// submodules in their constructors; registration order defines traversal
// order, which keeps initialization and checkpoint layout deterministic.
template <typename T>
class Module {
public:
    Module() = default;
    virtual ~Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;

    void register_parameter(const std::string& name, Var<T>& p) {
        p.set_requires_grad(true);
        params_.emplace_back(name, &p);
    }
    void register_buffer(const std::string& name, Tensor<T>& b) { buffers_.emplace_back(name, &b); }
    void register_module(const std::string& name, Module<T>& m) { children_.emplace_back(name, &m); }

    void named_parameters(const std::string& prefix,
                          std::vector<std::pair<std::string, Var<T>*>>& out) {
        for (auto& [name, p] : params_) out.emplace_back(join(prefix, name), p);
        for (auto& [name, child] : children_) child->named_parameters(join(prefix, name), out);
    }
    std::vector<std::pair<std::string, Var<T>*>> named_parameters() {
        std::vector<std::pair<std::string, Var<T>*>> out;
        named_parameters("", out);
        return out;
    }
    std::vector<Var<T>*> parameters() {
        std::vector<Var<T>*> out;
        for (auto& [name, p] : named_parameters()) out.push_back(p);
        return out;
    }

    void named_buffers(const std::string& prefix,
                       std::vector<std::pair<std::string, Tensor<T>*>>& out) {
        for (auto& [name, b] : buffers_) out.emplace_back(join(prefix, name), b);
        for (auto& [name, child] : children_) child->named_buffers(join(prefix, name), out);
    }
    std::vector<std::pair<std::string, Tensor<T>*>> named_buffers() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        named_buffers("", out);
        return out;
    }

    int64_t parameter_count() {
        int64_t n = 0;
        for (Var<T>* p : parameters()) n += p->numel();
        return n;
    }

    const std::vector<std::pair<std::string, Module<T>*>>& children() const { return children_; }

    void set_training(bool training) {
        training_ = training;
        on_mode_change();
        for (auto& [name, child] : children_) child->set_training(training);
    }
    bool training() const { return training_; }

    // Re-initializes parameters depth-first in registration order.
    void init_params(Rng& rng) {
        init_local(rng);
        for (auto& [name, child] : children_) child->init_params(rng);
    }

    void zero_grad() {
        for (Var<T>* p : parameters()) p->zero_grad();
    }

protected:
    virtual void init_local(Rng&) {}
    virtual void on_mode_change() {}

private:
    static std::string join(const std::string& prefix, const std::string& name) {
        return prefix.empty() ? name : prefix + "." + name;
    }

    std::vector<std::pair<std::string, Var<T>*>> params_;
    std::vector<std::pair<std::string, Tensor<T>*>> buffers_;
    std::vector<std::pair<std::string, Module<T>*>> children_;
    bool training_ = true;
};

}  // namespace cdgc
