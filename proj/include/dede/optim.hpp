#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "dede/tensor.hpp"

namespace dede {

enum class OptimMode { adam, sgd };

// First/second moment accumulators mirroring the parameter shapes.
template <class S>
struct AdamState {
    std::vector<std::vector<S>> m;
    std::vector<std::vector<S>> v;
    int64_t step = 0;
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);

    void init(const std::vector<TensorPtr<S>>& params) {
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(p->data.size(), S(0));
            v.emplace_back(p->data.size(), S(0));
        }
        step = 0;
    }
};

// One Adam update with bias correction across a parameter set.
template <class S>
void adam_step(const std::vector<TensorPtr<S>>& params, AdamState<S>& state, S lr) {
    if (state.m.size() != params.size()) throw ContractError("adam_step: state/parameter count mismatch");
    if (state.step >= (int64_t{1} << 62)) throw ContractError("adam_step: step counter overflow");
    state.step += 1;
    S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(state.beta1), static_cast<double>(state.step)));
    S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(state.beta2), static_cast<double>(state.step)));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = *params[i];
        if (p.grad.empty()) continue; // no gradient flowed this step
        if (p.grad.size() != p.data.size() || state.m[i].size() != p.data.size())
            throw ContractError("adam_step: shape mismatch on parameter " + std::to_string(i));
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (size_t j = 0; j < p.data.size(); ++j) {
            S g = p.grad[j];
            m[j] = state.beta1 * m[j] + (S(1) - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (S(1) - state.beta2) * g * g;
            S mhat = m[j] / bc1;
            S vhat = v[j] / bc2;
            p.data[j] -= lr * mhat / (static_cast<S>(std::sqrt(static_cast<double>(vhat))) + state.eps);
        }
    }
}

// Plain gradient descent: theta <- theta - lr * grad.
template <class S>
void sgd_step(const std::vector<TensorPtr<S>>& params, S lr) {
    for (const auto& ptr : params) {
        auto& p = *ptr;
        if (p.grad.empty()) continue;
        if (p.grad.size() != p.data.size())
            throw ContractError("sgd_step: grad/data length mismatch");
        for (size_t j = 0; j < p.data.size(); ++j) p.data[j] -= lr * p.grad[j];
    }
}

template <class S>
class Optimizer {
public:
    Optimizer(std::vector<TensorPtr<S>> params, S lr, OptimMode mode = OptimMode::adam)
        : params_(std::move(params)), lr_(lr), mode_(mode) {
        state_.init(params_);
    }

    void step() {
        if (mode_ == OptimMode::adam)
            adam_step(params_, state_, lr_);
        else
            sgd_step(params_, lr_);
    }

    void zero_grad() {
        for (const auto& p : params_) p->zero_grad();
    }

    const std::vector<TensorPtr<S>>& params() const { return params_; }
    AdamState<S>& state() { return state_; }
    S learning_rate() const { return lr_; }
    void set_learning_rate(S lr) { lr_ = lr; }

private:
    std::vector<TensorPtr<S>> params_;
    S lr_;
    OptimMode mode_;
    AdamState<S> state_;
};

} // namespace dede
