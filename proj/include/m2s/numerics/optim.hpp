#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "m2s/numerics/params.hpp"

namespace m2s {

enum class OptimizerKind { Sgd, Adam };

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::Sgd;
    double lr = 0.1;
    double weight_decay = 0.0;
    double momentum = 0.0;  // SGD only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int warmup_epochs = 0;
    int steps_per_epoch = 1;

    long step = 0;               // updates applied so far
    std::vector<Matrix> moment1;  // SGD velocity or Adam first moment
    std::vector<Matrix> moment2;  // Adam second moment

    /// Learning rate for update number `step + 1`: ramps linearly from
    /// lr / warmup_steps to lr over the warmup, then stays at lr.
    double scheduled_lr() const {
        const long warmup_steps = static_cast<long>(warmup_epochs) * std::max(1, steps_per_epoch);
        if (warmup_steps <= 0) return lr;
        const double frac = static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
        return lr * std::min(1.0, frac);
    }
};

namespace detail {

inline void prepare_buffers(const ParameterStore& params, std::span<const Matrix> grads,
                            OptimizerState& state) {
    if (grads.size() != params.size()) {
        throw ShapeError("optimizer: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (grads[i].rows() != params[i].rows() || grads[i].cols() != params[i].cols()) {
            throw ShapeError("optimizer: gradient for '" + params.name(i) + "' is " +
                             shape_string(grads[i]) + ", parameter is " + shape_string(params[i]));
        }
    }
    auto init = [&](std::vector<Matrix>& buf) {
        if (buf.size() == params.size()) return;
        buf.clear();
        for (std::size_t i = 0; i < params.size(); ++i) {
            buf.push_back(Matrix::Zero(params[i].rows(), params[i].cols()));
        }
    };
    init(state.moment1);
    if (state.kind == OptimizerKind::Adam) init(state.moment2);
}

}  // namespace detail

/// theta <- theta - lr * (v), v = momentum * v + g + wd * theta.
inline void sgd_step(ParameterStore& params, std::span<const Matrix> grads, OptimizerState& state) {
    detail::prepare_buffers(params, grads, state);
    const double lr = state.scheduled_lr();
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix g = grads[i];
        if (state.weight_decay != 0.0) g += state.weight_decay * params[i];
        if (state.momentum != 0.0) {
            state.moment1[i] = state.momentum * state.moment1[i] + g;
            params[i] -= lr * state.moment1[i];
        } else {
            params[i] -= lr * g;
        }
    }
    ++state.step;
}

/// Adam with bias-corrected moments and decoupled weight decay.
inline void adam_step(ParameterStore& params, std::span<const Matrix> grads, OptimizerState& state) {
    detail::prepare_buffers(params, grads, state);
    const double lr = state.scheduled_lr();
    const double t = static_cast<double>(state.step + 1);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& m = state.moment1[i];
        Matrix& v = state.moment2[i];
        m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
        v = state.beta2 * v + (1.0 - state.beta2) * grads[i].cwiseProduct(grads[i]);
        if (state.weight_decay != 0.0) params[i] -= (lr * state.weight_decay) * params[i];
        const Matrix update = (m / c1).array() / ((v / c2).array().sqrt() + state.eps);
        params[i] -= lr * update;
    }
    ++state.step;
}

inline void optimizer_step(ParameterStore& params, std::span<const Matrix> grads, OptimizerState& state) {
    if (state.kind == OptimizerKind::Adam) {
        adam_step(params, grads, state);
    } else {
        sgd_step(params, grads, state);
    }
}

}  // namespace m2s
