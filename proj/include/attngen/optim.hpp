#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "attngen/errors.hpp"
#include "attngen/tensor.hpp"

namespace attngen {

// Named trainable tensor. decay marks weight-decay eligibility: convolution,
// linear, and embedding weights carry it; biases and normalization affine
// terms do not.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> tensor;
    bool decay = false;
};

template <typename T>
struct AdamState {
    std::uint64_t step_count = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

// Bias-corrected Adam. Weight decay enters as g + wd*theta on decay-flagged
// parameters; the stored grad buffers are left untouched for the caller to
// reset. Parameter order fixes the update order, so trajectories are
// bit-reproducible.
template <typename T>
void adam_step(std::vector<Parameter<T>>& params, AdamState<T>& state, T lr, T beta1, T beta2,
               T eps, T weight_decay) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t p = 0; p < params.size(); ++p) {
            state.m[p].assign(params[p].tensor.numel(), T(0));
            state.v[p].assign(params[p].tensor.numel(), T(0));
        }
    }
    if (state.m.size() != params.size())
        throw UsageError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                         " parameters, got " + std::to_string(params.size()));
    state.step_count += 1;
    const T t = static_cast<T>(state.step_count);
    const T bc1 = T(1) - std::pow(beta1, t);
    const T bc2 = T(1) - std::pow(beta2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& param = params[p];
        if (!param.tensor.has_grad())
            throw UsageError("adam_step: parameter '" + param.name + "' has no gradient");
        auto& theta = param.tensor.values();
        const auto& g = param.tensor.grad();
        auto& m = state.m[p];
        auto& v = state.v[p];
        const T wd = param.decay ? weight_decay : T(0);
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const T geff = g[i] + wd * theta[i];
            m[i] = beta1 * m[i] + (T(1) - beta1) * geff;
            v[i] = beta2 * v[i] + (T(1) - beta2) * geff * geff;
            const T mhat = m[i] / bc1;
            const T vhat = v[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

// Global L2-norm clipping across all parameter grads; returns the pre-clip
// norm. Serial accumulation in parameter order keeps the value reproducible.
template <typename T>
T clip_grad_norm(std::vector<Parameter<T>>& params, T max_norm) {
    T sq = 0;
    for (auto& p : params)
        for (T g : p.tensor.grad()) sq += g * g;
    const T norm = std::sqrt(sq);
    if (norm > max_norm) {
        const T s = max_norm / norm;
        for (auto& p : params)
            for (T& g : p.tensor.grad()) g *= s;
    }
    return norm;
}

}  // namespace attngen
