#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "attngen/tensor.hpp"

namespace attngen {

// Central-difference validation of the backward pass. fn must rebuild its
// graph on every call (and reseed any PRNG it consumes, so stochastic layers
// replay the same draws). Only the coordinates listed in coords are probed;
// empty coords means all of them. Returns the max relative error with
// denominator max(|analytic|, |numeric|, 1e-8).
template <typename T>
T grad_check(const std::function<Tensor<T>(Tensor<T>&)>& fn, Tensor<T>& point, T h,
             std::vector<std::size_t> coords = {}) {
    point.zero_grad();
    Tensor<T> loss = fn(point);
    backward(loss);
    const std::vector<T> analytic = point.grad();

    if (coords.empty()) {
        coords.resize(point.numel());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    }
    T worst = 0;
    for (std::size_t i : coords) {
        const T saved = point.values()[i];
        point.values()[i] = saved + h;
        const T up = fn(point).item();
        point.values()[i] = saved - h;
        const T down = fn(point).item();
        point.values()[i] = saved;
        const T numeric = (up - down) / (T(2) * h);
        const T denom = std::max({std::abs(analytic[i]), std::abs(numeric), T(1e-8)});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace attngen
