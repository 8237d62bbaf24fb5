#pragma once

#include "diffrx/numcore/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace diffrx::numcore {

struct AdamConfig {
    Scalar lr = 1e-3;
    Scalar beta1 = 0.9;
    Scalar beta2 = 0.999;
    Scalar eps = 1e-8;
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::int64_t step = 0;

    // Zero moments shaped like `params`.
    static AdamState for_params(std::span<const Parameter> params);
};

// One bias-corrected Adam update of every parameter from its grad.
void adam_step(std::span<Parameter> params, AdamState& state, const AdamConfig& cfg);

} // namespace diffrx::numcore
