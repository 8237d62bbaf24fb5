#include "diffrx/numcore/adam.hpp"

#include "diffrx/error.hpp"

#include <cmath>

namespace diffrx::numcore {

AdamState AdamState::for_params(std::span<const Parameter> params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& p : params) {
        s.m.emplace_back(p.value.shape(), 0.0);
        s.v.emplace_back(p.value.shape(), 0.0);
    }
    return s;
}

void adam_step(std::span<Parameter> params, AdamState& state, const AdamConfig& cfg) {
    if (state.m.size() != params.size() || state.v.size() != params.size())
        throw DimensionError("adam_step: optimizer state holds " + std::to_string(state.m.size()) +
                             " tensors for " + std::to_string(params.size()) + " parameters");
    ++state.step;
    const Scalar c1 = 1.0 - std::pow(cfg.beta1, static_cast<Scalar>(state.step));
    const Scalar c2 = 1.0 - std::pow(cfg.beta2, static_cast<Scalar>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        if (p.grad.empty()) continue;
        if (p.grad.shape() != p.value.shape() || state.m[i].shape() != p.value.shape())
            throw DimensionError("adam_step: shape mismatch for parameter '" + p.name + "' " +
                                 shape_str(p.value.shape()));
        auto val = p.value.data();
        auto g = p.grad.data();
        auto m = state.m[i].data();
        auto v = state.v[i].data();
        for (std::size_t j = 0; j < val.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const Scalar mhat = m[j] / c1;
            const Scalar vhat = v[j] / c2;
            val[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

} // namespace diffrx::numcore
