#include "diffrx/diffusion.hpp"

#include "diffrx/error.hpp"

#include <cmath>
#include <string>

namespace diffrx::diffusion {

namespace {

void check_t(std::size_t t, std::size_t lo, std::size_t hi, const char* op) {
    if (t < lo || t > hi)
        throw UsageError(std::string(op) + ": timestep " + std::to_string(t) + " outside [" + std::to_string(lo) +
                         ", " + std::to_string(hi) + "]");
}

} // namespace

double NoiseSchedule::beta(std::size_t t) const {
    check_t(t, 1, steps(), "beta");
    return beta_[t];
}

double NoiseSchedule::alpha(std::size_t t) const { return 1.0 - beta(t); }

double NoiseSchedule::alpha_bar(std::size_t t) const {
    check_t(t, 0, steps(), "alpha_bar");
    return alpha_bar_[t];
}

double NoiseSchedule::posterior_variance(std::size_t t) const {
    check_t(t, 1, steps(), "posterior_variance");
    return posterior_var_[t];
}

std::size_t NoiseSchedule::model_timestep(std::size_t t) const {
    check_t(t, 0, steps(), "model_timestep");
    return timestep_[t];
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> beta, std::vector<std::size_t> timesteps) {
    NoiseSchedule s;
    s.beta_.assign(1, 0.0);
    s.beta_.insert(s.beta_.end(), beta.begin(), beta.end());
    s.timestep_.assign(1, 0);
    s.timestep_.insert(s.timestep_.end(), timesteps.begin(), timesteps.end());
    const std::size_t T = beta.size();
    s.alpha_bar_.assign(T + 1, 1.0);
    s.posterior_var_.assign(T + 1, 0.0);
    for (std::size_t t = 1; t <= T; ++t) {
        s.alpha_bar_[t] = s.alpha_bar_[t - 1] * (1.0 - s.beta_[t]);
        s.posterior_var_[t] = s.beta_[t] * (1.0 - s.alpha_bar_[t - 1]) / (1.0 - s.alpha_bar_[t]);
    }
    return s;
}

NoiseSchedule linear_schedule(std::size_t T, double beta_min, double beta_max) {
    if (T < 2) throw ConfigError("schedule needs T >= 2");
    if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0))
        throw ConfigError("schedule needs 0 < beta_min <= beta_max < 1");
    std::vector<double> beta(T);
    std::vector<std::size_t> ts(T);
    for (std::size_t i = 0; i < T; ++i) {
        beta[i] = beta_min + (beta_max - beta_min) * static_cast<double>(i) / static_cast<double>(T - 1);
        ts[i] = i + 1;
    }
    NoiseSchedule s = NoiseSchedule::from_betas(std::move(beta), std::move(ts));
    s.train_T_ = T;
    s.beta_min_ = beta_min;
    s.beta_max_ = beta_max;
    return s;
}

std::vector<std::size_t> inference_timesteps(std::size_t T, std::size_t steps) {
    if (steps < 1 || steps > T)
        throw ConfigError("inference steps " + std::to_string(steps) + " must lie in [1, " + std::to_string(T) + "]");
    if (steps == 1) return {T};
    std::vector<std::size_t> ts(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        const double pos = 1.0 + static_cast<double>(i) * static_cast<double>(T - 1) / static_cast<double>(steps - 1);
        ts[i] = static_cast<std::size_t>(std::llround(pos));
    }
    return ts;
}

NoiseSchedule respace(const NoiseSchedule& sched, std::size_t steps) {
    const auto picks = inference_timesteps(sched.steps(), steps);
    std::vector<double> beta(picks.size());
    std::vector<std::size_t> ts(picks.size());
    double prev = 1.0;
    for (std::size_t i = 0; i < picks.size(); ++i) {
        const double ab = sched.alpha_bar(picks[i]);
        beta[i] = 1.0 - ab / prev;
        prev = ab;
        ts[i] = sched.model_timestep(picks[i]);
    }
    NoiseSchedule s = NoiseSchedule::from_betas(std::move(beta), std::move(ts));
    s.train_T_ = sched.train_T_;
    s.beta_min_ = sched.beta_min_;
    s.beta_max_ = sched.beta_max_;
    return s;
}

ResourceGrid q_sample(const ResourceGrid& x0, std::size_t t, const ResourceGrid& eps, const NoiseSchedule& sched) {
    require_same_dims(x0, eps, "q_sample");
    check_t(t, 0, sched.steps(), "q_sample");
    const double a = std::sqrt(sched.alpha_bar(t));
    const double b = std::sqrt(1.0 - sched.alpha_bar(t));
    ResourceGrid out(x0.subcarriers(), x0.symbols());
    for (std::size_t i = 0; i < out.size(); ++i) out.set(i, a * x0[i] + b * eps[i]);
    return out;
}

double reverse_sigma(std::size_t t, const NoiseSchedule& sched) {
    return std::sqrt(sched.posterior_variance(t));
}

ResourceGrid reverse_step(const ResourceGrid& x_t, const ResourceGrid& eps_hat, std::size_t t,
                          const NoiseSchedule& sched, const ResourceGrid* z) {
    require_same_dims(x_t, eps_hat, "reverse_step");
    check_t(t, 1, sched.steps(), "reverse_step");
    if (t == 1 && z != nullptr) throw UsageError("reverse_step: no noise may be injected at the final step t=1");
    if (z) require_same_dims(x_t, *z, "reverse_step");
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
    const double coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
    const double sigma = z ? reverse_sigma(t, sched) : 0.0;
    ResourceGrid out(x_t.subcarriers(), x_t.symbols());
    auto ore = out.re(), oim = out.im();
    const auto xr = x_t.re(), xi = x_t.im(), er = eps_hat.re(), ei = eps_hat.im();
    for (std::size_t i = 0; i < out.size(); ++i) {
        ore[i] = inv_sqrt_alpha * (xr[i] - coef * er[i]);
        oim[i] = inv_sqrt_alpha * (xi[i] - coef * ei[i]);
    }
    if (z) {
        const auto zr = z->re(), zi = z->im();
        for (std::size_t i = 0; i < out.size(); ++i) {
            ore[i] += sigma * zr[i];
            oim[i] += sigma * zi[i];
        }
    }
    return out;
}

ResourceGrid forward_renoise(const ResourceGrid& x_prev, const NoiseSchedule& sched, std::size_t t,
                             const ResourceGrid& eps) {
    require_same_dims(x_prev, eps, "forward_renoise");
    check_t(t, 2, sched.steps(), "forward_renoise");
    const double a = std::sqrt(1.0 - sched.beta(t));
    const double b = std::sqrt(sched.beta(t));
    ResourceGrid out(x_prev.subcarriers(), x_prev.symbols());
    for (std::size_t i = 0; i < out.size(); ++i) out.set(i, a * x_prev[i] + b * eps[i]);
    return out;
}

ResourceGrid standard_normal_grid(std::size_t K, std::size_t M, Rng& rng) {
    ResourceGrid g(K, M);
    for (auto& v : g.re()) v = rng.normal();
    for (auto& v : g.im()) v = rng.normal();
    return g;
}

} // namespace diffrx::diffusion
