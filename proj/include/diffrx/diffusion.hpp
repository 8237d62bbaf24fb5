#pragma once

#include "diffrx/resource_grid.hpp"
#include "diffrx/rng.hpp"

#include <cstddef>
#include <vector>

namespace diffrx::diffusion {

// DDPM timestep table, t in 1..T with alpha_bar(0) = 1.
//
// A schedule may be a respaced view of a longer training schedule: step i
// then stands for training timestep model_timestep(i), and its beta is chosen
// so alpha_bar(i) equals the training alpha_bar at that timestep.
class NoiseSchedule {
public:
    NoiseSchedule() = default;

    std::size_t steps() const noexcept { return beta_.size() - 1; }
    double beta(std::size_t t) const;
    double alpha(std::size_t t) const;
    double alpha_bar(std::size_t t) const;  // t in 0..T
    // beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)
    double posterior_variance(std::size_t t) const;
    // Training timestep whose embedding the network sees at step t.
    std::size_t model_timestep(std::size_t t) const;

    // Linear beta ramp parameters of the training schedule this came from.
    std::size_t train_steps() const noexcept { return train_T_; }
    double beta_min() const noexcept { return beta_min_; }
    double beta_max() const noexcept { return beta_max_; }

    friend NoiseSchedule linear_schedule(std::size_t T, double beta_min, double beta_max);
    friend NoiseSchedule respace(const NoiseSchedule& sched, std::size_t steps);

private:
    static NoiseSchedule from_betas(std::vector<double> beta, std::vector<std::size_t> timesteps);

    // index 0 is the t = 0 convention entry
    std::vector<double> beta_{0.0};
    std::vector<double> alpha_bar_{1.0};
    std::vector<double> posterior_var_{0.0};
    std::vector<std::size_t> timestep_{0};
    std::size_t train_T_ = 0;
    double beta_min_ = 0.0;
    double beta_max_ = 0.0;
};

NoiseSchedule linear_schedule(std::size_t T, double beta_min, double beta_max);

// Inference timesteps: `steps` values spread uniformly over 1..T, always
// including 1 and T (only T when steps == 1).
std::vector<std::size_t> inference_timesteps(std::size_t T, std::size_t steps);

// Sub-schedule over inference_timesteps(sched.steps(), steps).
NoiseSchedule respace(const NoiseSchedule& sched, std::size_t steps);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, t in 0..T.
ResourceGrid q_sample(const ResourceGrid& x0, std::size_t t, const ResourceGrid& eps, const NoiseSchedule& sched);

// x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t) + sigma_t z.
// z must be null at t = 1; a null z at t > 1 is treated as zero.
ResourceGrid reverse_step(const ResourceGrid& x_t, const ResourceGrid& eps_hat, std::size_t t,
                          const NoiseSchedule& sched, const ResourceGrid* z = nullptr);

// Std sigma_t of the noise added by reverse_step at t (0 at t = 1).
double reverse_sigma(std::size_t t, const NoiseSchedule& sched);

// One forward step: x_t = sqrt(1 - beta_t) x_{t-1} + sqrt(beta_t) eps, t in 2..T.
ResourceGrid forward_renoise(const ResourceGrid& x_prev, const NoiseSchedule& sched, std::size_t t,
                             const ResourceGrid& eps);

// Grid with i.i.d. N(0,1) entries in each real plane.
ResourceGrid standard_normal_grid(std::size_t K, std::size_t M, Rng& rng);

} // namespace diffrx::diffusion
