#pragma once

#include "diffrx/chansim.hpp"
#include "diffrx/denoiser.hpp"
#include "diffrx/diffusion.hpp"
#include "diffrx/numcore/adam.hpp"
#include "diffrx/pilots.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace diffrx::trainer {

// Pilot pattern drawn afresh for every training/evaluation sample.
struct PilotSpec {
    pilots::Scheme scheme = pilots::Scheme::comb;
    std::size_t spacing = 4;          // comb / lattice frequency stride
    std::size_t time_stride = 1;      // lattice
    std::vector<std::size_t> block_symbols{0};
    bool randomize_offset = true;

    void validate(std::size_t K, std::size_t M) const;
    pilots::PilotMask draw(std::size_t K, std::size_t M, Rng& rng) const;
    // Nominal pilot fraction, e.g. 1/4 for comb spacing 4.
    double nominal_density() const;
    // Short file-name tag, e.g. "d4" for comb spacing 4.
    std::string tag() const;
};

struct ScheduleSpec {
    std::size_t T = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.02;

    diffusion::NoiseSchedule build() const;
};

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    double snr_low_db = 0.0;
    double snr_high_db = 30.0;
    PilotSpec pilots;
    ScheduleSpec schedule;
    std::size_t val_every = 1;  // epochs between validation/checkpoints
    std::vector<double> lr_milestones{0.6, 0.85};  // fractions of epochs; lr halves at each
    // Joint mode: each sample draws its comb spacing from this list instead
    // of using pilots.spacing.
    std::vector<std::size_t> joint_spacings;

    void validate() const;
    double lr_at_epoch(std::size_t epoch) const;
};

struct TrainingPair {
    const ResourceGrid* channel;
    pilots::PilotObservation obs;
};

struct StepResult {
    double loss = 0.0;
    double grad_norm = 0.0;
};

// One epsilon-prediction step on a batch: per sample t ~ U{1..T}, eps ~ N(0,I),
// x_t = q_sample(H, t, eps), loss = mean over REs of |eps - eps_hat|^2 (both
// real planes summed), followed by one Adam update.
StepResult train_step(denoiser::Denoiser& net, numcore::AdamState& adam, std::span<const TrainingPair> batch,
                      const diffusion::NoiseSchedule& sched, Rng& rng, double lr);

// Validation set with frozen (mask, pilot noise, t, eps) draws.
class ValidationSet {
public:
    ValidationSet(const chansim::Dataset& val, const TrainConfig& cfg, std::uint64_t seed);
    double loss(const denoiser::Denoiser& net) const;
    std::size_t size() const { return conds_.size(); }

private:
    std::vector<numcore::Tensor> conds_;
    std::vector<ResourceGrid> eps_;
    std::vector<std::size_t> t_;
    denoiser::GridLayout layout_;
};

struct MetricsRow {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double lr = 0.0;
    double wall_ms = 0.0;
};

// append adds rows to an existing log without repeating the header.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows, bool append = false);

// Model + optimizer + progress; everything needed to resume.
struct TrainState {
    denoiser::Denoiser net;
    numcore::AdamState adam;
    std::size_t step = 0;
    std::size_t epoch = 0;  // epochs completed
};

TrainState initial_state(const denoiser::DenoiserConfig& net_cfg, std::uint64_t seed);

struct TrainResult {
    TrainState last;
    denoiser::Denoiser best;
    double best_val = std::numeric_limits<double>::infinity();
    double init_val = 0.0;
    std::vector<MetricsRow> metrics;
    bool diverged = false;
};

// Called after every validation with the current state and whether it is
// the best so far.
using CheckpointHook = std::function<void(const TrainState&, double val_loss, bool is_best)>;

TrainResult train(const TrainConfig& cfg, const chansim::Dataset& train_set, const chansim::Dataset& val_set,
                  TrainState state, const CheckpointHook& hook = {});

// Checkpoint = denoiser tensors + schedule + pilot density + optimizer state.
std::vector<numcore::NamedTensor> checkpoint_tensors(const TrainState& state, const TrainConfig& cfg,
                                                     std::size_t K, std::size_t M);
void save_train_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& cfg,
                           std::size_t K, std::size_t M);

struct LoadedCheckpoint {
    TrainState state;
    ScheduleSpec schedule;
    double density = 0.0;
    std::size_t K = 0, M = 0;
};
LoadedCheckpoint load_train_checkpoint(const std::filesystem::path& path);

} // namespace diffrx::trainer
