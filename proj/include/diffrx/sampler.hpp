#pragma once

#include "diffrx/chansim.hpp"
#include "diffrx/denoiser.hpp"
#include "diffrx/diffusion.hpp"
#include "diffrx/pilots.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace diffrx::sampler {

enum class Pipeline { vanilla, repaint };

const char* pipeline_name(Pipeline p);
Pipeline parse_pipeline(const std::string& name);

struct SamplerConfig {
    std::size_t steps = 370;
    Pipeline pipeline = Pipeline::repaint;
    std::size_t resample_count = 0;  // U; 0 picks the default for `steps`
    std::size_t jump_length = 0;     // j; 0 picks the default for `steps`
    std::size_t candidates = 1;
    std::uint64_t seed = 1;
    bool soft_mask = false;
    // Binary mode only: the last known-region replacement puts the LS values
    // back at the pilots.
    bool terminal_overwrite = true;
    // Rejects unseeded generators.
    bool reproducible = false;

    void validate(std::size_t T) const;
    std::size_t effective_U() const;
    std::size_t effective_j() const;
};

// Respaced-step indices visited by the RePaint loop. A step s -> s-1 is a
// reverse move; s -> s+1 a forward renoise.
std::vector<std::size_t> repaint_schedule(std::size_t steps, std::size_t U, std::size_t j);

// One estimate per observation; grid b draws all its noise from rngs[b].
// Network calls are batched across the observations.
std::vector<ResourceGrid> sample_batch(const denoiser::Denoiser& net, std::span<const pilots::PilotObservation> obs,
                                       const diffusion::NoiseSchedule& sched, const SamplerConfig& cfg,
                                       std::span<Rng> rngs);

ResourceGrid sample_vanilla(const denoiser::Denoiser& net, const pilots::PilotObservation& obs,
                            const diffusion::NoiseSchedule& sched, const SamplerConfig& cfg, Rng& rng);
ResourceGrid sample_repaint(const denoiser::Denoiser& net, const pilots::PilotObservation& obs,
                            const diffusion::NoiseSchedule& sched, const SamplerConfig& cfg, Rng& rng);

// Lower is better.
using Scorer = std::function<double(const ResourceGrid&)>;

struct BestOfN {
    ResourceGrid estimate;
    std::size_t index = 0;
    std::vector<double> scores;
};

// cfg.candidates independent draws with cfg.pipeline; candidate c uses
// Rng(derive_seed(s, c)) where s = rng.next_u64().
BestOfN sample_best_of_n(const denoiser::Denoiser& net, const pilots::PilotObservation& obs,
                         const diffusion::NoiseSchedule& sched, const SamplerConfig& cfg, const Scorer& scorer,
                         Rng& rng);

struct SweepRow {
    double density = 0.0;
    std::size_t steps = 0;
    Pipeline pipeline = Pipeline::repaint;
    double nmse_mean = 0.0;
    double nmse_std = 0.0;
    std::size_t n_grids = 0;  // 0 marks an absent checkpoint
    std::uint64_t seed = 0;
};

struct SweepSpec {
    std::vector<std::size_t> spacings;  // comb spacing per density
    std::vector<std::size_t> step_grid;
    std::vector<Pipeline> pipelines{Pipeline::vanilla, Pipeline::repaint};
    double snr_db = 20.0;
    std::size_t n_grids = 100;
    std::uint64_t seed = 1;
    SamplerConfig base;  // steps and pipeline are overridden per cell
    std::size_t batch = 50;
};

// Observations of test grids 0..n-1 with comb spacing `spacing` (random
// offset) at snr_db. Grid i draws from its own stream of (seed, spacing, i).
std::vector<pilots::PilotObservation> sweep_observations(const chansim::Dataset& test, std::size_t spacing,
                                                         double snr_db, std::size_t n, std::uint64_t seed);

// Per density a model (absent => rows with n_grids = 0). Every cell of one
// density sees the same observations and sampler streams.
std::vector<SweepRow> nmse_vs_steps_sweep(const std::map<std::size_t, std::optional<denoiser::Denoiser>>& models,
                                          const chansim::Dataset& test, const diffusion::NoiseSchedule& sched,
                                          const SweepSpec& spec);

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);

} // namespace diffrx::sampler
