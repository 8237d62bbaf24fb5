#pragma once

#include "diffrx/resource_grid.hpp"
#include "diffrx/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

namespace diffrx::chansim {

// Tapped-delay-line channel with an exponential power-delay profile.
struct ChannelModelConfig {
    std::size_t num_paths = 8;
    double delay_spread = 100e-9;       // s, mean of the exponential delay draw
    double max_doppler = 0.0;           // Hz
    double subcarrier_spacing = 30e3;   // Hz
    std::size_t num_subcarriers = 128;  // K
    std::size_t num_symbols = 1;        // M
    double symbol_duration = 1.0 / 30e3 * (1.0 + 0.07);  // s, including cyclic prefix
    std::uint64_t seed = 1;

    void validate() const;
};

struct Path {
    cplx gain;
    double delay;    // s
    double doppler;  // Hz
};

// Random path set: delays ~ Exp(delay_spread), Doppler ~ U(-fd, fd), gains
// complex Gaussian with powers proportional to exp(-delay/delay_spread),
// normalized so the powers sum to one.
std::vector<Path> draw_paths(const ChannelModelConfig& cfg, Rng& rng);

// H[k,m] = sum_l g_l exp(-j2pi k df tau_l) exp(j2pi nu_l m Ts)
ResourceGrid synthesize_cfr(const ChannelModelConfig& cfg, std::span<const Path> paths);

ResourceGrid draw_channel(const ChannelModelConfig& cfg, Rng& rng);

// Pass this as snr_db to get a noiseless (identity) channel.
inline constexpr double kNoiselessSnr = std::numeric_limits<double>::infinity();

// Per-element noise variance for `snr_db` relative to the grid's mean power.
double noise_variance_for(const ResourceGrid& grid, double snr_db);

ResourceGrid awgn(const ResourceGrid& grid, double snr_db, Rng& rng);

// Y = H .* X + N, with N scaled to the mean power of H .* X.
ResourceGrid transmit(const ResourceGrid& H, const ResourceGrid& X, double snr_db, Rng& rng);

struct Dataset {
    std::vector<ResourceGrid> samples;
    double normalization = 1.0;  // samples were divided by this
    ChannelModelConfig config;

    std::size_t subcarriers() const { return samples.empty() ? config.num_subcarriers : samples[0].subcarriers(); }
    std::size_t symbols() const { return samples.empty() ? config.num_symbols : samples[0].symbols(); }
};

struct DatasetSplits {
    Dataset train;
    Dataset val;
    Dataset test;
};

// Unnormalized splits. Sample i of each split draws from its own stream
// derived from (cfg.seed, split, i), so generation order does not matter.
DatasetSplits build_dataset(const ChannelModelConfig& cfg, std::size_t n_train, std::size_t n_val,
                            std::size_t n_test);

// Divides every sample by sqrt(mean |H|^2) of the dataset itself.
Dataset normalize_dataset(const Dataset& ds);
// Divides every sample by an externally supplied scale (train split's).
Dataset normalize_with(const Dataset& ds, double normalization);
// Train normalized by itself; val and test by the train scalar.
DatasetSplits normalize_splits(const DatasetSplits& raw);

// "DIFFRXDS", u32 count, u32 K, u32 M, f32 normalization, then per sample
// interleaved (re, im) f32 row-major. Little-endian throughout.
void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);

} // namespace diffrx::chansim
