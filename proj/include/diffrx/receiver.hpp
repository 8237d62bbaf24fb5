#pragma once

#include "diffrx/chansim.hpp"
#include "diffrx/denoiser.hpp"
#include "diffrx/diffusion.hpp"
#include "diffrx/estimators.hpp"
#include "diffrx/pilots.hpp"
#include "diffrx/sampler.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace diffrx::receiver {

enum class Modulation { qpsk, qam16 };

Modulation parse_modulation(const std::string& name);
const char* modulation_name(Modulation m);

// Point i carries the bits of i, most significant bit first.
struct ConstellationSpec {
    std::string name;
    std::vector<cplx> points;
    std::size_t bits_per_symbol = 0;
};

// Gray-labelled, unit average power.
ConstellationSpec constellation(Modulation m);

// Bits are 0/1 bytes; length must be a multiple of bits_per_symbol.
std::vector<cplx> modulate(std::span<const std::uint8_t> bits, const ConstellationSpec& spec);
// Nearest point per symbol.
std::vector<std::uint8_t> demodulate_hard(std::span<const cplx> symbols, const ConstellationSpec& spec);

// Transmit grid: pilot symbol at pilot REs, `data` in flat order on the rest.
ResourceGrid map_frame(std::span<const cplx> data, const pilots::PilotMask& mask);
// Values at the non-pilot REs, flat order.
std::vector<cplx> data_symbols(const ResourceGrid& grid, const pilots::PilotMask& mask);
std::size_t data_count(const pilots::PilotMask& mask);

// conj(H) Y / (|H|^2 + noise_var) per element; noise_var = 0 is zero-forcing.
ResourceGrid equalize_mmse(const ResourceGrid& Y, const ResourceGrid& H_hat, double noise_var);

// Mean squared distance from each equalized data RE to its nearest point.
double constellation_score(const ResourceGrid& H_hat, const ResourceGrid& Y, double noise_var,
                           const ConstellationSpec& spec, const pilots::PilotMask& mask);

enum class Estimator { perfect, ls_linear, lmmse, dm_vanilla, dm_repaint, dm_best_of_n };

Estimator parse_estimator(const std::string& name);
const char* estimator_name(Estimator e);
bool needs_model(Estimator e);

struct LinkSpec {
    chansim::ChannelModelConfig channel;
    std::size_t pilot_spacing = 16;
    double snr_db = 20.0;
    Modulation modulation = Modulation::qpsk;
    std::size_t n_frames = 100;
    std::uint64_t seed = 1;
    // Channels are divided by this before use (the training normalization).
    double normalization = 1.0;
    std::size_t batch = 50;
};

// What the non-trivial estimators need. model/schedule only for dm-*.
struct EstimatorContext {
    const estimators::CovarianceModel* covariance = nullptr;
    const denoiser::Denoiser* model = nullptr;
    const diffusion::NoiseSchedule* schedule = nullptr;
    sampler::SamplerConfig sampler;
};

struct LinkResult {
    double ber = 0.0;
    double nmse_mean = 0.0;
    std::size_t n_bits = 0;
    std::size_t n_errors = 0;
    std::size_t n_frames = 0;
};

// Per frame: draw H and bits, send pilots + data over AWGN with variance
// 10^(-snr/10), estimate from pilots only, MMSE-equalize, hard-demap, count.
LinkResult end_to_end_ber(const LinkSpec& spec, Estimator est, const EstimatorContext& ctx);

struct BerRow {
    std::string estimator;
    double snr_db = 0.0;
    double density = 0.0;
    LinkResult result;
    std::uint64_t seed = 0;
};

void write_ber_csv(const std::filesystem::path& path, const std::vector<BerRow>& rows);

} // namespace diffrx::receiver
