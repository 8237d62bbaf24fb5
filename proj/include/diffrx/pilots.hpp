#pragma once

#include "diffrx/resource_grid.hpp"
#include "diffrx/rng.hpp"

#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

namespace diffrx::pilots {

enum class Scheme { comb, block, lattice, custom };

const char* scheme_name(Scheme s);
Scheme parse_scheme(const std::string& name);

// Per-RE observation weight: exactly {0,1} in binary mode, [0,1] when soft.
class PilotMask {
public:
    PilotMask() = default;
    PilotMask(std::size_t K, std::size_t M, std::vector<double> values, Scheme scheme);

    std::size_t subcarriers() const noexcept { return K_; }
    std::size_t symbols() const noexcept { return M_; }
    std::size_t size() const noexcept { return values_.size(); }
    Scheme scheme() const noexcept { return scheme_; }
    bool binary() const noexcept { return binary_; }

    double operator[](std::size_t i) const { return values_[i]; }
    double at(std::size_t k, std::size_t m) const { return values_[k * M_ + m]; }
    bool is_pilot(std::size_t i) const { return values_[i] != 0.0; }
    const std::vector<double>& values() const noexcept { return values_; }

    std::size_t pilot_count() const;
    // Fraction of nonzero entries.
    double density() const;
    // Flat indices of nonzero entries in column m, ascending k.
    std::vector<std::size_t> pilot_subcarriers(std::size_t m) const;

    friend bool operator==(const PilotMask&, const PilotMask&) = default;

private:
    std::size_t K_ = 0;
    std::size_t M_ = 0;
    std::vector<double> values_;
    Scheme scheme_ = Scheme::custom;
    bool binary_ = true;
};

// One pilot every `spacing` subcarriers on every symbol, starting at
// `offset`. comb_mask draws the offset uniformly from [0, spacing) when
// randomize_offset is set, otherwise uses 0.
PilotMask comb_mask_at(std::size_t K, std::size_t M, std::size_t spacing, std::size_t offset);
PilotMask comb_mask(std::size_t K, std::size_t M, std::size_t spacing, Rng& rng, bool randomize_offset);

// Every subcarrier of the listed symbols.
PilotMask block_mask(std::size_t K, std::size_t M, const std::vector<std::size_t>& symbol_indices);

// Pilots at (k, m) with k % freq_stride == freq_offset, m % time_stride == time_offset.
PilotMask lattice_mask(std::size_t K, std::size_t M, std::size_t freq_stride, std::size_t time_stride,
                       std::size_t freq_offset = 0, std::size_t time_offset = 0);

// Known unit-modulus pilot symbol (QPSK corner).
inline const cplx kPilotSymbol{std::numbers::sqrt2 / 2.0, std::numbers::sqrt2 / 2.0};

// Pilot symbols at mask positions, zero elsewhere.
ResourceGrid pilot_grid(const PilotMask& mask);

struct PilotObservation {
    ResourceGrid ls;   // Y / X at pilots, exactly 0 elsewhere
    PilotMask mask;
    double noise_var = 0.0;
};

// Least-squares estimate at pilot positions. noise_var is the receiver's
// per-element noise variance (unit-modulus pilots leave it unchanged).
PilotObservation ls_estimate(const ResourceGrid& Y, const ResourceGrid& X_pilot, const PilotMask& mask,
                             double noise_var);

// Simulates pilot reception on a unit-power channel: Y = H X + N at the pilot
// REs with N ~ CN(0, 10^(-snr_db/10)), then LS. snr_db = +inf is noiseless.
PilotObservation observe(const ResourceGrid& H, const PilotMask& mask, double snr_db, Rng& rng);

// Soft confidence mask: 1 / (1 + noise_var / signal_power) at pilots, 0 elsewhere.
PilotMask soft_mask_from_confidence(const PilotMask& mask, double noise_var, double signal_power = 1.0);

} // namespace diffrx::pilots
