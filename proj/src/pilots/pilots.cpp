#include "diffrx/pilots.hpp"

#include "diffrx/error.hpp"

#include <algorithm>
#include <cmath>

namespace diffrx::pilots {

const char* scheme_name(Scheme s) {
    switch (s) {
    case Scheme::comb: return "comb";
    case Scheme::block: return "block";
    case Scheme::lattice: return "lattice";
    case Scheme::custom: return "custom";
    }
    return "custom";
}

Scheme parse_scheme(const std::string& name) {
    if (name == "comb") return Scheme::comb;
    if (name == "block") return Scheme::block;
    if (name == "lattice") return Scheme::lattice;
    if (name == "custom") return Scheme::custom;
    throw ConfigError("unknown pilot scheme '" + name + "'");
}

PilotMask::PilotMask(std::size_t K, std::size_t M, std::vector<double> values, Scheme scheme)
    : K_(K), M_(M), values_(std::move(values)), scheme_(scheme) {
    if (values_.size() != K * M)
        throw DimensionError("pilot mask has " + std::to_string(values_.size()) + " entries for a " +
                             std::to_string(K) + "x" + std::to_string(M) + " grid");
    for (double v : values_) {
        if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("pilot mask entries must lie in [0,1]");
        if (v != 0.0 && v != 1.0) binary_ = false;
    }
}

std::size_t PilotMask::pilot_count() const {
    return static_cast<std::size_t>(std::count_if(values_.begin(), values_.end(), [](double v) { return v != 0.0; }));
}

double PilotMask::density() const {
    return values_.empty() ? 0.0 : static_cast<double>(pilot_count()) / static_cast<double>(values_.size());
}

std::vector<std::size_t> PilotMask::pilot_subcarriers(std::size_t m) const {
    std::vector<std::size_t> ks;
    for (std::size_t k = 0; k < K_; ++k)
        if (values_[k * M_ + m] != 0.0) ks.push_back(k);
    return ks;
}

PilotMask comb_mask_at(std::size_t K, std::size_t M, std::size_t spacing, std::size_t offset) {
    if (spacing < 1 || spacing > K)
        throw ConfigError("comb spacing " + std::to_string(spacing) + " must lie in [1, " + std::to_string(K) + "]");
    if (offset >= spacing) throw ConfigError("comb offset must be < spacing");
    std::vector<double> v(K * M, 0.0);
    for (std::size_t k = offset; k < K; k += spacing)
        for (std::size_t m = 0; m < M; ++m) v[k * M + m] = 1.0;
    return PilotMask(K, M, std::move(v), Scheme::comb);
}

PilotMask comb_mask(std::size_t K, std::size_t M, std::size_t spacing, Rng& rng, bool randomize_offset) {
    if (spacing < 1 || spacing > K)
        throw ConfigError("comb spacing " + std::to_string(spacing) + " must lie in [1, " + std::to_string(K) + "]");
    const std::size_t offset =
        randomize_offset ? static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(spacing) - 1)) : 0;
    return comb_mask_at(K, M, spacing, offset);
}

PilotMask block_mask(std::size_t K, std::size_t M, const std::vector<std::size_t>& symbol_indices) {
    if (M < 2) throw ConfigError("block pilots need more than one OFDM symbol");
    std::vector<double> v(K * M, 0.0);
    for (auto m : symbol_indices) {
        if (m >= M)
            throw ConfigError("block pilot symbol " + std::to_string(m) + " exceeds " + std::to_string(M) + " symbols");
        for (std::size_t k = 0; k < K; ++k) v[k * M + m] = 1.0;
    }
    return PilotMask(K, M, std::move(v), Scheme::block);
}

PilotMask lattice_mask(std::size_t K, std::size_t M, std::size_t freq_stride, std::size_t time_stride,
                       std::size_t freq_offset, std::size_t time_offset) {
    if (freq_stride < 1 || freq_stride > K)
        throw ConfigError("lattice frequency stride " + std::to_string(freq_stride) + " exceeds " + std::to_string(K));
    if (time_stride < 1 || time_stride > M)
        throw ConfigError("lattice time stride " + std::to_string(time_stride) + " exceeds " + std::to_string(M));
    if (freq_offset >= freq_stride || time_offset >= time_stride)
        throw ConfigError("lattice offsets must be smaller than their strides");
    std::vector<double> v(K * M, 0.0);
    for (std::size_t k = freq_offset; k < K; k += freq_stride)
        for (std::size_t m = time_offset; m < M; m += time_stride) v[k * M + m] = 1.0;
    return PilotMask(K, M, std::move(v), Scheme::lattice);
}

ResourceGrid pilot_grid(const PilotMask& mask) {
    ResourceGrid X(mask.subcarriers(), mask.symbols());
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask.is_pilot(i)) X.set(i, kPilotSymbol);
    return X;
}

PilotObservation ls_estimate(const ResourceGrid& Y, const ResourceGrid& X_pilot, const PilotMask& mask,
                             double noise_var) {
    require_same_dims(Y, X_pilot, "ls_estimate");
    if (Y.subcarriers() != mask.subcarriers() || Y.symbols() != mask.symbols())
        throw DimensionError("ls_estimate: mask dims do not match the received grid");
    if (!(noise_var >= 0.0)) throw ConfigError("noise variance must be >= 0");
    PilotObservation obs{ResourceGrid(Y.subcarriers(), Y.symbols()), mask, noise_var};
    for (std::size_t i = 0; i < Y.size(); ++i) {
        if (!mask.is_pilot(i)) continue;
        const cplx x = X_pilot[i];
        if (x == cplx{0.0, 0.0})
            throw NumericalError("ls_estimate: zero pilot symbol at RE " + std::to_string(i));
        obs.ls.set(i, Y[i] / x);
    }
    return obs;
}

PilotObservation observe(const ResourceGrid& H, const PilotMask& mask, double snr_db, Rng& rng) {
    const double var = (std::isinf(snr_db) && snr_db > 0) ? 0.0 : std::pow(10.0, -snr_db / 10.0);
    const ResourceGrid X = pilot_grid(mask);
    ResourceGrid Y(H.subcarriers(), H.symbols());
    for (std::size_t i = 0; i < Y.size(); ++i) {
        if (!mask.is_pilot(i)) continue;
        cplx y = H[i] * X[i];
        if (var > 0.0) y += rng.complex_normal(var);
        Y.set(i, y);
    }
    return ls_estimate(Y, X, mask, var);
}

PilotMask soft_mask_from_confidence(const PilotMask& mask, double noise_var, double signal_power) {
    if (!(noise_var >= 0.0)) throw ConfigError("noise variance must be >= 0");
    if (!(signal_power > 0.0)) throw ConfigError("signal power must be > 0");
    const double w = std::isinf(noise_var) ? 0.0 : 1.0 / (1.0 + noise_var / signal_power);
    std::vector<double> v(mask.size(), 0.0);
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask.is_pilot(i)) v[i] = w;
    return PilotMask(mask.subcarriers(), mask.symbols(), std::move(v), mask.scheme());
}

} // namespace diffrx::pilots
