#include "diffrx/chansim.hpp"

#include "diffrx/error.hpp"

#include <cmath>
#include <numbers>

namespace diffrx::chansim {

void ChannelModelConfig::validate() const {
    if (num_paths < 1) throw ConfigError("channel.num_paths must be >= 1");
    if (!(delay_spread > 0.0)) throw ConfigError("channel.delay_spread must be > 0");
    if (!(max_doppler >= 0.0)) throw ConfigError("channel.max_doppler must be >= 0");
    if (!(subcarrier_spacing > 0.0)) throw ConfigError("channel.subcarrier_spacing must be > 0");
    if (num_subcarriers < 2) throw ConfigError("channel.num_subcarriers must be >= 2");
    if (num_symbols < 1) throw ConfigError("channel.num_symbols must be >= 1");
    if (!(symbol_duration > 0.0)) throw ConfigError("channel.symbol_duration must be > 0");
}

std::vector<Path> draw_paths(const ChannelModelConfig& cfg, Rng& rng) {
    cfg.validate();
    std::vector<Path> paths(cfg.num_paths);
    std::vector<double> power(cfg.num_paths);
    double total = 0.0;
    for (std::size_t l = 0; l < cfg.num_paths; ++l) {
        paths[l].delay = rng.exponential(cfg.delay_spread);
        paths[l].doppler = cfg.max_doppler > 0.0 ? rng.uniform(-cfg.max_doppler, cfg.max_doppler) : 0.0;
        power[l] = std::exp(-paths[l].delay / cfg.delay_spread);
        total += power[l];
    }
    for (std::size_t l = 0; l < cfg.num_paths; ++l) paths[l].gain = rng.complex_normal(power[l] / total);
    return paths;
}

ResourceGrid synthesize_cfr(const ChannelModelConfig& cfg, std::span<const Path> paths) {
    const std::size_t K = cfg.num_subcarriers, M = cfg.num_symbols;
    ResourceGrid H(K, M);
    constexpr double two_pi = 2.0 * std::numbers::pi;
    for (const Path& p : paths) {
        for (std::size_t k = 0; k < K; ++k) {
            const double fk = static_cast<double>(k) * cfg.subcarrier_spacing;
            const cplx freq = std::polar(1.0, -two_pi * fk * p.delay);
            for (std::size_t m = 0; m < M; ++m) {
                const double tm = static_cast<double>(m) * cfg.symbol_duration;
                const cplx v = p.gain * freq * std::polar(1.0, two_pi * p.doppler * tm);
                H.set(k, m, H.at(k, m) + v);
            }
        }
    }
    return H;
}

ResourceGrid draw_channel(const ChannelModelConfig& cfg, Rng& rng) {
    const auto paths = draw_paths(cfg, rng);
    return synthesize_cfr(cfg, paths);
}

double noise_variance_for(const ResourceGrid& grid, double snr_db) {
    if (std::isinf(snr_db) && snr_db > 0) return 0.0;
    return grid.mean_power() / std::pow(10.0, snr_db / 10.0);
}

ResourceGrid awgn(const ResourceGrid& grid, double snr_db, Rng& rng) {
    const double var = noise_variance_for(grid, snr_db);
    if (var == 0.0) return grid;
    ResourceGrid out = grid;
    for (std::size_t i = 0; i < out.size(); ++i) out.set(i, out[i] + rng.complex_normal(var));
    return out;
}

ResourceGrid transmit(const ResourceGrid& H, const ResourceGrid& X, double snr_db, Rng& rng) {
    require_same_dims(H, X, "transmit");
    ResourceGrid Y(H.subcarriers(), H.symbols());
    for (std::size_t i = 0; i < Y.size(); ++i) Y.set(i, H[i] * X[i]);
    return awgn(Y, snr_db, rng);
}

} // namespace diffrx::chansim
