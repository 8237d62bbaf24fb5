#include "diffrx/receiver.hpp"

#include "diffrx/error.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace diffrx::receiver {

Modulation parse_modulation(const std::string& name) {
    if (name == "qpsk" || name == "QPSK") return Modulation::qpsk;
    if (name == "16qam" || name == "16QAM") return Modulation::qam16;
    throw ConfigError("unknown modulation '" + name + "' (expected qpsk|16qam)");
}

const char* modulation_name(Modulation m) { return m == Modulation::qpsk ? "qpsk" : "16qam"; }

ConstellationSpec constellation(Modulation m) {
    ConstellationSpec s;
    if (m == Modulation::qpsk) {
        s.name = "QPSK";
        s.bits_per_symbol = 2;
        const double a = 1.0 / std::sqrt(2.0);
        for (unsigned i = 0; i < 4; ++i)
            s.points.emplace_back(a * (i & 2 ? -1.0 : 1.0), a * (i & 1 ? -1.0 : 1.0));
        return s;
    }
    s.name = "16QAM";
    s.bits_per_symbol = 4;
    // Gray order along each axis: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3
    const double level[4] = {-3.0, -1.0, 3.0, 1.0};
    const double a = 1.0 / std::sqrt(10.0);
    for (unsigned i = 0; i < 16; ++i) s.points.emplace_back(a * level[i >> 2], a * level[i & 3]);
    return s;
}

std::vector<cplx> modulate(std::span<const std::uint8_t> bits, const ConstellationSpec& spec) {
    const std::size_t q = spec.bits_per_symbol;
    if (bits.size() % q != 0)
        throw DimensionError("modulate: " + std::to_string(bits.size()) + " bits is not a multiple of " +
                             std::to_string(q));
    std::vector<cplx> out;
    out.reserve(bits.size() / q);
    for (std::size_t s = 0; s < bits.size(); s += q) {
        std::size_t idx = 0;
        for (std::size_t b = 0; b < q; ++b) {
            if (bits[s + b] > 1) throw ConfigError("modulate: bits must be 0 or 1");
            idx = (idx << 1) | bits[s + b];
        }
        out.push_back(spec.points[idx]);
    }
    return out;
}

namespace {

std::size_t nearest(cplx y, const ConstellationSpec& spec, double* dist2 = nullptr) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < spec.points.size(); ++i) {
        const double d = std::norm(y - spec.points[i]);
        if (d < bd) {
            bd = d;
            best = i;
        }
    }
    if (dist2) *dist2 = bd;
    return best;
}

} // namespace

std::vector<std::uint8_t> demodulate_hard(std::span<const cplx> symbols, const ConstellationSpec& spec) {
    const std::size_t q = spec.bits_per_symbol;
    std::vector<std::uint8_t> bits;
    bits.reserve(symbols.size() * q);
    for (cplx y : symbols) {
        const std::size_t idx = nearest(y, spec);
        for (std::size_t b = q; b-- > 0;) bits.push_back(static_cast<std::uint8_t>((idx >> b) & 1u));
    }
    return bits;
}

std::size_t data_count(const pilots::PilotMask& mask) { return mask.size() - mask.pilot_count(); }

ResourceGrid map_frame(std::span<const cplx> data, const pilots::PilotMask& mask) {
    if (data.size() != data_count(mask))
        throw DimensionError("map_frame: " + std::to_string(data.size()) + " symbols for " +
                             std::to_string(data_count(mask)) + " data REs");
    ResourceGrid X(mask.subcarriers(), mask.symbols());
    std::size_t d = 0;
    for (std::size_t i = 0; i < X.size(); ++i) X.set(i, mask.is_pilot(i) ? pilots::kPilotSymbol : data[d++]);
    return X;
}

std::vector<cplx> data_symbols(const ResourceGrid& grid, const pilots::PilotMask& mask) {
    if (grid.subcarriers() != mask.subcarriers() || grid.symbols() != mask.symbols())
        throw DimensionError("data_symbols: mask does not match the grid");
    std::vector<cplx> out;
    out.reserve(data_count(mask));
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (!mask.is_pilot(i)) out.push_back(grid[i]);
    return out;
}

ResourceGrid equalize_mmse(const ResourceGrid& Y, const ResourceGrid& H_hat, double noise_var) {
    require_same_dims(Y, H_hat, "equalize_mmse");
    if (!(noise_var >= 0.0)) throw ConfigError("equalize_mmse: noise variance must be >= 0");
    ResourceGrid out(Y.subcarriers(), Y.symbols());
    if (std::isinf(noise_var)) return out;
    for (std::size_t i = 0; i < Y.size(); ++i) {
        const double den = std::norm(H_hat[i]) + noise_var;
        if (den == 0.0)
            throw NumericalError("equalize_mmse: zero channel estimate with zero noise variance at RE " +
                                 std::to_string(i));
        out.set(i, std::conj(H_hat[i]) * Y[i] / den);
    }
    return out;
}

double constellation_score(const ResourceGrid& H_hat, const ResourceGrid& Y, double noise_var,
                           const ConstellationSpec& spec, const pilots::PilotMask& mask) {
    if (data_count(mask) == 0) throw UsageError("constellation_score: no data REs, the score is undefined");
    const auto eq = data_symbols(equalize_mmse(Y, H_hat, noise_var), mask);
    double s = 0.0;
    for (cplx y : eq) {
        double d = 0.0;
        nearest(y, spec, &d);
        s += d;
    }
    return s / static_cast<double>(eq.size());
}

Estimator parse_estimator(const std::string& name) {
    if (name == "perfect") return Estimator::perfect;
    if (name == "ls-linear") return Estimator::ls_linear;
    if (name == "lmmse") return Estimator::lmmse;
    if (name == "dm-vanilla") return Estimator::dm_vanilla;
    if (name == "dm-repaint") return Estimator::dm_repaint;
    if (name == "dm-best-of-n") return Estimator::dm_best_of_n;
    throw ConfigError("unknown estimator '" + name +
                      "' (expected perfect|ls-linear|lmmse|dm-vanilla|dm-repaint|dm-best-of-n)");
}

const char* estimator_name(Estimator e) {
    switch (e) {
    case Estimator::perfect: return "perfect";
    case Estimator::ls_linear: return "ls-linear";
    case Estimator::lmmse: return "lmmse";
    case Estimator::dm_vanilla: return "dm-vanilla";
    case Estimator::dm_repaint: return "dm-repaint";
    case Estimator::dm_best_of_n: return "dm-best-of-n";
    }
    return "?";
}

bool needs_model(Estimator e) {
    return e == Estimator::dm_vanilla || e == Estimator::dm_repaint || e == Estimator::dm_best_of_n;
}

namespace {

struct Frame {
    ResourceGrid H;
    pilots::PilotMask mask;
    std::vector<std::uint8_t> bits;
    ResourceGrid Y;
    pilots::PilotObservation obs;
};

Frame draw_frame(const LinkSpec& spec, const ConstellationSpec& cs, double noise_var, std::size_t f) {
    Rng rng(derive_seed(spec.seed, f));
    Frame fr;
    fr.H = chansim::draw_channel(spec.channel, rng);
    for (std::size_t i = 0; i < fr.H.size(); ++i) fr.H.set(i, fr.H[i] / spec.normalization);
    const std::size_t K = fr.H.subcarriers(), M = fr.H.symbols();
    fr.mask = pilots::comb_mask(K, M, spec.pilot_spacing, rng, true);
    fr.bits.resize(data_count(fr.mask) * cs.bits_per_symbol);
    for (auto& b : fr.bits) b = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
    const ResourceGrid X = map_frame(modulate(fr.bits, cs), fr.mask);
    fr.Y = ResourceGrid(K, M);
    for (std::size_t i = 0; i < X.size(); ++i)
        fr.Y.set(i, fr.H[i] * X[i] + (noise_var > 0.0 ? rng.complex_normal(noise_var) : cplx{}));
    fr.obs = pilots::ls_estimate(fr.Y, pilots::pilot_grid(fr.mask), fr.mask, noise_var);
    return fr;
}

} // namespace

LinkResult end_to_end_ber(const LinkSpec& spec, Estimator est, const EstimatorContext& ctx) {
    spec.channel.validate();
    if (spec.n_frames == 0) throw ConfigError("link.n_frames must be >= 1");
    if (!(spec.normalization > 0.0)) throw ConfigError("link.normalization must be > 0");
    if (est == Estimator::lmmse && !ctx.covariance) throw UsageError("lmmse needs a covariance model");
    if (needs_model(est) && (!ctx.model || !ctx.schedule))
        throw UsageError(std::string(estimator_name(est)) + " needs a trained model");
    const auto cs = constellation(spec.modulation);
    const double noise_var = std::isinf(spec.snr_db) ? 0.0 : std::pow(10.0, -spec.snr_db / 10.0);
    const std::size_t batch = std::max<std::size_t>(1, spec.batch);

    LinkResult res;
    double nmse_sum = 0.0;
    for (std::size_t f0 = 0; f0 < spec.n_frames; f0 += batch) {
        const std::size_t f1 = std::min(spec.n_frames, f0 + batch);
        std::vector<Frame> frames;
        for (std::size_t f = f0; f < f1; ++f) frames.push_back(draw_frame(spec, cs, noise_var, f));

        std::vector<ResourceGrid> est_grids;
        switch (est) {
        case Estimator::perfect:
            for (const auto& fr : frames) est_grids.push_back(fr.H);
            break;
        case Estimator::ls_linear:
            for (const auto& fr : frames) est_grids.push_back(estimators::linear_interp(fr.obs).grid);
            break;
        case Estimator::lmmse:
            for (const auto& fr : frames) est_grids.push_back(estimators::lmmse_interp(fr.obs, *ctx.covariance));
            break;
        case Estimator::dm_vanilla:
        case Estimator::dm_repaint: {
            sampler::SamplerConfig sc = ctx.sampler;
            sc.pipeline = est == Estimator::dm_vanilla ? sampler::Pipeline::vanilla : sampler::Pipeline::repaint;
            std::vector<pilots::PilotObservation> obs;
            std::vector<Rng> rngs;
            for (std::size_t f = f0; f < f1; ++f) {
                obs.push_back(frames[f - f0].obs);
                rngs.emplace_back(derive_seed(derive_seed(spec.seed, f), 0xD1));
            }
            est_grids = sampler::sample_batch(*ctx.model, obs, *ctx.schedule, sc, rngs);
            break;
        }
        case Estimator::dm_best_of_n:
            for (std::size_t f = f0; f < f1; ++f) {
                const Frame& fr = frames[f - f0];
                Rng rng(derive_seed(derive_seed(spec.seed, f), 0xD1));
                auto scorer = [&](const ResourceGrid& h) {
                    return constellation_score(h, fr.Y, noise_var, cs, fr.mask);
                };
                est_grids.push_back(
                    sampler::sample_best_of_n(*ctx.model, fr.obs, *ctx.schedule, ctx.sampler, scorer, rng).estimate);
            }
            break;
        }

        for (std::size_t i = 0; i < frames.size(); ++i) {
            const Frame& fr = frames[i];
            const auto eq = data_symbols(equalize_mmse(fr.Y, est_grids[i], noise_var), fr.mask);
            const auto bits = demodulate_hard(eq, cs);
            for (std::size_t b = 0; b < bits.size(); ++b) res.n_errors += bits[b] != fr.bits[b];
            res.n_bits += bits.size();
            nmse_sum += estimators::nmse(est_grids[i], fr.H);
        }
    }
    res.n_frames = spec.n_frames;
    res.ber = res.n_bits ? static_cast<double>(res.n_errors) / static_cast<double>(res.n_bits) : 0.0;
    res.nmse_mean = nmse_sum / static_cast<double>(spec.n_frames);
    return res;
}

void write_ber_csv(const std::filesystem::path& path, const std::vector<BerRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "estimator,snr_db,density,ber,nmse_mean,n_bits,seed\n";
    out.precision(10);
    for (const auto& r : rows)
        out << r.estimator << ',' << r.snr_db << ',' << r.density << ',' << r.result.ber << ','
            << r.result.nmse_mean << ',' << r.result.n_bits << ',' << r.seed << '\n';
}

} // namespace diffrx::receiver
