#include "diffrx/sampler.hpp"

#include "diffrx/error.hpp"
#include "diffrx/estimators.hpp"

#include <cmath>
#include <fstream>
#include <optional>

namespace diffrx::sampler {

using denoiser::Denoiser;
using denoiser::GridLayout;
using diffusion::NoiseSchedule;

const char* pipeline_name(Pipeline p) { return p == Pipeline::vanilla ? "vanilla" : "repaint"; }

Pipeline parse_pipeline(const std::string& name) {
    if (name == "vanilla") return Pipeline::vanilla;
    if (name == "repaint") return Pipeline::repaint;
    throw ConfigError("unknown sampler pipeline '" + name + "' (expected vanilla|repaint)");
}

void SamplerConfig::validate(std::size_t T) const {
    if (steps > T) throw ConfigError("sampler.steps must be <= T (" + std::to_string(T) + ")");
    if (candidates < 1) throw ConfigError("sampler.candidates must be >= 1");
}

std::size_t SamplerConfig::effective_U() const { return resample_count ? resample_count : (steps >= 100 ? 3 : 2); }
std::size_t SamplerConfig::effective_j() const { return jump_length ? jump_length : (steps >= 100 ? 10 : 5); }

std::vector<std::size_t> repaint_schedule(std::size_t steps, std::size_t U, std::size_t j) {
    if (U < 1 || j < 1) throw ConfigError("repaint needs U >= 1 and j >= 1");
    std::vector<std::size_t> jumps(steps + 1, 0);
    for (std::size_t s = j; s + j <= steps; s += j) jumps[s] = U - 1;
    std::vector<std::size_t> out{steps};
    std::size_t t = steps;
    while (t > 0) {
        out.push_back(--t);
        if (jumps[t] > 0) {
            --jumps[t];
            for (std::size_t k = 0; k < j; ++k) out.push_back(++t);
        }
    }
    return out;
}

namespace {

void check_rng(const SamplerConfig& cfg, const Rng& rng) {
    if (cfg.reproducible && !rng.seeded()) throw UsageError("reproducible mode needs a seeded generator");
}

std::vector<ResourceGrid> predict_eps(const Denoiser& net, std::span<const pilots::PilotObservation> obs,
                                      const std::vector<ResourceGrid>& x, std::size_t model_t,
                                      const GridLayout& layout) {
    std::vector<numcore::Tensor> conds;
    conds.reserve(x.size());
    for (std::size_t b = 0; b < x.size(); ++b) conds.push_back(denoiser::build_condition(obs[b], x[b]));
    const std::vector<std::size_t> ts(x.size(), model_t);
    const auto out = net.predict(denoiser::batch_conditions(conds, layout), ts);
    std::vector<ResourceGrid> eps;
    eps.reserve(x.size());
    for (std::size_t b = 0; b < x.size(); ++b) eps.push_back(denoiser::output_grid(out, b, layout));
    return eps;
}

// x <- w * known + (1 - w) * x
void blend(ResourceGrid& x, const ResourceGrid& known, const std::vector<double>& w) {
    auto xr = x.re(), xi = x.im();
    const auto kr = known.re(), ki = known.im();
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (w[i] == 0.0) continue;
        xr[i] = w[i] * kr[i] + (1.0 - w[i]) * xr[i];
        xi[i] = w[i] * ki[i] + (1.0 - w[i]) * xi[i];
    }
}

} // namespace

std::vector<ResourceGrid> sample_batch(const Denoiser& net, std::span<const pilots::PilotObservation> obs,
                                       const NoiseSchedule& sched, const SamplerConfig& cfg, std::span<Rng> rngs) {
    cfg.validate(sched.steps());
    if (rngs.size() != obs.size()) throw DimensionError("sample_batch: one generator per observation required");
    for (const auto& r : rngs) check_rng(cfg, r);
    const auto& ncfg = net.config();
    if (ncfg.schedule_T != sched.train_steps() || ncfg.beta_min != sched.beta_min() ||
        ncfg.beta_max != sched.beta_max())
        throw ConfigError("denoiser was trained on a different noise schedule");
    const std::size_t B = obs.size();
    if (B == 0) return {};
    const std::size_t K = obs[0].ls.subcarriers(), M = obs[0].ls.symbols();
    for (const auto& o : obs) {
        require_same_dims(o.ls, obs[0].ls, "sample_batch");
        if (o.mask.subcarriers() != K || o.mask.symbols() != M) throw DimensionError("sample_batch: mask dims differ");
    }

    std::vector<ResourceGrid> x;
    x.reserve(B);
    for (std::size_t b = 0; b < B; ++b) x.push_back(diffusion::standard_normal_grid(K, M, rngs[b]));
    if (cfg.steps == 0) return x;

    const NoiseSchedule rs = diffusion::respace(sched, cfg.steps);
    const auto layout = GridLayout::for_grid(K, M, net.config().depth);
    const bool repaint = cfg.pipeline == Pipeline::repaint;

    std::vector<std::vector<double>> w;
    if (repaint)
        for (const auto& o : obs)
            w.push_back(cfg.soft_mask ? pilots::soft_mask_from_confidence(o.mask, o.noise_var).values()
                                      : o.mask.values());

    std::vector<std::size_t> path;
    if (repaint) {
        path = repaint_schedule(cfg.steps, cfg.effective_U(), cfg.effective_j());
    } else {
        for (std::size_t t = cfg.steps + 1; t-- > 0;) path.push_back(t);
    }

    for (std::size_t p = 1; p < path.size(); ++p) {
        const std::size_t from = path[p - 1], to = path[p];
        if (to > from) {
            for (std::size_t b = 0; b < B; ++b) {
                const auto eps = diffusion::standard_normal_grid(K, M, rngs[b]);
                x[b] = diffusion::forward_renoise(x[b], rs, to, eps);
            }
            continue;
        }
        const auto eps_hat = predict_eps(net, obs, x, rs.model_timestep(from), layout);
        for (std::size_t b = 0; b < B; ++b) {
            std::optional<ResourceGrid> z;
            if (from > 1) z = diffusion::standard_normal_grid(K, M, rngs[b]);
            x[b] = diffusion::reverse_step(x[b], eps_hat[b], from, rs, z ? &*z : nullptr);
            if (!repaint) continue;
            const auto eps_known = diffusion::standard_normal_grid(K, M, rngs[b]);
            if (to == 0 && !cfg.terminal_overwrite) continue;
            blend(x[b], diffusion::q_sample(obs[b].ls, to, eps_known, rs), w[b]);
        }
    }
    return x;
}

ResourceGrid sample_vanilla(const Denoiser& net, const pilots::PilotObservation& obs, const NoiseSchedule& sched,
                            const SamplerConfig& cfg, Rng& rng) {
    SamplerConfig c = cfg;
    c.pipeline = Pipeline::vanilla;
    return sample_batch(net, std::span(&obs, 1), sched, c, std::span(&rng, 1)).front();
}

ResourceGrid sample_repaint(const Denoiser& net, const pilots::PilotObservation& obs, const NoiseSchedule& sched,
                            const SamplerConfig& cfg, Rng& rng) {
    SamplerConfig c = cfg;
    c.pipeline = Pipeline::repaint;
    return sample_batch(net, std::span(&obs, 1), sched, c, std::span(&rng, 1)).front();
}

BestOfN sample_best_of_n(const Denoiser& net, const pilots::PilotObservation& obs, const NoiseSchedule& sched,
                         const SamplerConfig& cfg, const Scorer& scorer, Rng& rng) {
    cfg.validate(sched.steps());
    check_rng(cfg, rng);
    if (!scorer) throw UsageError("sample_best_of_n: no scorer given");
    const std::uint64_t s = rng.next_u64();
    std::vector<Rng> rngs;
    for (std::size_t c = 0; c < cfg.candidates; ++c) rngs.emplace_back(derive_seed(s, c));
    const std::vector<pilots::PilotObservation> copies(cfg.candidates, obs);
    auto cands = sample_batch(net, copies, sched, cfg, rngs);
    BestOfN out{{}, 0, {}};
    for (std::size_t c = 0; c < cands.size(); ++c) {
        out.scores.push_back(scorer(cands[c]));
        if (out.scores[c] < out.scores[out.index]) out.index = c;
    }
    out.estimate = std::move(cands[out.index]);
    return out;
}

std::vector<pilots::PilotObservation> sweep_observations(const chansim::Dataset& test, std::size_t spacing,
                                                         double snr_db, std::size_t n, std::uint64_t seed) {
    if (n > test.samples.size()) throw ConfigError("asked for more grids than the test set holds");
    std::vector<pilots::PilotObservation> obs;
    obs.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng r(derive_seed(derive_seed(seed, spacing), i));
        const auto& H = test.samples[i];
        const auto mask = pilots::comb_mask(H.subcarriers(), H.symbols(), spacing, r, true);
        obs.push_back(pilots::observe(H, mask, snr_db, r));
    }
    return obs;
}

std::vector<SweepRow> nmse_vs_steps_sweep(const std::map<std::size_t, std::optional<Denoiser>>& models,
                                          const chansim::Dataset& test, const NoiseSchedule& sched,
                                          const SweepSpec& spec) {
    if (spec.n_grids > test.samples.size())
        throw ConfigError("sweep asks for " + std::to_string(spec.n_grids) + " grids, test set has " +
                          std::to_string(test.samples.size()));
    if (spec.batch < 1) throw ConfigError("sweep batch must be >= 1");
    std::vector<SweepRow> rows;
    for (std::size_t spacing : spec.spacings) {
        const double density = 1.0 / static_cast<double>(spacing);
        const auto it = models.find(spacing);
        const Denoiser* net = (it != models.end() && it->second) ? &*it->second : nullptr;

        std::vector<pilots::PilotObservation> obs;
        if (net) obs = sweep_observations(test, spacing, spec.snr_db, spec.n_grids, spec.seed);

        for (std::size_t steps : spec.step_grid)
            for (Pipeline pl : spec.pipelines) {
                SweepRow row{density, steps, pl, std::nan(""), std::nan(""), 0, spec.seed};
                if (net) {
                    SamplerConfig cfg = spec.base;
                    cfg.steps = steps;
                    cfg.pipeline = pl;
                    std::vector<double> v;
                    for (std::size_t s = 0; s < obs.size(); s += spec.batch) {
                        const std::size_t e = std::min(obs.size(), s + spec.batch);
                        std::vector<Rng> rngs;
                        for (std::size_t i = s; i < e; ++i)
                            rngs.emplace_back(derive_seed(derive_seed(spec.seed, 0x5A0000 + spacing), i));
                        const auto est =
                            sample_batch(*net, std::span(obs).subspan(s, e - s), sched, cfg, rngs);
                        for (std::size_t i = s; i < e; ++i)
                            v.push_back(estimators::nmse(est[i - s], test.samples[i]));
                    }
                    double mean = 0.0, var = 0.0;
                    for (double a : v) mean += a;
                    mean /= static_cast<double>(v.size());
                    for (double a : v) var += (a - mean) * (a - mean);
                    row.nmse_mean = mean;
                    row.nmse_std = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
                    row.n_grids = v.size();
                }
                rows.push_back(row);
            }
    }
    return rows;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << "density,steps,pipeline,nmse_mean,nmse_std,n_grids,seed\n";
    out.precision(10);
    for (const auto& r : rows) {
        out << r.density << ',' << r.steps << ',' << pipeline_name(r.pipeline) << ',';
        if (r.n_grids) out << r.nmse_mean << ',' << r.nmse_std;
        else out << ',';
        out << ',' << r.n_grids << ',' << r.seed << '\n';
    }
}

} // namespace diffrx::sampler
