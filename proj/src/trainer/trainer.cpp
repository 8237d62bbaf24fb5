#include "diffrx/trainer.hpp"

#include "diffrx/error.hpp"
#include "diffrx/numcore/ops.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace diffrx::trainer {

namespace nc = numcore;
using denoiser::Denoiser;
using denoiser::GridLayout;

void PilotSpec::validate(std::size_t K, std::size_t M) const {
    switch (scheme) {
    case pilots::Scheme::comb:
        if (spacing < 1 || spacing > K) throw ConfigError("pilots.spacing must lie in [1, K]");
        break;
    case pilots::Scheme::lattice:
        if (spacing < 1 || spacing > K || time_stride < 1 || time_stride > M)
            throw ConfigError("lattice strides exceed the grid");
        break;
    case pilots::Scheme::block:
        if (M < 2) throw ConfigError("block pilots need more than one OFDM symbol");
        break;
    case pilots::Scheme::custom: throw ConfigError("custom pilot masks cannot be drawn from a spec");
    }
}

pilots::PilotMask PilotSpec::draw(std::size_t K, std::size_t M, Rng& rng) const {
    switch (scheme) {
    case pilots::Scheme::comb: return pilots::comb_mask(K, M, spacing, rng, randomize_offset);
    case pilots::Scheme::lattice: {
        const auto fo = randomize_offset ? static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(spacing) - 1)) : 0;
        return pilots::lattice_mask(K, M, spacing, time_stride, fo, 0);
    }
    case pilots::Scheme::block: return pilots::block_mask(K, M, block_symbols);
    case pilots::Scheme::custom: break;
    }
    throw ConfigError("custom pilot masks cannot be drawn from a spec");
}

double PilotSpec::nominal_density() const {
    switch (scheme) {
    case pilots::Scheme::comb: return 1.0 / static_cast<double>(spacing);
    case pilots::Scheme::lattice: return 1.0 / static_cast<double>(spacing * time_stride);
    default: return std::numeric_limits<double>::quiet_NaN();
    }
}

std::string PilotSpec::tag() const {
    switch (scheme) {
    case pilots::Scheme::comb: return "d" + std::to_string(spacing);
    case pilots::Scheme::lattice: return "l" + std::to_string(spacing) + "x" + std::to_string(time_stride);
    case pilots::Scheme::block: return "block";
    case pilots::Scheme::custom: break;
    }
    return "custom";
}

diffusion::NoiseSchedule ScheduleSpec::build() const { return diffusion::linear_schedule(T, beta_min, beta_max); }

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("trainer.batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("trainer.lr must be > 0");
    if (!(snr_low_db <= snr_high_db)) throw ConfigError("trainer.snr_range_db must satisfy low <= high");
    if (epochs < 1) throw ConfigError("trainer.epochs must be >= 1");
    if (val_every < 1) throw ConfigError("trainer.val_every must be >= 1");
}

double TrainConfig::lr_at_epoch(std::size_t epoch) const {
    double r = lr;
    for (double f : lr_milestones)
        if (static_cast<double>(epoch) >= f * static_cast<double>(epochs)) r *= 0.5;
    return r;
}

namespace {

// Loss tensors for one batch: conditions, targets and, when padded, a 0/1
// weight marking real REs.
struct BatchTensors {
    nc::Tensor cond;
    nc::Tensor target;
    nc::Tensor weight;
    std::size_t n_re = 0;
};

BatchTensors assemble(const std::vector<nc::Tensor>& conds, const std::vector<ResourceGrid>& eps,
                      const GridLayout& layout) {
    BatchTensors bt;
    const std::size_t B = conds.size(), pK = layout.padded_K, pM = layout.padded_M;
    bt.cond = denoiser::batch_conditions(conds, layout);
    bt.target = nc::Tensor({B, 2, pK, pM});
    if (layout.padded()) bt.weight = nc::Tensor({B, 2, pK, pM});
    auto t = bt.target.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < layout.K; ++k)
            for (std::size_t m = 0; m < layout.M; ++m) {
                const std::size_t i = k * layout.M + m;
                t[((b * 2 + 0) * pK + k) * pM + m] = eps[b].re()[i];
                t[((b * 2 + 1) * pK + k) * pM + m] = eps[b].im()[i];
                if (layout.padded()) {
                    bt.weight[((b * 2 + 0) * pK + k) * pM + m] = 1.0;
                    bt.weight[((b * 2 + 1) * pK + k) * pM + m] = 1.0;
                }
            }
    bt.n_re = B * layout.K * layout.M;
    return bt;
}

double batch_loss_value(const nc::Tensor& pred, const BatchTensors& bt) {
    double s = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double w = bt.weight.empty() ? 1.0 : bt.weight[i];
        const double d = pred[i] - bt.target[i];
        s += w * d * d;
    }
    return s / static_cast<double>(bt.n_re);
}

std::vector<std::size_t> draw_timesteps(std::size_t B, std::size_t T, Rng& rng) {
    std::vector<std::size_t> t(B);
    for (auto& v : t) v = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(T)));
    return t;
}

pilots::PilotObservation draw_observation(const TrainConfig& cfg, const ResourceGrid& H, Rng& rng) {
    PilotSpec spec = cfg.pilots;
    if (!cfg.joint_spacings.empty())
        spec.spacing = cfg.joint_spacings[static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(cfg.joint_spacings.size()) - 1))];
    const auto mask = spec.draw(H.subcarriers(), H.symbols(), rng);
    const double snr = rng.uniform(cfg.snr_low_db, cfg.snr_high_db);
    return pilots::observe(H, mask, snr, rng);
}

} // namespace

StepResult train_step(Denoiser& net, nc::AdamState& adam, std::span<const TrainingPair> batch,
                      const diffusion::NoiseSchedule& sched, Rng& rng, double lr) {
    if (batch.empty()) throw UsageError("train_step: empty batch");
    const std::size_t K = batch[0].channel->subcarriers(), M = batch[0].channel->symbols();
    const auto layout = GridLayout::for_grid(K, M, net.config().depth);
    const auto ts = draw_timesteps(batch.size(), sched.steps(), rng);

    std::vector<nc::Tensor> conds;
    std::vector<ResourceGrid> eps;
    std::vector<std::size_t> model_t;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const ResourceGrid& H = *batch[b].channel;
        if (H.subcarriers() != K || H.symbols() != M) throw DimensionError("train_step: batch has mixed grid dims");
        eps.push_back(diffusion::standard_normal_grid(K, M, rng));
        const ResourceGrid x_t = diffusion::q_sample(H, ts[b], eps.back(), sched);
        conds.push_back(denoiser::build_condition(batch[b].obs, x_t));
        model_t.push_back(sched.model_timestep(ts[b]));
    }
    const BatchTensors bt = assemble(conds, eps, layout);

    nc::Graph g;
    nc::Var pred = net.forward(g, g.constant(bt.cond), model_t);
    nc::Var diff = nc::sub(pred, g.constant(bt.target));
    if (!bt.weight.empty()) diff = nc::mul(diff, g.constant(bt.weight));
    nc::Var loss = nc::scale(nc::sum(nc::mul(diff, diff)), 1.0 / static_cast<double>(bt.n_re));

    StepResult r;
    r.loss = loss.value().item();
    if (!std::isfinite(r.loss)) {
        std::ostringstream os;
        os << "training loss is not finite (last timesteps:";
        for (auto t : ts) os << ' ' << t;
        os << "; lr " << lr << ")";
        throw NumericalError(os.str());
    }
    g.backward(loss);
    double gn = 0.0;
    for (const auto& p : net.parameters())
        for (double v : p.grad.data()) gn += v * v;
    r.grad_norm = std::sqrt(gn);
    if (!std::isfinite(r.grad_norm)) {
        std::ostringstream os;
        os << "gradient norm is not finite (lr " << lr << ")";
        throw NumericalError(os.str());
    }
    nc::AdamConfig acfg;
    acfg.lr = lr;
    nc::adam_step(net.parameters(), adam, acfg);
    return r;
}

ValidationSet::ValidationSet(const chansim::Dataset& val, const TrainConfig& cfg, std::uint64_t seed) {
    if (val.samples.empty()) throw ConfigError("validation set is empty");
    const auto sched = cfg.schedule.build();
    for (std::size_t i = 0; i < val.samples.size(); ++i) {
        Rng rng(derive_seed(seed, i));
        const ResourceGrid& H = val.samples[i];
        const auto obs = draw_observation(cfg, H, rng);
        const auto t = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(sched.steps())));
        eps_.push_back(diffusion::standard_normal_grid(H.subcarriers(), H.symbols(), rng));
        conds_.push_back(denoiser::build_condition(obs, diffusion::q_sample(H, t, eps_.back(), sched)));
        t_.push_back(sched.model_timestep(t));
    }
    layout_ = GridLayout{val.samples[0].subcarriers(), val.samples[0].symbols(), 0, 0};
}

double ValidationSet::loss(const Denoiser& net) const {
    const auto layout = GridLayout::for_grid(layout_.K, layout_.M, net.config().depth);
    constexpr std::size_t chunk = 64;
    double total = 0.0;
    std::size_t n_re = 0;
    for (std::size_t s = 0; s < conds_.size(); s += chunk) {
        const std::size_t e = std::min(conds_.size(), s + chunk);
        std::vector<nc::Tensor> conds(conds_.begin() + static_cast<std::ptrdiff_t>(s), conds_.begin() + static_cast<std::ptrdiff_t>(e));
        std::vector<ResourceGrid> eps(eps_.begin() + static_cast<std::ptrdiff_t>(s), eps_.begin() + static_cast<std::ptrdiff_t>(e));
        const BatchTensors bt = assemble(conds, eps, layout);
        const nc::Tensor pred = net.predict(bt.cond, std::span(t_).subspan(s, e - s));
        total += batch_loss_value(pred, bt) * static_cast<double>(bt.n_re);
        n_re += bt.n_re;
    }
    return total / static_cast<double>(n_re);
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRow>& rows, bool append) {
    const bool header = !append || !std::filesystem::exists(path);
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    if (header) out << "step,epoch,train_loss,val_loss,lr,wall_ms\n";
    out.precision(10);
    for (const auto& r : rows) {
        out << r.step << ',' << r.epoch << ',';
        if (std::isfinite(r.train_loss)) out << r.train_loss;
        out << ',';
        if (std::isfinite(r.val_loss)) out << r.val_loss;
        out << ',' << r.lr << ',' << static_cast<long long>(r.wall_ms) << '\n';
    }
}

TrainState initial_state(const denoiser::DenoiserConfig& net_cfg, std::uint64_t seed) {
    Denoiser net(net_cfg, derive_seed(seed, 0xD0));
    auto adam = nc::AdamState::for_params(net.parameters());
    return {std::move(net), std::move(adam), 0, 0};
}

TrainResult train(const TrainConfig& cfg, const chansim::Dataset& train_set, const chansim::Dataset& val_set,
                  TrainState state, const CheckpointHook& hook) {
    cfg.validate();
    if (train_set.samples.empty()) throw ConfigError("training set is empty");
    const std::size_t K = train_set.subcarriers(), M = train_set.symbols();
    if (val_set.subcarriers() != K || val_set.symbols() != M)
        throw DimensionError("train and validation grids differ in size");
    cfg.pilots.validate(K, M);
    const auto& nc_cfg = state.net.config();
    if (nc_cfg.schedule_T != cfg.schedule.T || nc_cfg.beta_min != cfg.schedule.beta_min ||
        nc_cfg.beta_max != cfg.schedule.beta_max)
        throw ConfigError("denoiser was built for a different noise schedule than the trainer's");
    const auto sched = cfg.schedule.build();
    const ValidationSet val(val_set, cfg, derive_seed(cfg.seed, 0x7A1));
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed_ms = [&] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    };

    Denoiser best = state.net;
    TrainResult res{std::move(state), std::move(best), 0.0, 0.0, {}, false};
    TrainState& st = res.last;
    res.init_val = val.loss(st.net);
    res.best_val = res.init_val;
    // A resumed run already logged its starting point.
    if (st.step == 0)
        res.metrics.push_back({st.step, st.epoch, std::numeric_limits<double>::quiet_NaN(), res.init_val,
                               cfg.lr_at_epoch(st.epoch), elapsed_ms()});

    const std::size_t N = train_set.samples.size();
    std::size_t over_budget = 0;
    for (std::size_t epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
        // Everything an epoch consumes comes from its own stream, so a run
        // resumed at an epoch boundary replays the same draws.
        Rng rng(derive_seed(cfg.seed, 1000 + epoch));
        const double lr = cfg.lr_at_epoch(epoch);
        std::vector<std::size_t> order(N);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng.engine());

        double loss_sum = 0.0;
        std::size_t n_steps = 0;
        std::vector<TrainingPair> batch;
        for (std::size_t s = 0; s < N; s += cfg.batch_size) {
            batch.clear();
            for (std::size_t i = s; i < std::min(N, s + cfg.batch_size); ++i) {
                const ResourceGrid& H = train_set.samples[order[i]];
                batch.push_back({&H, draw_observation(cfg, H, rng)});
            }
            const StepResult r = train_step(st.net, st.adam, batch, sched, rng, lr);
            loss_sum += r.loss;
            ++n_steps;
            ++st.step;
        }
        st.epoch = epoch + 1;

        MetricsRow row{st.step, st.epoch, loss_sum / static_cast<double>(n_steps),
                       std::numeric_limits<double>::quiet_NaN(), lr, 0.0};
        const bool validate_now = st.epoch % cfg.val_every == 0 || st.epoch == cfg.epochs;
        if (validate_now) {
            row.val_loss = val.loss(st.net);
            if (!std::isfinite(row.val_loss)) {
                std::ostringstream os;
                os << "validation loss is not finite at epoch " << st.epoch << " (lr " << lr << ")";
                throw NumericalError(os.str());
            }
            const bool is_best = row.val_loss < res.best_val;
            if (is_best) {
                res.best_val = row.val_loss;
                res.best = st.net;
            }
            over_budget = row.val_loss > 10.0 * res.init_val ? over_budget + 1 : 0;
            row.wall_ms = elapsed_ms();
            res.metrics.push_back(row);
            if (hook) hook(st, row.val_loss, is_best);
            if (over_budget >= 3) {
                res.diverged = true;
                break;
            }
        } else {
            row.wall_ms = elapsed_ms();
            res.metrics.push_back(row);
        }
    }
    return res;
}

std::vector<nc::NamedTensor> checkpoint_tensors(const TrainState& state, const TrainConfig& cfg, std::size_t K,
                                                std::size_t M) {
    auto out = state.net.to_named_tensors();
    auto vec = [](std::vector<double> v) {
        const std::size_t n = v.size();
        return nc::Tensor({n}, std::move(v));
    };
    out.push_back({"train.schedule", vec({static_cast<double>(cfg.schedule.T), cfg.schedule.beta_min,
                                          cfg.schedule.beta_max})});
    out.push_back({"train.density", vec({cfg.pilots.nominal_density()})});
    out.push_back({"train.grid", vec({static_cast<double>(K), static_cast<double>(M)})});
    out.push_back({"train.progress", vec({static_cast<double>(state.step), static_cast<double>(state.epoch),
                                          static_cast<double>(state.adam.step)})});
    for (std::size_t i = 0; i < state.adam.m.size(); ++i) {
        out.push_back({"adam.m." + std::to_string(i), state.adam.m[i]});
        out.push_back({"adam.v." + std::to_string(i), state.adam.v[i]});
    }
    return out;
}

void save_train_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& cfg,
                           std::size_t K, std::size_t M) {
    nc::save_checkpoint(path, checkpoint_tensors(state, cfg, K, M));
}

LoadedCheckpoint load_train_checkpoint(const std::filesystem::path& path) {
    const auto tensors = nc::load_checkpoint(path);
    auto need = [&](const std::string& name, std::size_t n) -> const nc::Tensor& {
        const auto* t = nc::find_tensor(tensors, name);
        if (!t) throw FormatError("checkpoint '" + path.string() + "' lacks '" + name + "'");
        if (t->tensor.numel() != n) throw FormatError("checkpoint entry '" + name + "' has the wrong size");
        return t->tensor;
    };
    Denoiser net = Denoiser::from_named_tensors(tensors);
    auto adam = nc::AdamState::for_params(net.parameters());
    const auto& sch = need("train.schedule", 3);
    const auto& grid = need("train.grid", 2);
    const auto& prog = need("train.progress", 3);
    for (std::size_t i = 0; i < adam.m.size(); ++i) {
        const auto* m = nc::find_tensor(tensors, "adam.m." + std::to_string(i));
        const auto* v = nc::find_tensor(tensors, "adam.v." + std::to_string(i));
        if (!m || !v) continue;  // inference-only checkpoints carry no moments
        if (m->tensor.shape() != adam.m[i].shape() || v->tensor.shape() != adam.v[i].shape())
            throw FormatError("checkpoint optimizer state does not match the network");
        adam.m[i] = m->tensor;
        adam.v[i] = v->tensor;
    }
    adam.step = static_cast<std::int64_t>(prog[2]);
    LoadedCheckpoint out{TrainState{std::move(net), std::move(adam), static_cast<std::size_t>(prog[0]),
                                    static_cast<std::size_t>(prog[1])},
                         ScheduleSpec{static_cast<std::size_t>(sch[0]), sch[1], sch[2]},
                         need("train.density", 1)[0], static_cast<std::size_t>(grid[0]),
                         static_cast<std::size_t>(grid[1])};
    return out;
}

} // namespace diffrx::trainer
