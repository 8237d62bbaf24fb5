#include "diffrx/error.hpp"
#include "diffrx/trainer.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace diffrx;
using namespace diffrx::trainer;
using denoiser::Denoiser;
using denoiser::DenoiserConfig;

namespace {

DenoiserConfig tiny_net(bool x_skip = true) {
    DenoiserConfig c;
    c.base_channels = 8;
    c.depth = 2;
    c.time_embed_dim = 16;
    c.groups = 4;
    c.x_skip = x_skip;
    return c;
}

chansim::DatasetSplits toy_splits(std::size_t n_train, std::size_t n_val, std::uint64_t seed = 1) {
    chansim::ChannelModelConfig cfg;
    cfg.num_subcarriers = 32;
    cfg.seed = seed;
    return chansim::normalize_splits(chansim::build_dataset(cfg, n_train, n_val, 1));
}

std::vector<TrainingPair> make_batch(const chansim::Dataset& ds, std::size_t from, std::size_t n, Rng& rng) {
    std::vector<TrainingPair> b;
    for (std::size_t i = from; i < from + n; ++i) {
        const auto& H = ds.samples[i % ds.samples.size()];
        b.push_back({&H, pilots::observe(H, pilots::comb_mask(32, 1, 4, rng, true), rng.uniform(0, 30), rng)});
    }
    return b;
}

// Mean loss of many batches without moving the weights.
double init_loss(const DenoiserConfig& cfg, const chansim::Dataset& ds, std::size_t batches) {
    Denoiser net(cfg, 5);
    auto adam = numcore::AdamState::for_params(net.parameters());
    const auto sched = ScheduleSpec{}.build();
    Rng rng(6);
    double s = 0;
    for (std::size_t b = 0; b < batches; ++b) {
        auto batch = make_batch(ds, b * 64, 64, rng);
        s += train_step(net, adam, batch, sched, rng, 1e-300).loss;
    }
    return s / batches;
}

// Smoothed (window 20) loss over 200 steps on 500 samples.
std::vector<double> smoke_run(std::uint64_t seed, const chansim::Dataset& ds) {
    Denoiser net(tiny_net(), seed);
    auto adam = numcore::AdamState::for_params(net.parameters());
    const auto sched = ScheduleSpec{}.build();
    Rng rng(seed);
    std::vector<double> losses;
    for (std::size_t s = 0; s < 200; ++s) {
        auto batch = make_batch(ds, (s * 16) % 500, 16, rng);
        losses.push_back(train_step(net, adam, batch, sched, rng, 2e-3).loss);
    }
    return losses;
}

double window_mean(const std::vector<double>& v, std::size_t from) {
    double s = 0;
    for (std::size_t i = from; i < from + 20; ++i) s += v[i];
    return s / 20;
}

TrainConfig small_train(std::size_t epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 16;
    c.pilots.spacing = 4;
    c.seed = 9;
    return c;
}

} // namespace

TEST_CASE("initial loss with a zero-output network is about two per element") {
    auto splits = toy_splits(500, 2);
    const double l = init_loss(tiny_net(false), splits.train, 20);
    CHECK(l == doctest::Approx(2.0).epsilon(0.3));
}

TEST_CASE("initial loss with the x_skip output matches its closed form") {
    // eps_hat = sqrt(1 - abar) x_t at init, so the residual is
    // abar eps - sqrt(abar (1 - abar)) H; per RE its energy averages to
    // E_t[2 abar^2 + abar (1 - abar) P] for channel power P.
    auto splits = toy_splits(500, 2);
    double P = 0;
    for (const auto& g : splits.train.samples) P += g.mean_power();
    P /= splits.train.samples.size();
    const auto sched = ScheduleSpec{}.build();
    double want = 0;
    for (std::size_t t = 1; t <= 1000; ++t) {
        const double ab = sched.alpha_bar(t);
        want += 2 * ab * ab + ab * (1 - ab) * P;
    }
    want /= 1000;
    CHECK(init_loss(tiny_net(true), splits.train, 40) == doctest::Approx(want).epsilon(0.1));
}

TEST_CASE("short training reduces the smoothed loss") {
    auto splits = toy_splits(500, 2);
    int improved = 0;
    const int runs = 10;
    for (int r = 0; r < runs; ++r) {
        auto losses = smoke_run(100 + r, splits.train);
        if (window_mean(losses, 180) < window_mean(losses, 0)) ++improved;
        for (double l : losses) CHECK(l >= 0.0);
    }
    CHECK(improved >= runs * 95 / 100);
}

TEST_CASE("identical seeds give identical trajectories") {
    auto splits = toy_splits(500, 2);
    CHECK(smoke_run(7, splits.train) == smoke_run(7, splits.train));
}

TEST_CASE("a step leaves the dataset untouched") {
    auto splits = toy_splits(64, 2);
    const auto before = splits.train.samples;
    Denoiser net(tiny_net(), 1);
    auto adam = numcore::AdamState::for_params(net.parameters());
    Rng rng(1);
    auto batch = make_batch(splits.train, 0, 16, rng);
    const auto obs_before = batch[0].obs.ls;
    auto r = train_step(net, adam, batch, ScheduleSpec{}.build(), rng, 1e-3);
    CHECK(std::isfinite(r.grad_norm));
    CHECK(r.grad_norm > 0.0);
    CHECK(splits.train.samples == before);
    CHECK(batch[0].obs.ls == obs_before);
    CHECK(adam.step == 1);
}

TEST_CASE("non-finite loss aborts with diagnostics") {
    auto splits = toy_splits(16, 2);
    Denoiser net(tiny_net(), 1);
    net.parameters().back().value.fill(std::nan(""));
    auto adam = numcore::AdamState::for_params(net.parameters());
    Rng rng(1);
    auto batch = make_batch(splits.train, 0, 4, rng);
    try {
        train_step(net, adam, batch, ScheduleSpec{}.build(), rng, 0.5);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("timesteps") != std::string::npos);
        CHECK(msg.find("lr 0.5") != std::string::npos);
    }
}

TEST_CASE("learning-rate milestones") {
    TrainConfig c;
    c.epochs = 50;
    CHECK(c.lr_at_epoch(0) == 1e-3);
    CHECK(c.lr_at_epoch(29) == 1e-3);
    CHECK(c.lr_at_epoch(30) == 5e-4);
    CHECK(c.lr_at_epoch(42) == 5e-4);
    CHECK(c.lr_at_epoch(43) == 2.5e-4);
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.snr_low_db = 10;
    c.snr_high_db = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.lr = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("pilot spec tags and densities") {
    PilotSpec p;
    for (std::size_t s : {4, 16, 32}) {
        p.spacing = s;
        CHECK(p.tag() == "d" + std::to_string(s));
        CHECK(p.nominal_density() == doctest::Approx(1.0 / s));
    }
    p.scheme = pilots::Scheme::lattice;
    p.spacing = 4;
    p.time_stride = 2;
    CHECK(p.tag() == "l4x2");
    CHECK(p.nominal_density() == doctest::Approx(1.0 / 8));
    p.scheme = pilots::Scheme::block;
    CHECK(p.tag() == "block");
    CHECK_THROWS_AS(p.validate(32, 1), ConfigError);
}

TEST_CASE("validation loss is frozen") {
    auto splits = toy_splits(8, 20);
    auto cfg = small_train(1);
    ValidationSet a(splits.val, cfg, 3), b(splits.val, cfg, 3);
    Denoiser net(tiny_net(), 2);
    denoiser::randomize_parameters(net, 1, 0.1);
    CHECK(a.loss(net) == a.loss(net));
    CHECK(a.loss(net) == b.loss(net));
    CHECK(a.size() == 20);
}

TEST_CASE("train keeps the best model and logs metrics") {
    auto splits = toy_splits(96, 16);
    auto cfg = small_train(3);
    int hooks = 0;
    auto res = train(cfg, splits.train, splits.val, initial_state(tiny_net(), cfg.seed),
                     [&](const TrainState&, double, bool) { ++hooks; });
    CHECK(hooks == 3);
    REQUIRE(res.metrics.size() == 4);
    CHECK(std::isnan(res.metrics[0].train_loss));
    CHECK(res.metrics[0].val_loss == res.init_val);
    CHECK(res.last.epoch == 3);
    CHECK(res.last.step == 3 * 6);
    double min_val = res.init_val;
    for (const auto& m : res.metrics) min_val = std::min(min_val, m.val_loss);
    CHECK(res.best_val == min_val);
    CHECK(res.best_val <= res.metrics.back().val_loss);
    CHECK_FALSE(res.diverged);

    ValidationSet val(splits.val, cfg, derive_seed(cfg.seed, 0x7A1));
    CHECK(val.loss(res.best) == doctest::Approx(res.best_val).epsilon(1e-12));

    // Same seed, same everything.
    auto again = train(cfg, splits.train, splits.val, initial_state(tiny_net(), cfg.seed));
    CHECK(again.best_val == res.best_val);
    CHECK(again.last.net.to_named_tensors()[10].tensor == res.last.net.to_named_tensors()[10].tensor);

    const auto dir = std::filesystem::temp_directory_path() / "diffrx_trainer_test";
    std::filesystem::create_directories(dir);
    write_metrics_csv(dir / "m.csv", res.metrics);
    std::ifstream in(dir / "m.csv");
    std::string header, first;
    std::getline(in, header);
    std::getline(in, first);
    CHECK(header == "step,epoch,train_loss,val_loss,lr,wall_ms");
    CHECK(first.rfind("0,0,,", 0) == 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("resuming at an epoch boundary reproduces an uninterrupted run") {
    auto splits = toy_splits(48, 8);
    auto plan = small_train(2);
    plan.lr_milestones.clear();
    auto one = plan;
    one.epochs = 1;
    auto part = train(one, splits.train, splits.val, initial_state(tiny_net(), plan.seed));
    auto rest = train(plan, splits.train, splits.val, part.last);
    auto ref = train(plan, splits.train, splits.val, initial_state(tiny_net(), plan.seed));
    CHECK(rest.last.step == ref.last.step);
    CHECK(rest.last.net.to_named_tensors().back().tensor == ref.last.net.to_named_tensors().back().tensor);
}

TEST_CASE("per-density checkpoints round trip") {
    auto splits = toy_splits(32, 8);
    const auto dir = std::filesystem::temp_directory_path() / "diffrx_ckpt_test";
    std::filesystem::create_directories(dir);
    for (std::size_t s : {4, 16}) {
        auto cfg = small_train(1);
        cfg.pilots.spacing = s;
        auto res = train(cfg, splits.train, splits.val, initial_state(tiny_net(), cfg.seed));
        save_train_checkpoint(dir / ("model_" + cfg.pilots.tag() + ".ckpt"), res.last, cfg, 32, 1);
    }
    for (std::size_t s : {4, 16}) {
        auto loaded = load_train_checkpoint(dir / ("model_d" + std::to_string(s) + ".ckpt"));
        CHECK(loaded.density == doctest::Approx(1.0 / s));
        CHECK(loaded.K == 32);
        CHECK(loaded.M == 1);
        CHECK(loaded.schedule.T == 1000);
        CHECK(loaded.state.epoch == 1);
        CHECK(loaded.state.adam.step == static_cast<std::int64_t>(loaded.state.step));
    }
    // A bare denoiser checkpoint lacks the training entries.
    numcore::save_checkpoint(dir / "bare.ckpt", Denoiser(tiny_net(), 1).to_named_tensors());
    CHECK_THROWS_AS(load_train_checkpoint(dir / "bare.ckpt"), FormatError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("schedule mismatch between net and trainer is refused") {
    auto splits = toy_splits(8, 4);
    auto cfg = small_train(1);
    auto net_cfg = tiny_net();
    net_cfg.schedule_T = 500;
    CHECK_THROWS_AS(train(cfg, splits.train, splits.val, initial_state(net_cfg, 1)), ConfigError);
}

TEST_CASE("joint training draws several spacings") {
    auto splits = toy_splits(32, 8);
    auto cfg = small_train(1);
    cfg.joint_spacings = {4, 16};
    auto res = train(cfg, splits.train, splits.val, initial_state(tiny_net(), cfg.seed));
    CHECK(std::isfinite(res.best_val));
}
