#include "diffrx/chansim.hpp"
#include "diffrx/error.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace diffrx;
using namespace diffrx::chansim;

namespace {

ResourceGrid constant_grid(std::size_t K, std::size_t M, cplx v) {
    ResourceGrid g(K, M);
    for (std::size_t i = 0; i < g.size(); ++i) g.set(i, v);
    return g;
}

double mean_sq_diff(const ResourceGrid& a, const ResourceGrid& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::norm(a[i] - b[i]);
    return s / a.size();
}

} // namespace

TEST_CASE("single zero-delay path gives a flat grid") {
    ChannelModelConfig cfg;
    cfg.num_symbols = 4;
    std::vector<Path> paths{{{0.6, -0.8}, 0.0, 0.0}};
    auto H = synthesize_cfr(cfg, paths);
    for (std::size_t i = 0; i < H.size(); ++i) CHECK(std::abs(H[i] - cplx(0.6, -0.8)) < 1e-15);
}

TEST_CASE("synthesis formula on a hand-built path") {
    ChannelModelConfig cfg;
    cfg.num_subcarriers = 4;
    cfg.num_symbols = 2;
    cfg.max_doppler = 100;
    std::vector<Path> paths{{{1, 0}, 1e-6, 50.0}};
    auto H = synthesize_cfr(cfg, paths);
    const double two_pi = 2 * std::numbers::pi;
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t m = 0; m < 2; ++m) {
            const double ph = -two_pi * k * cfg.subcarrier_spacing * 1e-6 + two_pi * 50.0 * m * cfg.symbol_duration;
            CHECK(std::abs(H.at(k, m) - std::polar(1.0, ph)) < 1e-12);
        }
}

TEST_CASE("zero Doppler gives identical columns") {
    ChannelModelConfig cfg;
    cfg.num_subcarriers = 64;
    cfg.num_symbols = 14;
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        auto H = draw_channel(cfg, rng);
        for (std::size_t k = 0; k < 64; ++k)
            for (std::size_t m = 1; m < 14; ++m) CHECK(H.at(k, m) == H.at(k, 0));
    }
}

TEST_CASE("nonzero Doppler varies over time") {
    ChannelModelConfig cfg;
    cfg.num_subcarriers = 16;
    cfg.num_symbols = 14;
    cfg.max_doppler = 500;
    Rng rng(4);
    auto H = draw_channel(cfg, rng);
    CHECK(std::abs(H.at(3, 13) - H.at(3, 0)) > 1e-6);
}

TEST_CASE("unit average power over many draws") {
    ChannelModelConfig cfg;
    Rng rng(77);
    const int N = 10000;
    double total = 0, at0 = 0, at64 = 0;
    for (int n = 0; n < N; ++n) {
        auto H = draw_channel(cfg, rng);
        total += H.mean_power();
        at0 += std::norm(H.at(0, 0));
        at64 += std::norm(H.at(64, 0));
    }
    CHECK(total / N == doctest::Approx(1.0).epsilon(0.05));
    CHECK(at0 / N == doctest::Approx(1.0).epsilon(0.05));
    CHECK(at64 / N == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("path powers sum to one") {
    ChannelModelConfig cfg;
    Rng rng(5);
    auto paths = draw_paths(cfg, rng);
    REQUIRE(paths.size() == cfg.num_paths);
    for (const auto& p : paths) {
        CHECK(p.delay >= 0.0);
        CHECK(p.doppler == 0.0);
    }
}

TEST_CASE("awgn") {
    Rng rng(8);
    auto ones = constant_grid(100, 100, {1, 0});
    SUBCASE("infinite snr is identity") { CHECK(awgn(ones, kNoiselessSnr, rng) == ones); }
    SUBCASE("0 dB") { CHECK(mean_sq_diff(awgn(ones, 0.0, rng), ones) == doctest::Approx(1.0).epsilon(0.05)); }
    SUBCASE("10 dB") { CHECK(mean_sq_diff(awgn(ones, 10.0, rng), ones) == doctest::Approx(0.1).epsilon(0.05)); }
    SUBCASE("noise is split evenly between planes") {
        auto y = awgn(ones, 0.0, rng);
        double re = 0, im = 0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            re += (y[i].real() - 1) * (y[i].real() - 1);
            im += y[i].imag() * y[i].imag();
        }
        CHECK(re / y.size() == doctest::Approx(0.5).epsilon(0.05));
        CHECK(im / y.size() == doctest::Approx(0.5).epsilon(0.05));
    }
    SUBCASE("variance tracks grid power") { CHECK(noise_variance_for(constant_grid(4, 1, {2, 0}), 10.0) == doctest::Approx(0.4)); }
}

TEST_CASE("transmit") {
    Rng rng(12);
    ChannelModelConfig cfg;
    auto H = draw_channel(cfg, rng);
    SUBCASE("all-ones X, noiseless") { CHECK(transmit(H, constant_grid(128, 1, {1, 0}), kNoiselessSnr, rng) == H); }
    SUBCASE("unit H, QPSK X, noiseless") {
        ResourceGrid X(128, 1);
        const double a = std::numbers::sqrt2 / 2;
        for (std::size_t i = 0; i < 128; ++i) X.set(i, {i % 2 ? a : -a, i % 3 ? a : -a});
        CHECK(transmit(constant_grid(128, 1, {1, 0}), X, kNoiselessSnr, rng) == X);
    }
    SUBCASE("unit H, unit X, 0 dB") {
        auto one = constant_grid(100, 100, {1, 0});
        CHECK(mean_sq_diff(transmit(one, one, 0.0, rng), one) == doctest::Approx(1.0).epsilon(0.05));
    }
    SUBCASE("shape mismatch") { CHECK_THROWS_AS(transmit(H, ResourceGrid(64, 1), 0.0, rng), DimensionError); }
}

TEST_CASE("dataset normalization and determinism") {
    ChannelModelConfig cfg;
    cfg.seed = 42;
    auto raw = build_dataset(cfg, 50, 20, 10);
    CHECK(raw.train.samples.size() == 50);
    CHECK(raw.val.samples.size() == 20);
    CHECK(raw.test.samples.size() == 10);
    auto norm = normalize_splits(raw);

    double p = 0;
    for (const auto& g : norm.train.samples) p += g.mean_power();
    CHECK(std::abs(p / 50 - 1.0) < 1e-6);

    CHECK(norm.val.normalization == norm.train.normalization);
    CHECK(norm.test.normalization == norm.train.normalization);
    CHECK(norm.val.normalization != normalize_dataset(raw.val).normalization);
    CHECK(std::abs(norm.val.samples[3].at(5, 0) - raw.val.samples[3].at(5, 0) / norm.train.normalization) < 1e-12);

    auto again = build_dataset(cfg, 50, 20, 10);
    for (std::size_t i = 0; i < 50; ++i) CHECK(again.train.samples[i] == raw.train.samples[i]);

    cfg.seed = 43;
    auto other = build_dataset(cfg, 50, 20, 10);
    CHECK_FALSE(other.train.samples[0] == raw.train.samples[0]);

    CHECK_THROWS_AS(build_dataset(cfg, 0, 1, 1), ConfigError);
}

TEST_CASE("sample streams do not depend on split sizes") {
    ChannelModelConfig cfg;
    auto a = build_dataset(cfg, 5, 3, 2);
    auto b = build_dataset(cfg, 9, 4, 7);
    CHECK(a.train.samples[4] == b.train.samples[4]);
    CHECK(a.test.samples[1] == b.test.samples[1]);
}

TEST_CASE("frequency correlation decays with separation") {
    ChannelModelConfig cfg;
    Rng rng(31);
    const std::size_t K = cfg.num_subcarriers;
    const int N = 4000;
    std::vector<cplx> acc(K);
    for (int n = 0; n < N; ++n) {
        auto H = draw_channel(cfg, rng);
        for (std::size_t d = 0; d < K; ++d)
            for (std::size_t k = 0; k + d < K; ++k) acc[d] += H[k] * std::conj(H[k + d]) / double(K - d);
    }
    // Smoothed magnitude over bins of 16 lags.
    std::vector<double> bins;
    for (std::size_t b = 0; b + 16 <= 112; b += 16) {
        double s = 0;
        for (std::size_t d = b; d < b + 16; ++d) s += std::abs(acc[d]) / N;
        bins.push_back(s / 16);
    }
    for (std::size_t i = 1; i < bins.size(); ++i) CHECK(bins[i] < bins[i - 1]);
    CHECK(std::abs(acc[0]) / N == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("dataset file round trip") {
    ChannelModelConfig cfg;
    cfg.num_subcarriers = 16;
    cfg.num_symbols = 3;
    auto ds = normalize_dataset(build_dataset(cfg, 4, 1, 1).train);
    const auto path = std::filesystem::temp_directory_path() / "diffrx_test_ds.bin";
    save_dataset(path, ds);
    auto back = load_dataset(path);
    REQUIRE(back.samples.size() == 4);
    CHECK(back.subcarriers() == 16);
    CHECK(back.symbols() == 3);
    CHECK(back.normalization == doctest::Approx(ds.normalization).epsilon(1e-6));
    for (std::size_t s = 0; s < 4; ++s)
        for (std::size_t i = 0; i < 48; ++i) CHECK(std::abs(back.samples[s][i] - ds.samples[s][i]) < 1e-6);

    std::ifstream in(path, std::ios::binary);
    char magic[8];
    in.read(magic, 8);
    CHECK(std::string(magic, 8) == "DIFFRXDS");
    in.close();

    std::filesystem::resize_file(path, 40);
    CHECK_THROWS_AS(load_dataset(path), FormatError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(load_dataset(path), IoError);
}

TEST_CASE("config validation") {
    ChannelModelConfig cfg;
    cfg.delay_spread = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.num_paths = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.num_subcarriers = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
