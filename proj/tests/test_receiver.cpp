#include "diffrx/error.hpp"
#include "diffrx/receiver.hpp"

#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>

using namespace diffrx;
using namespace diffrx::receiver;

namespace {

double qfunc(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

std::vector<std::uint8_t> random_bits(std::size_t n, Rng& rng) {
    std::vector<std::uint8_t> b(n);
    for (auto& v : b) v = static_cast<std::uint8_t>(rng.uniform_int(0, 1));
    return b;
}

ResourceGrid unit_grid(std::size_t K) {
    ResourceGrid g(K, 1);
    for (std::size_t i = 0; i < K; ++i) g.set(i, {1, 0});
    return g;
}

chansim::ChannelModelConfig default_channel() { return {}; }

} // namespace

TEST_CASE("constellations") {
    for (auto m : {Modulation::qpsk, Modulation::qam16}) {
        auto cs = constellation(m);
        const std::size_t n = std::size_t{1} << cs.bits_per_symbol;
        REQUIRE(cs.points.size() == n);
        CHECK(n == (m == Modulation::qpsk ? 4u : 16u));
        double p = 0;
        for (auto c : cs.points) p += std::norm(c);
        CHECK(std::abs(p / n - 1.0) < 1e-12);

        double dmin = 1e9;
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a + 1; b < n; ++b) dmin = std::min(dmin, std::abs(cs.points[a] - cs.points[b]));
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a + 1; b < n; ++b)
                if (std::abs(std::abs(cs.points[a] - cs.points[b]) - dmin) < 1e-9)
                    CHECK(std::popcount(static_cast<unsigned>(a ^ b)) == 1);

        CHECK(parse_modulation(modulation_name(m)) == m);
    }
    CHECK_THROWS_AS(parse_modulation("8psk"), ConfigError);
}

TEST_CASE("modulation round trip") {
    Rng rng(1);
    for (auto m : {Modulation::qpsk, Modulation::qam16}) {
        auto cs = constellation(m);
        auto bits = random_bits(cs.bits_per_symbol * 500, rng);
        auto sym = modulate(bits, cs);
        CHECK(sym.size() == 500);
        CHECK(demodulate_hard(sym, cs) == bits);

        auto zeros = modulate(std::vector<std::uint8_t>(cs.bits_per_symbol * 6, 0), cs);
        for (auto s : zeros) CHECK(s == zeros[0]);
        double maxre = 0;
        for (auto p : cs.points) maxre = std::max(maxre, std::abs(p.real()));
        CHECK(std::abs(zeros[0].real()) == doctest::Approx(maxre));
        CHECK(std::abs(zeros[0].imag()) == doctest::Approx(maxre));

        CHECK_THROWS_AS(modulate(std::vector<std::uint8_t>(cs.bits_per_symbol + 1, 0), cs), DimensionError);
    }
}

TEST_CASE("frame mapping") {
    auto mask = pilots::comb_mask_at(8, 1, 4, 1);
    CHECK(data_count(mask) == 6);
    std::vector<cplx> data{1, 2, 3, 4, 5, 6};
    auto X = map_frame(data, mask);
    CHECK(X[1] == pilots::kPilotSymbol);
    CHECK(X[5] == pilots::kPilotSymbol);
    CHECK(X[0] == cplx(1));
    CHECK(X[2] == cplx(2));
    CHECK(X[7] == cplx(6));
    CHECK(data_symbols(X, mask) == data);
    CHECK_THROWS_AS(map_frame(std::vector<cplx>(5), mask), DimensionError);
}

TEST_CASE("mmse equalizer") {
    Rng rng(2);
    ResourceGrid H(16, 1), X(16, 1), Y(16, 1);
    auto cs = constellation(Modulation::qpsk);
    for (std::size_t i = 0; i < 16; ++i) {
        H.set(i, rng.complex_normal());
        X.set(i, cs.points[i % 4]);
        Y.set(i, H[i] * X[i]);
    }
    auto eq = equalize_mmse(Y, H, 0.0);
    for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(eq[i] - X[i]) < 1e-12);
    auto damp = equalize_mmse(Y, H, 1e15);
    for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(damp[i]) < 1e-12);
    auto inf = equalize_mmse(Y, H, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < 16; ++i) CHECK(inf[i] == cplx(0, 0));
    const double s2 = 0.3;
    auto mm = equalize_mmse(Y, H, s2);
    CHECK(std::abs(mm[3] - std::conj(H[3]) * Y[3] / (std::norm(H[3]) + s2)) < 1e-14);
    CHECK_THROWS_AS(equalize_mmse(Y, ResourceGrid(16, 1), 0.0), NumericalError);
}

TEST_CASE("perfect-CSI QPSK BER follows the Q function") {
    auto cs = constellation(Modulation::qpsk);
    Rng rng(3);
    const std::size_t n_sym = 500000;
    for (double esn0_db : {4.0, 10.0}) {
        const double s2 = std::pow(10.0, -esn0_db / 10);
        auto bits = random_bits(2 * n_sym, rng);
        auto sym = modulate(bits, cs);
        ResourceGrid Y(n_sym, 1);
        for (std::size_t i = 0; i < n_sym; ++i) Y.set(i, sym[i] + rng.complex_normal(s2));
        auto eq = equalize_mmse(Y, unit_grid(n_sym), s2);
        std::vector<cplx> flat(eq.size());
        for (std::size_t i = 0; i < eq.size(); ++i) flat[i] = eq[i];
        auto hat = demodulate_hard(flat, cs);
        std::size_t err = 0;
        for (std::size_t i = 0; i < bits.size(); ++i) err += hat[i] != bits[i];
        const double ber = double(err) / bits.size();
        const double theory = qfunc(std::sqrt(1.0 / s2));
        INFO("Es/N0 " << esn0_db << " dB: ber " << ber << " theory " << theory);
        CHECK(ber == doctest::Approx(theory).epsilon(0.2));
    }
}

TEST_CASE("constellation score") {
    auto cs = constellation(Modulation::qpsk);
    Rng rng(4);
    auto H = chansim::draw_channel(default_channel(), rng);
    auto mask = pilots::comb_mask_at(128, 1, 16, 0);
    auto bits = random_bits(2 * data_count(mask), rng);
    auto X = map_frame(modulate(bits, cs), mask);
    ResourceGrid Y(128, 1);
    for (std::size_t i = 0; i < 128; ++i) Y.set(i, H[i] * X[i]);

    CHECK(constellation_score(H, Y, 0.0, cs, mask) < 1e-24);
    ResourceGrid H2(128, 1);
    for (std::size_t i = 0; i < 128; ++i) H2.set(i, 2.0 * H[i]);
    CHECK(constellation_score(H2, Y, 0.0, cs, mask) == doctest::Approx(0.25));

    auto all = pilots::comb_mask_at(128, 1, 1, 0);
    CHECK_THROWS_AS(constellation_score(H, Y, 0.0, cs, all), UsageError);
}

TEST_CASE("the true channel scores better than a random one") {
    auto cs = constellation(Modulation::qpsk);
    Rng rng(5);
    const double s2 = std::pow(10.0, -1.5);
    auto mask = pilots::comb_mask_at(128, 1, 16, 0);
    int wins = 0;
    const int N = 500;
    for (int n = 0; n < N; ++n) {
        auto H = chansim::draw_channel(default_channel(), rng);
        auto other = chansim::draw_channel(default_channel(), rng);
        auto X = map_frame(modulate(random_bits(2 * data_count(mask), rng), cs), mask);
        ResourceGrid Y(128, 1);
        for (std::size_t i = 0; i < 128; ++i) Y.set(i, H[i] * X[i] + rng.complex_normal(s2));
        if (constellation_score(H, Y, s2, cs, mask) <= constellation_score(other, Y, s2, cs, mask)) ++wins;
    }
    CHECK(wins >= N * 95 / 100);
}

TEST_CASE("score does not depend on the payload") {
    auto cs = constellation(Modulation::qpsk);
    Rng rng(6);
    auto H = chansim::draw_channel(default_channel(), rng);
    ResourceGrid Hhat(128, 1);
    for (std::size_t i = 0; i < 128; ++i) Hhat.set(i, H[i] * cplx(0.8, 0.3));
    auto mask = pilots::comb_mask_at(128, 1, 8, 3);
    auto sym = modulate(random_bits(2 * data_count(mask), rng), cs);
    auto score_of = [&](const std::vector<cplx>& s) {
        auto X = map_frame(s, mask);
        ResourceGrid Y(128, 1);
        for (std::size_t i = 0; i < 128; ++i) Y.set(i, H[i] * X[i]);
        return constellation_score(Hhat, Y, 0.0, cs, mask);
    };
    const double base = score_of(sym);
    CHECK(base > 0.0);
    for (int p = 0; p < 5; ++p) {
        std::shuffle(sym.begin(), sym.end(), rng.engine());
        CHECK(score_of(sym) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("estimator names") {
    for (auto e : {Estimator::perfect, Estimator::ls_linear, Estimator::lmmse, Estimator::dm_vanilla,
                   Estimator::dm_repaint, Estimator::dm_best_of_n})
        CHECK(parse_estimator(estimator_name(e)) == e);
    CHECK(needs_model(Estimator::dm_repaint));
    CHECK_FALSE(needs_model(Estimator::lmmse));
    CHECK_THROWS_AS(parse_estimator("amp"), ConfigError);
}

TEST_CASE("end-to-end link") {
    LinkSpec spec;
    spec.pilot_spacing = 16;
    spec.snr_db = 10.0;
    spec.n_frames = 1000;
    spec.seed = 3;
    auto raw = chansim::build_dataset(spec.channel, 4000, 1, 1);
    auto cov = estimators::empirical_covariance(raw.train);
    EstimatorContext ctx;
    ctx.covariance = &cov;

    auto perfect = end_to_end_ber(spec, Estimator::perfect, ctx);
    auto lin = end_to_end_ber(spec, Estimator::ls_linear, ctx);
    auto lm = end_to_end_ber(spec, Estimator::lmmse, ctx);
    CHECK(perfect.n_bits >= 100000);
    CHECK(perfect.n_bits == 1000 * 2 * (128 - 8));
    CHECK(perfect.ber == double(perfect.n_errors) / perfect.n_bits);
    CHECK(perfect.nmse_mean == 0.0);
    CHECK(perfect.ber <= lin.ber);
    CHECK(perfect.ber <= lm.ber);
    CHECK(lm.ber <= lin.ber);
    CHECK(lm.nmse_mean <= lin.nmse_mean);

    double prev = 1.0;
    for (double snr : {0.0, 10.0, 20.0}) {
        spec.snr_db = snr;
        spec.n_frames = 300;
        auto r = end_to_end_ber(spec, Estimator::lmmse, ctx);
        CHECK(r.ber <= prev);
        prev = r.ber;
    }

    auto again = end_to_end_ber(spec, Estimator::lmmse, ctx);
    CHECK(again.n_errors == end_to_end_ber(spec, Estimator::lmmse, ctx).n_errors);

    CHECK_THROWS_AS(end_to_end_ber(spec, Estimator::lmmse, EstimatorContext{}), UsageError);
    CHECK_THROWS_AS(end_to_end_ber(spec, Estimator::dm_repaint, ctx), UsageError);
}

TEST_CASE("nmse ranking agrees with ber ranking") {
    chansim::ChannelModelConfig ch;
    auto raw = chansim::build_dataset(ch, 4000, 1, 1);
    auto cov = estimators::empirical_covariance(raw.train);
    EstimatorContext ctx;
    ctx.covariance = &cov;
    int agree = 0;
    const int runs = 10;
    for (int r = 0; r < runs; ++r) {
        LinkSpec spec;
        spec.pilot_spacing = 16;
        spec.snr_db = 10.0;
        spec.n_frames = 300;
        spec.seed = 100 + r;
        auto lin = end_to_end_ber(spec, Estimator::ls_linear, ctx);
        auto lm = end_to_end_ber(spec, Estimator::lmmse, ctx);
        auto pf = end_to_end_ber(spec, Estimator::perfect, ctx);
        const bool nmse_order = pf.nmse_mean <= lm.nmse_mean && lm.nmse_mean <= lin.nmse_mean;
        const bool ber_order = pf.ber <= lm.ber && lm.ber <= lin.ber;
        if (nmse_order == ber_order) ++agree;
    }
    CHECK(agree >= runs * 9 / 10);
}

TEST_CASE("ber csv") {
    const auto path = std::filesystem::temp_directory_path() / "diffrx_ber_test.csv";
    BerRow row{"lmmse", 10.0, 0.0625, {0.01, 0.02, 1000, 10, 5}, 7};
    write_ber_csv(path, {row});
    std::ifstream in(path);
    std::string header, line;
    std::getline(in, header);
    std::getline(in, line);
    CHECK(header == "estimator,snr_db,density,ber,nmse_mean,n_bits,seed");
    CHECK(line == "lmmse,10,0.0625,0.01,0.02,1000,7");
    std::filesystem::remove(path);
}
