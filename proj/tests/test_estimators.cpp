#include "diffrx/error.hpp"
#include "diffrx/estimators.hpp"

#include <doctest.h>

#include <cmath>

using namespace diffrx;
using namespace diffrx::estimators;
using pilots::PilotMask;
using pilots::PilotObservation;

namespace {

PilotObservation make_obs(const std::vector<cplx>& ls, const std::vector<double>& mask, double noise_var,
                          std::size_t M = 1) {
    const std::size_t K = ls.size() / M;
    ResourceGrid g(K, M);
    for (std::size_t i = 0; i < ls.size(); ++i) g.set(i, ls[i]);
    return {g, PilotMask(K, M, mask, pilots::Scheme::custom), noise_var};
}

ResourceGrid scaled(const ResourceGrid& g, cplx s) {
    ResourceGrid r(g.subcarriers(), g.symbols());
    for (std::size_t i = 0; i < g.size(); ++i) r.set(i, g[i] * s);
    return r;
}

} // namespace

TEST_CASE("linear interpolation") {
    SUBCASE("midpoint") {
        auto obs = make_obs({0, 0, 0, 0, {4, 0}, 0, 0, 0}, {1, 0, 0, 0, 1, 0, 0, 0}, 0.0);
        auto est = linear_interp(obs);
        CHECK_FALSE(est.nearest_fallback);
        CHECK(est.grid[2] == cplx(2, 0));
        CHECK(est.grid[1] == cplx(1, 0));
        // Edges past the last pilot hold its value.
        CHECK(est.grid[7] == cplx(4, 0));
    }
    SUBCASE("complex values interpolate both planes") {
        auto obs = make_obs({0, {1, -2}, 0, {3, 2}}, {0, 1, 0, 1}, 0.0);
        auto g = linear_interp(obs).grid;
        CHECK(g[0] == cplx(1, -2));
        CHECK(g[2] == cplx(2, 0));
    }
    SUBCASE("all-ones mask returns LS") {
        auto obs = make_obs({{1, 2}, {3, 4}, {5, 6}}, {1, 1, 1}, 0.0);
        CHECK(linear_interp(obs).grid == obs.ls);
    }
    SUBCASE("flat noiseless channel is exact") {
        chansim::ChannelModelConfig cfg;
        Rng rng(1);
        ResourceGrid H(128, 1);
        for (std::size_t i = 0; i < 128; ++i) H.set(i, {0.3, -0.7});
        auto obs = pilots::observe(H, pilots::comb_mask(128, 1, 16, rng, true), chansim::kNoiselessSnr, rng);
        auto g = linear_interp(obs).grid;
        for (std::size_t i = 0; i < 128; ++i) CHECK(std::abs(g[i] - H[i]) < 1e-12);
    }
    SUBCASE("single pilot falls back to nearest fill") {
        auto obs = make_obs({0, {2, 1}, 0, 0}, {0, 1, 0, 0}, 0.0);
        auto est = linear_interp(obs);
        CHECK(est.nearest_fallback);
        for (std::size_t i = 0; i < 4; ++i) CHECK(est.grid[i] == cplx(2, 1));
    }
    SUBCASE("symbols without pilots copy the nearest pilot symbol") {
        // K=2, M=3; pilots only in column 0.
        auto obs = make_obs({{1, 0}, 0, 0, {3, 0}, 0, 0}, {1, 0, 0, 1, 0, 0}, 0.0, 3);
        auto g = linear_interp(obs).grid;
        for (std::size_t m = 0; m < 3; ++m) {
            CHECK(g.at(0, m) == cplx(1, 0));
            CHECK(g.at(1, m) == cplx(3, 0));
        }
    }
}

TEST_CASE("lmmse closed forms") {
    SUBCASE("2x2 toy") {
        const cplx rho{0.6, 0.3};
        const double s2 = 0.4;
        CovarianceModel cov;
        cov.R.resize(2, 2);
        cov.R << 1.0, std::conj(rho), rho, 1.0;
        const cplx h0{0.9, -0.2};
        auto obs = make_obs({h0, 0}, {1, 0}, s2);
        auto g = lmmse_interp(obs, cov);
        CHECK(std::abs(g[1] - rho * h0 / (1 + s2)) < 1e-12);
        CHECK(std::abs(g[0] - h0 / (1 + s2)) < 1e-12);
    }
    SUBCASE("noiseless all-pilot returns LS") {
        auto cov = exponential_pdp_covariance(16, 30e3, 100e-9);
        Rng rng(3);
        auto H = draw_gaussian_channel(cov, 1, rng);
        auto obs = pilots::observe(H, pilots::comb_mask_at(16, 1, 1, 0), chansim::kNoiselessSnr, rng);
        auto g = lmmse_interp(obs, cov);
        // diagonal jitter on a near-singular R leaves ~1e-5 residue
        for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(g[i] - H[i]) < 1e-4);
    }
    SUBCASE("huge noise drives the estimate to zero") {
        auto cov = exponential_pdp_covariance(16, 30e3, 100e-9);
        auto obs = make_obs(std::vector<cplx>(16, {1, 1}), std::vector<double>(16, 1.0), 1e12);
        auto g = lmmse_interp(obs, cov);
        for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(g[i]) < 1e-9);
    }
    SUBCASE("dimension and pilot checks") {
        auto cov = exponential_pdp_covariance(8, 30e3, 100e-9);
        CHECK_THROWS_AS(lmmse_interp(make_obs({1, 0, 0, 0}, {1, 0, 0, 0}, 0.1), cov), DimensionError);
        CHECK_THROWS_AS(lmmse_interp(make_obs(std::vector<cplx>(8), std::vector<double>(8, 0.0), 0.1), cov), ConfigError);
    }
}

TEST_CASE("covariance models") {
    SUBCASE("analytic pdp covariance is valid") {
        auto cov = exponential_pdp_covariance(128, 30e3, 100e-9);
        CHECK_NOTHROW(cov.validate());
        CHECK(cov.R(0, 0) == cplx(1, 0));
        CHECK(std::abs(cov.R(3, 1) - 1.0 / cplx(1, 2 * M_PI * 2 * 30e3 * 100e-9)) < 1e-12);
    }
    SUBCASE("identical flat channels give the all-ones matrix") {
        chansim::Dataset ds;
        for (int i = 0; i < 3; ++i) {
            ResourceGrid g(4, 2);
            for (std::size_t e = 0; e < 8; ++e) g.set(e, {1, 0});
            ds.samples.push_back(g);
        }
        auto cov = empirical_covariance(ds);
        CHECK(cov.source == CovarianceModel::Source::empirical);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) CHECK(std::abs(cov.R(r, c) - cplx(1, 0)) < 1e-15);
    }
    SUBCASE("uncorrelated unit-power vectors give the identity") {
        chansim::Dataset ds;
        Rng rng(5);
        for (int i = 0; i < 10000; ++i) {
            ResourceGrid g(4, 1);
            for (std::size_t e = 0; e < 4; ++e) g.set(e, rng.complex_normal());
            ds.samples.push_back(g);
        }
        auto cov = empirical_covariance(ds);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) CHECK(std::abs(cov.R(r, c) - (r == c ? 1.0 : 0.0)) < 0.1);
        CHECK((cov.R - cov.R.adjoint()).norm() == 0.0);
        CHECK_NOTHROW(cov.validate());
    }
    SUBCASE("validation") {
        CovarianceModel bad;
        bad.R = Eigen::MatrixXcd::Identity(2, 2);
        bad.R(0, 1) = {0.5, 0};
        CHECK_THROWS_AS(bad.validate(), NumericalError);
        bad.R = -Eigen::MatrixXcd::Identity(2, 2);
        CHECK_THROWS_AS(bad.validate(), NumericalError);
    }
    SUBCASE("gaussian draws follow the covariance") {
        auto cov = exponential_pdp_covariance(8, 30e3, 500e-9);
        Rng rng(6);
        chansim::Dataset ds;
        for (int i = 0; i < 20000; ++i) ds.samples.push_back(draw_gaussian_channel(cov, 1, rng));
        auto emp = empirical_covariance(ds);
        CHECK((emp.R - cov.R).cwiseAbs().maxCoeff() < 0.05);
    }
}

TEST_CASE("nmse") {
    ResourceGrid t(3, 1, {1, 2, 3}, {0, -1, 1});
    CHECK(nmse(t, t) == 0.0);
    CHECK(nmse(ResourceGrid(3, 1), t) == 1.0);
    ResourceGrid e(3, 1, {1, 2, 3}, {0, -1, 1});
    const double p = t.energy();
    e.set(0, e[0] + std::sqrt(0.1 * p));
    CHECK(nmse(e, t) == doctest::Approx(0.1));
    CHECK(nmse(scaled(e, {2, -3}), scaled(t, {2, -3})) == doctest::Approx(nmse(e, t)));
    CHECK_THROWS_AS(nmse(t, ResourceGrid(3, 1)), NumericalError);
    CHECK_THROWS_AS(nmse(t, ResourceGrid(4, 1)), DimensionError);
}

TEST_CASE("lmmse beats linear interpolation on matched gaussian channels") {
    const std::size_t K = 64;
    auto cov = exponential_pdp_covariance(K, 30e3, 300e-9);
    Rng rng(7);
    double lin = 0, lm = 0;
    const int N = 500;
    for (int n = 0; n < N; ++n) {
        auto H = draw_gaussian_channel(cov, 1, rng);
        auto obs = pilots::observe(H, pilots::comb_mask(K, 1, 8, rng, true), 10.0, rng);
        lin += nmse(linear_interp(obs).grid, H);
        lm += nmse(lmmse_interp(obs, cov), H);
    }
    INFO("linear " << lin / N << " lmmse " << lm / N);
    CHECK(lm <= 1.05 * lin);
}

TEST_CASE("lmmse shrinks below ls with all pilots") {
    const std::size_t K = 32;
    auto cov = exponential_pdp_covariance(K, 30e3, 100e-9);
    Rng rng(8);
    double ls = 0, lm = 0;
    const int N = 500;
    for (int n = 0; n < N; ++n) {
        auto H = draw_gaussian_channel(cov, 1, rng);
        auto obs = pilots::observe(H, pilots::comb_mask_at(K, 1, 1, 0), 5.0, rng);
        ls += nmse(obs.ls, H);
        lm += nmse(lmmse_interp(obs, cov), H);
    }
    CHECK(lm <= ls);
}
