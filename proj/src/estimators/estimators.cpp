#include "diffrx/estimators.hpp"

#include "diffrx/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include <algorithm>

#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>

namespace diffrx::estimators {

void CovarianceModel::validate() const {
    if (R.rows() != R.cols() || R.rows() == 0) throw NumericalError("covariance must be a nonempty square matrix");
    const double herm = (R - R.adjoint()).cwiseAbs().maxCoeff();
    if (herm > 1e-10) {
        std::ostringstream os;
        os << "covariance is not Hermitian (max |R - R^H| = " << herm << ")";
        throw NumericalError(os.str());
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(R, Eigen::EigenvaluesOnly);
    const double min_eig = es.eigenvalues().minCoeff();
    if (min_eig < -1e-8) {
        std::ostringstream os;
        os << "covariance is not positive semidefinite (min eigenvalue " << min_eig << ")";
        throw NumericalError(os.str());
    }
}

CovarianceModel exponential_pdp_covariance(std::size_t K, double subcarrier_spacing, double delay_spread) {
    CovarianceModel cov;
    cov.source = CovarianceModel::Source::analytic;
    cov.R.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K));
    for (std::size_t a = 0; a < K; ++a)
        for (std::size_t b = 0; b < K; ++b) {
            const double d = static_cast<double>(a) - static_cast<double>(b);
            cov.R(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                1.0 / cplx(1.0, 2.0 * std::numbers::pi * d * subcarrier_spacing * delay_spread);
        }
    return cov;
}

CovarianceModel empirical_covariance(const chansim::Dataset& train) {
    if (train.samples.size() < 2) throw ConfigError("empirical covariance needs at least 2 samples");
    const std::size_t K = train.subcarriers(), M = train.symbols();
    const auto n = static_cast<Eigen::Index>(K);
    CovarianceModel cov;
    cov.source = CovarianceModel::Source::empirical;
    cov.R = Eigen::MatrixXcd::Zero(n, n);
    Eigen::VectorXcd h(n);
    for (const auto& g : train.samples) {
        if (g.subcarriers() != K || g.symbols() != M) throw DimensionError("dataset samples have mixed dims");
        for (std::size_t m = 0; m < M; ++m) {
            for (std::size_t k = 0; k < K; ++k) h(static_cast<Eigen::Index>(k)) = g.at(k, m);
            cov.R.noalias() += h * h.adjoint();
        }
    }
    cov.R /= static_cast<double>(train.samples.size() * M);
    cov.R = 0.5 * (cov.R + cov.R.adjoint()).eval();
    return cov;
}

ResourceGrid draw_gaussian_channel(const CovarianceModel& cov, std::size_t num_symbols, Rng& rng) {
    const auto n = cov.R.rows();
    // Jitter keeps the factorization defined for rank-deficient R.
    const double jitter = 1e-10 * cov.R.diagonal().real().mean();
    Eigen::MatrixXcd A = cov.R + jitter * Eigen::MatrixXcd::Identity(n, n);
    Eigen::LLT<Eigen::MatrixXcd> llt(A);
    if (llt.info() != Eigen::Success) throw NumericalError("covariance Cholesky factorization failed");
    const Eigen::MatrixXcd L = llt.matrixL();
    ResourceGrid H(static_cast<std::size_t>(n), num_symbols);
    Eigen::VectorXcd w(n);
    for (std::size_t m = 0; m < num_symbols; ++m) {
        for (Eigen::Index k = 0; k < n; ++k) w(k) = rng.complex_normal(1.0);
        const Eigen::VectorXcd h = L * w;
        for (Eigen::Index k = 0; k < n; ++k) H.set(static_cast<std::size_t>(k), m, h(k));
    }
    return H;
}

namespace {

// Copies each pilot-less symbol from the nearest symbol in `done` (ties go
// to the earlier symbol).
void fill_missing_symbols(ResourceGrid& out, const std::vector<bool>& done) {
    const std::size_t K = out.subcarriers(), M = out.symbols();
    for (std::size_t m = 0; m < M; ++m) {
        if (done[m]) continue;
        std::optional<std::size_t> src;
        for (std::size_t d = 1; d < M && !src; ++d) {
            if (m >= d && done[m - d]) src = m - d;
            else if (m + d < M && done[m + d]) src = m + d;
        }
        if (!src) continue;
        for (std::size_t k = 0; k < K; ++k) out.set(k, m, out.at(k, *src));
    }
}

} // namespace

Estimate linear_interp(const pilots::PilotObservation& obs) {
    const ResourceGrid& ls = obs.ls;
    const std::size_t K = ls.subcarriers(), M = ls.symbols();
    Estimate est{ResourceGrid(K, M), false};
    std::vector<bool> done(M, false);
    for (std::size_t m = 0; m < M; ++m) {
        const auto ks = obs.mask.pilot_subcarriers(m);
        if (ks.empty()) continue;
        done[m] = true;
        if (ks.size() == 1) {
            est.nearest_fallback = true;
            for (std::size_t k = 0; k < K; ++k) est.grid.set(k, m, ls.at(ks[0], m));
            continue;
        }
        for (std::size_t k = 0; k < ks.front(); ++k) est.grid.set(k, m, ls.at(ks.front(), m));
        for (std::size_t k = ks.back(); k < K; ++k) est.grid.set(k, m, ls.at(ks.back(), m));
        for (std::size_t p = 0; p + 1 < ks.size(); ++p) {
            const std::size_t k0 = ks[p], k1 = ks[p + 1];
            const cplx a = ls.at(k0, m), b = ls.at(k1, m);
            for (std::size_t k = k0; k <= k1; ++k) {
                const double w = static_cast<double>(k - k0) / static_cast<double>(k1 - k0);
                est.grid.set(k, m, a + w * (b - a));
            }
        }
    }
    if (std::find(done.begin(), done.end(), true) == done.end()) {
        est.nearest_fallback = true;
        return est;
    }
    fill_missing_symbols(est.grid, done);
    return est;
}

ResourceGrid lmmse_interp(const pilots::PilotObservation& obs, const CovarianceModel& cov) {
    const ResourceGrid& ls = obs.ls;
    const std::size_t K = ls.subcarriers(), M = ls.symbols();
    if (cov.size() != K)
        throw DimensionError("lmmse_interp: covariance is " + std::to_string(cov.size()) + "x" +
                             std::to_string(cov.size()) + " but grid has " + std::to_string(K) + " subcarriers");
    ResourceGrid out(K, M);
    std::vector<bool> done(M, false);
    for (std::size_t m = 0; m < M; ++m) {
        const auto ks = obs.mask.pilot_subcarriers(m);
        if (ks.empty()) continue;
        done[m] = true;
        const auto P = static_cast<Eigen::Index>(ks.size());
        Eigen::MatrixXcd Rpp(P, P);
        Eigen::MatrixXcd Rkp(static_cast<Eigen::Index>(K), P);
        Eigen::VectorXcd y(P);
        for (Eigen::Index i = 0; i < P; ++i) {
            const auto ki = static_cast<Eigen::Index>(ks[static_cast<std::size_t>(i)]);
            y(i) = ls.at(ks[static_cast<std::size_t>(i)], m);
            for (Eigen::Index j = 0; j < P; ++j)
                Rpp(i, j) = cov.R(ki, static_cast<Eigen::Index>(ks[static_cast<std::size_t>(j)]));
            Rkp.col(i) = cov.R.col(ki);
        }
        // Floor on the diagonal load so noiseless pilots on a low-rank R
        // still solve; real noise variances pass through untouched.
        const double floor = 1e-9 * Rpp.trace().real() / static_cast<double>(P);
        if (std::isinf(obs.noise_var)) continue;  // uninformative pilots: zero estimate
        Rpp.diagonal().array() += std::max(obs.noise_var, floor);
        Eigen::PartialPivLU<Eigen::MatrixXcd> lu(Rpp);
        const double rcond = lu.rcond();
        if (!(rcond > 1e-15)) {
            std::ostringstream os;
            os << "lmmse_interp: pilot covariance is singular (reciprocal condition estimate " << rcond << ")";
            throw NumericalError(os.str());
        }
        const Eigen::VectorXcd h = Rkp * lu.solve(y);
        for (std::size_t k = 0; k < K; ++k) out.set(k, m, h(static_cast<Eigen::Index>(k)));
    }
    if (std::find(done.begin(), done.end(), true) == done.end())
        throw ConfigError("lmmse_interp: observation has no pilots");
    fill_missing_symbols(out, done);
    return out;
}

double nmse(const ResourceGrid& est, const ResourceGrid& truth) {
    require_same_dims(est, truth, "nmse");
    const double denom = truth.energy();
    if (!(denom > 0.0)) throw NumericalError("nmse: reference channel has zero power");
    double num = 0.0;
    for (std::size_t i = 0; i < est.size(); ++i) num += std::norm(est[i] - truth[i]);
    return num / denom;
}

} // namespace diffrx::estimators
