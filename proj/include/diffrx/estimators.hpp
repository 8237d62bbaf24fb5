#pragma once

#include "diffrx/chansim.hpp"
#include "diffrx/pilots.hpp"
#include "diffrx/resource_grid.hpp"

#include <Eigen/Dense>

namespace diffrx::estimators {

// Frequency-domain channel covariance R[k,k'] = E[H_k conj(H_k')].
struct CovarianceModel {
    enum class Source { analytic, empirical };

    Eigen::MatrixXcd R;
    Source source = Source::analytic;

    std::size_t size() const { return static_cast<std::size_t>(R.rows()); }
    // Throws NumericalError unless R is Hermitian (1e-10) and PSD (min eig >= -1e-8).
    void validate() const;
};

// Continuous exponential power-delay profile with RMS delay `delay_spread`:
// R[k,k'] = 1 / (1 + j 2pi (k-k') df tau).
CovarianceModel exponential_pdp_covariance(std::size_t K, double subcarrier_spacing, double delay_spread);

// (1/(N M)) sum over samples and symbols of h h^H, Hermitian-symmetrized.
CovarianceModel empirical_covariance(const chansim::Dataset& train);

// Zero-mean complex Gaussian grid whose columns have covariance cov.R.
ResourceGrid draw_gaussian_channel(const CovarianceModel& cov, std::size_t num_symbols, Rng& rng);

struct Estimate {
    ResourceGrid grid;
    // Set when some column had fewer than two pilots and was filled with the
    // nearest pilot value instead of interpolated.
    bool nearest_fallback = false;
};

// Complex linear interpolation along subcarriers, edges held at the nearest
// pilot. Symbols without pilots copy the nearest symbol that has them.
Estimate linear_interp(const pilots::PilotObservation& obs);

// Per-symbol LMMSE: H = R[:,P] (R[P,P] + (noise_var + reg) I)^-1 H_ls[P],
// reg = 1e-9 trace(R[P,P]) / |P|. Symbols without pilots copy the nearest
// symbol that has them.
ResourceGrid lmmse_interp(const pilots::PilotObservation& obs, const CovarianceModel& cov);

// ||est - truth||^2 / ||truth||^2
double nmse(const ResourceGrid& est, const ResourceGrid& truth);

} // namespace diffrx::estimators
