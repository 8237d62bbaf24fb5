#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace diffrx {

using cplx = std::complex<double>;

// Complex values over (subcarrier k, OFDM symbol m), stored as two real
// K x M planes, row-major (index k*M + m).
class ResourceGrid {
public:
    ResourceGrid() = default;
    ResourceGrid(std::size_t num_subcarriers, std::size_t num_symbols);
    ResourceGrid(std::size_t num_subcarriers, std::size_t num_symbols, std::vector<double> re,
                 std::vector<double> im);

    std::size_t subcarriers() const noexcept { return K_; }
    std::size_t symbols() const noexcept { return M_; }
    std::size_t size() const noexcept { return re_.size(); }
    bool same_dims(const ResourceGrid& o) const noexcept { return K_ == o.K_ && M_ == o.M_; }

    cplx at(std::size_t k, std::size_t m) const { return {re_[k * M_ + m], im_[k * M_ + m]}; }
    void set(std::size_t k, std::size_t m, cplx v) {
        re_[k * M_ + m] = v.real();
        im_[k * M_ + m] = v.imag();
    }
    // Flat (row-major) element access.
    cplx operator[](std::size_t i) const { return {re_[i], im_[i]}; }
    void set(std::size_t i, cplx v) {
        re_[i] = v.real();
        im_[i] = v.imag();
    }

    std::span<const double> re() const noexcept { return re_; }
    std::span<const double> im() const noexcept { return im_; }
    std::span<double> re() noexcept { return re_; }
    std::span<double> im() noexcept { return im_; }

    double mean_power() const;
    double energy() const;  // sum |x|^2
    bool all_finite() const;

    friend bool operator==(const ResourceGrid&, const ResourceGrid&) = default;

private:
    std::size_t K_ = 0;
    std::size_t M_ = 0;
    std::vector<double> re_;
    std::vector<double> im_;
};

// Throws DimensionError naming both grids' dims when they differ.
void require_same_dims(const ResourceGrid& a, const ResourceGrid& b, const char* op);

} // namespace diffrx
