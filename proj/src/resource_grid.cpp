#include "diffrx/resource_grid.hpp"

#include "diffrx/error.hpp"

#include <cmath>
#include <string>

namespace diffrx {

ResourceGrid::ResourceGrid(std::size_t num_subcarriers, std::size_t num_symbols)
    : K_(num_subcarriers), M_(num_symbols), re_(K_ * M_, 0.0), im_(K_ * M_, 0.0) {}

ResourceGrid::ResourceGrid(std::size_t num_subcarriers, std::size_t num_symbols, std::vector<double> re,
                           std::vector<double> im)
    : K_(num_subcarriers), M_(num_symbols), re_(std::move(re)), im_(std::move(im)) {
    if (re_.size() != K_ * M_ || im_.size() != K_ * M_)
        throw DimensionError("resource grid planes do not match " + std::to_string(K_) + "x" + std::to_string(M_));
}

double ResourceGrid::energy() const {
    double e = 0.0;
    for (std::size_t i = 0; i < re_.size(); ++i) e += re_[i] * re_[i] + im_[i] * im_[i];
    return e;
}

double ResourceGrid::mean_power() const {
    return re_.empty() ? 0.0 : energy() / static_cast<double>(re_.size());
}

bool ResourceGrid::all_finite() const {
    for (std::size_t i = 0; i < re_.size(); ++i)
        if (!std::isfinite(re_[i]) || !std::isfinite(im_[i])) return false;
    return true;
}

void require_same_dims(const ResourceGrid& a, const ResourceGrid& b, const char* op) {
    if (!a.same_dims(b))
        throw DimensionError(std::string(op) + ": grid " + std::to_string(a.subcarriers()) + "x" +
                             std::to_string(a.symbols()) + " vs " + std::to_string(b.subcarriers()) + "x" +
                             std::to_string(b.symbols()));
}

} // namespace diffrx
