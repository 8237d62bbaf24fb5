#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace diffrx::numcore {

// Project-wide floating type. Double keeps finite-difference gradient checks
// meaningful; desk-scale networks do not need the float throughput.
using Scalar = double;

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array of up to four axes (batch, channel, height, width).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, Scalar fill = 0.0);
    Tensor(Shape shape, std::vector<Scalar> data);

    static Tensor scalar(Scalar v) { return Tensor({1}, std::vector<Scalar>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<const Scalar> data() const noexcept { return data_; }
    std::span<Scalar> data() noexcept { return data_; }
    const std::vector<Scalar>& vec() const noexcept { return data_; }

    Scalar operator[](std::size_t i) const { return data_[i]; }
    Scalar& operator[](std::size_t i) { return data_[i]; }

    // Value of a single-element tensor.
    Scalar item() const;

    // Same data, different extents; numel must agree.
    Tensor reshaped(Shape shape) const;

    void fill(Scalar v);
    bool all_finite() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<Scalar> data_;
};

// A named trainable tensor. grad is populated by Graph::backward.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
};

} // namespace diffrx::numcore
