#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace debiaslab {

std::size_t shape_numel(const std::vector<std::size_t>& shape);
std::string shape_to_string(const std::vector<std::size_t>& shape);

// Dense row-major tensor of 64-bit reals. `grad` is filled by Tape::backward
// for nodes that take part in differentiation; it always matches `shape`.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::optional<std::vector<double>> grad;

    Tensor() = default;
    Tensor(std::vector<std::size_t> shape_in, std::vector<double> values_in,
           bool requires_grad_in = false);

    std::size_t numel() const { return values.size(); }
    std::size_t rank() const { return shape.size(); }
    bool is_scalar() const { return numel() == 1; }

    // Rank-2 element access.
    double& at(std::size_t row, std::size_t col);
    double at(std::size_t row, std::size_t col) const;
    std::size_t rows() const;
    std::size_t cols() const;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
};

bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace debiaslab
