#include "debiaslab/tensor.hpp"

#include <stdexcept>

namespace debiaslab {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t dim : shape) {
        n *= dim;
    }
    return n;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            out += "x";
        }
        out += std::to_string(shape[i]);
    }
    out += "]";
    return out;
}

Tensor::Tensor(std::vector<std::size_t> shape_in, std::vector<double> values_in,
               bool requires_grad_in)
    : shape(std::move(shape_in)), values(std::move(values_in)), requires_grad(requires_grad_in) {
    for (std::size_t dim : shape) {
        if (dim == 0) {
            throw std::invalid_argument("Tensor: zero dimension in shape " +
                                        shape_to_string(shape));
        }
    }
    if (shape_numel(shape) != values.size()) {
        throw std::invalid_argument("Tensor: shape " + shape_to_string(shape) + " implies " +
                                    std::to_string(shape_numel(shape)) + " values, got " +
                                    std::to_string(values.size()));
    }
}

double& Tensor::at(std::size_t row, std::size_t col) {
    return values[row * cols() + col];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    return values[row * cols() + col];
}

std::size_t Tensor::rows() const {
    if (rank() != 2) {
        throw std::logic_error("Tensor::rows: rank-2 tensor required, got shape " +
                               shape_to_string(shape));
    }
    return shape[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) {
        throw std::logic_error("Tensor::cols: rank-2 tensor required, got shape " +
                               shape_to_string(shape));
    }
    return shape[1];
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    std::vector<double> values(shape_numel(shape), 0.0);
    return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    std::vector<double> values(shape_numel(shape), value);
    return Tensor(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

bool same_shape(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape;
}

}  // namespace debiaslab
