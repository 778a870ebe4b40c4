#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "debiaslab/tensor.hpp"

namespace debiaslab {

// Reverse-mode autodiff over a dynamic tape. Values are computed eagerly as
// nodes are appended, so the node list is a topological order by construction
// and backward() is a single reverse sweep. A tape is rebuilt per forward
// pass and is single-threaded; tensors read out of it are plain values.
//
// Binary elementwise ops require equal shapes, except that the right operand
// may be a one-element tensor, which broadcasts (its gradient is the sum of
// the elementwise contributions). No other broadcasting is supported.
class Tape {
  public:
    struct Var {
        std::uint32_t id = 0;
    };

    Var leaf(Tensor value);
    // Leaf with gradient tracking forced off.
    Var constant(Tensor value);

    Var matmul(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var add(Var a, double b);
    Var sub(Var a, double b);
    Var mul(Var a, double b);
    Var tanh(Var a);
    Var relu(Var a);
    Var exp(Var a);
    Var log(Var a);
    // Elementwise a^exponent. Inputs must be positive unless the exponent is
    // a non-negative integer, so the derivative exponent*a^(exponent-1) stays finite.
    Var pow_scalar(Var a, double exponent);
    // Rows of a rank-2 [n x Y] input become log-probabilities; computed in
    // the max-subtracted stable form.
    Var log_softmax(Var a);
    Var sum(Var a, std::size_t axis);
    Var mean(Var a, std::size_t axis);
    // Square root of the sum of squares along `axis`.
    Var l2_norm(Var a, std::size_t axis);
    // Row selection out of a rank-2 table. The output node keeps its own
    // adjoint, so gradients with respect to the gathered embeddings are
    // retrievable; the backward pass also scatters into the table rows.
    Var embedding_gather(Var table, std::vector<std::int32_t> ids);

    // Seeds d(loss)/d(loss) = 1 and sweeps nodes in reverse order, visiting
    // each at most once. Adjoints from a previous call are cleared first;
    // nodes not on a path to `loss` keep an all-zero gradient.
    void backward(Var loss);

    const Tensor& value(Var v) const;
    // Adjoint of v after the most recent backward() (zeros beforehand).
    std::span<const double> grad(Var v) const;
    std::size_t size() const { return nodes_.size(); }

  private:
    enum class OpKind : std::uint8_t {
        kLeaf,
        kMatmul,
        kAdd,
        kSub,
        kMul,
        kAddScalar,
        kSubScalar,
        kMulScalar,
        kTanh,
        kRelu,
        kExp,
        kLog,
        kPowScalar,
        kLogSoftmax,
        kSumAxis,
        kMeanAxis,
        kL2NormAxis,
        kGather,
    };

    struct Node {
        OpKind op = OpKind::kLeaf;
        std::array<std::uint32_t, 2> in{0, 0};
        std::uint8_t arity = 0;
        bool requires_grad = false;
        double scalar = 0.0;
        std::size_t axis = 0;
        std::vector<std::int32_t> ids;
        Tensor value;
        std::vector<double> adjoint;
    };

    Node& node(Var v);
    const Node& node(Var v) const;
    Var push(Node n);
    Var unary_elementwise(OpKind op, Var a, double scalar = 0.0);
    Var binary_elementwise(OpKind op, Var a, Var b);
    Var reduce(OpKind op, Var a, std::size_t axis);
    void propagate(Node& n, std::vector<char>& live);

    std::vector<Node> nodes_;
};

// Central-difference gradient verification. `fn` evaluates a scalar function
// and its analytic gradient at a point. Returns the max over coordinates of
// |analytic - central| / max(|analytic|, |central|, 1e-8) at the given step.
double grad_check(
    const std::function<std::pair<double, std::vector<double>>(const Tensor&)>& fn,
    const Tensor& point, double step);

}  // namespace debiaslab
