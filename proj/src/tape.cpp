#include "debiaslab/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace debiaslab {

namespace {

// outer/len/inner decomposition for reductions along `axis`.
struct AxisSpan {
    std::size_t outer = 1;
    std::size_t len = 1;
    std::size_t inner = 1;
};

AxisSpan axis_span(const std::vector<std::size_t>& shape, std::size_t axis) {
    AxisSpan s;
    for (std::size_t i = 0; i < axis; ++i) {
        s.outer *= shape[i];
    }
    s.len = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) {
        s.inner *= shape[i];
    }
    return s;
}

std::vector<std::size_t> drop_axis(const std::vector<std::size_t>& shape, std::size_t axis) {
    std::vector<std::size_t> out;
    out.reserve(shape.size() - 1);
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != axis) {
            out.push_back(shape[i]);
        }
    }
    return out;
}

bool is_nonnegative_integer(double x) {
    return x >= 0.0 && x == std::floor(x);
}

}  // namespace

Tape::Node& Tape::node(Var v) {
    if (v.id >= nodes_.size()) {
        throw std::out_of_range("Tape: var id " + std::to_string(v.id) +
                                " out of range (tape has " + std::to_string(nodes_.size()) +
                                " nodes)");
    }
    return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
    return const_cast<Tape*>(this)->node(v);
}

Tape::Var Tape::push(Node n) {
    n.adjoint.assign(n.value.numel(), 0.0);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tape::Var Tape::leaf(Tensor value) {
    Node n;
    n.op = OpKind::kLeaf;
    n.requires_grad = value.requires_grad;
    n.value = std::move(value);
    return push(std::move(n));
}

Tape::Var Tape::constant(Tensor value) {
    value.requires_grad = false;
    return leaf(std::move(value));
}

Tape::Var Tape::matmul(Var a, Var b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0]) {
        throw std::invalid_argument("matmul: cannot multiply " + shape_to_string(ta.shape) +
                                    " by " + shape_to_string(tb.shape));
    }
    const std::size_t m = ta.shape[0];
    const std::size_t k = ta.shape[1];
    const std::size_t nn = tb.shape[1];
    Tensor out = Tensor::zeros({m, nn});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const double av = ta.values[i * k + l];
            if (av == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < nn; ++j) {
                out.values[i * nn + j] += av * tb.values[l * nn + j];
            }
        }
    }
    Node n;
    n.op = OpKind::kMatmul;
    n.in = {a.id, b.id};
    n.arity = 2;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = std::move(out);
    return push(std::move(n));
}

Tape::Var Tape::binary_elementwise(OpKind op, Var a, Var b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    const bool scalar_rhs = tb.numel() == 1 && ta.numel() != 1;
    if (!scalar_rhs && ta.shape != tb.shape) {
        throw std::invalid_argument("elementwise: shape mismatch " + shape_to_string(ta.shape) +
                                    " vs " + shape_to_string(tb.shape));
    }
    Tensor out = ta;
    out.requires_grad = false;
    out.grad.reset();
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        const double rhs = scalar_rhs ? tb.values[0] : tb.values[i];
        switch (op) {
            case OpKind::kAdd: out.values[i] += rhs; break;
            case OpKind::kSub: out.values[i] -= rhs; break;
            case OpKind::kMul: out.values[i] *= rhs; break;
            default: throw std::logic_error("binary_elementwise: bad op");
        }
    }
    Node n;
    n.op = op;
    n.in = {a.id, b.id};
    n.arity = 2;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    n.value = std::move(out);
    return push(std::move(n));
}

Tape::Var Tape::add(Var a, Var b) { return binary_elementwise(OpKind::kAdd, a, b); }
Tape::Var Tape::sub(Var a, Var b) { return binary_elementwise(OpKind::kSub, a, b); }
Tape::Var Tape::mul(Var a, Var b) { return binary_elementwise(OpKind::kMul, a, b); }

Tape::Var Tape::unary_elementwise(OpKind op, Var a, double scalar) {
    const Tensor& ta = node(a).value;
    Tensor out = ta;
    out.requires_grad = false;
    out.grad.reset();
    for (double& x : out.values) {
        switch (op) {
            case OpKind::kAddScalar: x += scalar; break;
            case OpKind::kSubScalar: x -= scalar; break;
            case OpKind::kMulScalar: x *= scalar; break;
            case OpKind::kTanh: x = std::tanh(x); break;
            case OpKind::kRelu: x = x > 0.0 ? x : 0.0; break;
            case OpKind::kExp: x = std::exp(x); break;
            case OpKind::kLog:
                if (x <= 0.0) {
                    throw std::domain_error("log: non-positive input " + std::to_string(x));
                }
                x = std::log(x);
                break;
            case OpKind::kPowScalar:
                if (x < 0.0 || (x == 0.0 && !is_nonnegative_integer(scalar))) {
                    throw std::domain_error("pow_scalar: base " + std::to_string(x) +
                                            " outside domain for exponent " +
                                            std::to_string(scalar));
                }
                x = std::pow(x, scalar);
                break;
            default: throw std::logic_error("unary_elementwise: bad op");
        }
    }
    Node n;
    n.op = op;
    n.in = {a.id, 0};
    n.arity = 1;
    n.requires_grad = node(a).requires_grad;
    n.scalar = scalar;
    n.value = std::move(out);
    return push(std::move(n));
}

Tape::Var Tape::add(Var a, double b) { return unary_elementwise(OpKind::kAddScalar, a, b); }
Tape::Var Tape::sub(Var a, double b) { return unary_elementwise(OpKind::kSubScalar, a, b); }
Tape::Var Tape::mul(Var a, double b) { return unary_elementwise(OpKind::kMulScalar, a, b); }
Tape::Var Tape::tanh(Var a) { return unary_elementwise(OpKind::kTanh, a); }
Tape::Var Tape::relu(Var a) { return unary_elementwise(OpKind::kRelu, a); }
Tape::Var Tape::exp(Var a) { return unary_elementwise(OpKind::kExp, a); }
Tape::Var Tape::log(Var a) { return unary_elementwise(OpKind::kLog, a); }
Tape::Var Tape::pow_scalar(Var a, double exponent) {
    return unary_elementwise(OpKind::kPowScalar, a, exponent);
}

Tape::Var Tape::log_softmax(Var a) {
    const Tensor& ta = node(a).value;
    if (ta.rank() != 2) {
        throw std::invalid_argument("log_softmax: rank-2 input required, got " +
                                    shape_to_string(ta.shape));
    }
    const std::size_t rows = ta.shape[0];
    const std::size_t cols = ta.shape[1];
    Tensor out = ta;
    out.requires_grad = false;
    out.grad.reset();
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = out.values.data() + r * cols;
        const double max = *std::max_element(row, row + cols);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            total += std::exp(row[c] - max);
        }
        const double lse = max + std::log(total);
        for (std::size_t c = 0; c < cols; ++c) {
            row[c] -= lse;
        }
    }
    Node n;
    n.op = OpKind::kLogSoftmax;
    n.in = {a.id, 0};
    n.arity = 1;
    n.requires_grad = node(a).requires_grad;
    n.value = std::move(out);
    return push(std::move(n));
}

Tape::Var Tape::reduce(OpKind op, Var a, std::size_t axis) {
    const Tensor& ta = node(a).value;
    if (axis >= ta.rank()) {
        throw std::invalid_argument("reduce: axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_to_string(ta.shape));
    }
    const AxisSpan s = axis_span(ta.shape, axis);
    std::vector<std::size_t> out_shape = drop_axis(ta.shape, axis);
    std::vector<double> out(s.outer * s.inner, 0.0);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t i = 0; i < s.len; ++i) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const double x = ta.values[(o * s.len + i) * s.inner + in];
                out[o * s.inner + in] += op == OpKind::kL2NormAxis ? x * x : x;
            }
        }
    }
    if (op == OpKind::kMeanAxis) {
        for (double& x : out) {
            x /= static_cast<double>(s.len);
        }
    } else if (op == OpKind::kL2NormAxis) {
        for (double& x : out) {
            x = std::sqrt(x);
        }
    }
    Node n;
    n.op = op;
    n.in = {a.id, 0};
    n.arity = 1;
    n.requires_grad = node(a).requires_grad;
    n.axis = axis;
    n.value = Tensor(std::move(out_shape), std::move(out));
    return push(std::move(n));
}

Tape::Var Tape::sum(Var a, std::size_t axis) { return reduce(OpKind::kSumAxis, a, axis); }
Tape::Var Tape::mean(Var a, std::size_t axis) { return reduce(OpKind::kMeanAxis, a, axis); }
Tape::Var Tape::l2_norm(Var a, std::size_t axis) { return reduce(OpKind::kL2NormAxis, a, axis); }

Tape::Var Tape::embedding_gather(Var table, std::vector<std::int32_t> ids) {
    const Tensor& tt = node(table).value;
    if (tt.rank() != 2) {
        throw std::invalid_argument("embedding_gather: rank-2 table required, got " +
                                    shape_to_string(tt.shape));
    }
    if (ids.empty()) {
        throw std::invalid_argument("embedding_gather: empty id sequence");
    }
    const std::size_t vocab = tt.shape[0];
    const std::size_t dim = tt.shape[1];
    Tensor out = Tensor::zeros({ids.size(), dim});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const std::int32_t id = ids[r];
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw std::out_of_range("embedding_gather: token id " + std::to_string(id) +
                                    " out of range [0, " + std::to_string(vocab) + ")");
        }
        std::copy_n(tt.values.data() + static_cast<std::size_t>(id) * dim, dim,
                    out.values.data() + r * dim);
    }
    Node n;
    n.op = OpKind::kGather;
    n.in = {table.id, 0};
    n.arity = 1;
    n.requires_grad = node(table).requires_grad;
    n.ids = std::move(ids);
    n.value = std::move(out);
    return push(std::move(n));
}

void Tape::backward(Var loss) {
    Node& root = node(loss);
    if (root.value.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_to_string(root.value.shape));
    }
    for (Node& n : nodes_) {
        n.adjoint.assign(n.value.numel(), 0.0);
    }
    root.adjoint[0] = 1.0;
    std::vector<char> live(nodes_.size(), 0);
    live[loss.id] = 1;
    for (std::uint32_t id = loss.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!live[id] || !n.requires_grad || n.op == OpKind::kLeaf) {
            continue;
        }
        propagate(n, live);
    }
    // Publish gradients on the leaves (and gather outputs, which stand in
    // for input-embedding leaves); interior adjoints stay readable via grad().
    for (Node& n : nodes_) {
        if (n.requires_grad && (n.op == OpKind::kLeaf || n.op == OpKind::kGather)) {
            n.value.grad = n.adjoint;
        }
    }
}

void Tape::propagate(Node& n, std::vector<char>& live) {
    const std::vector<double>& g = n.adjoint;
    Node& a = nodes_[n.in[0]];
    const bool a_grad = a.requires_grad;
    if (a_grad) {
        live[n.in[0]] = 1;
    }
    Node* b = n.arity == 2 ? &nodes_[n.in[1]] : nullptr;
    const bool b_grad = b != nullptr && b->requires_grad;
    if (b_grad) {
        live[n.in[1]] = 1;
    }

    switch (n.op) {
        case OpKind::kMatmul: {
            const std::size_t m = a.value.shape[0];
            const std::size_t k = a.value.shape[1];
            const std::size_t nn = b->value.shape[1];
            if (a_grad) {
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t l = 0; l < k; ++l) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < nn; ++j) {
                            acc += g[i * nn + j] * b->value.values[l * nn + j];
                        }
                        a.adjoint[i * k + l] += acc;
                    }
                }
            }
            if (b_grad) {
                for (std::size_t l = 0; l < k; ++l) {
                    for (std::size_t i = 0; i < m; ++i) {
                        const double av = a.value.values[i * k + l];
                        if (av == 0.0) {
                            continue;
                        }
                        for (std::size_t j = 0; j < nn; ++j) {
                            b->adjoint[l * nn + j] += av * g[i * nn + j];
                        }
                    }
                }
            }
            break;
        }
        case OpKind::kAdd:
        case OpKind::kSub:
        case OpKind::kMul: {
            const bool scalar_rhs = b->value.numel() == 1 && a.value.numel() != 1;
            const double sign = n.op == OpKind::kSub ? -1.0 : 1.0;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const std::size_t bi = scalar_rhs ? 0 : i;
                if (n.op == OpKind::kMul) {
                    if (a_grad) {
                        a.adjoint[i] += g[i] * b->value.values[bi];
                    }
                    if (b_grad) {
                        b->adjoint[bi] += g[i] * a.value.values[i];
                    }
                } else {
                    if (a_grad) {
                        a.adjoint[i] += g[i];
                    }
                    if (b_grad) {
                        b->adjoint[bi] += sign * g[i];
                    }
                }
            }
            break;
        }
        case OpKind::kAddScalar:
        case OpKind::kSubScalar:
            for (std::size_t i = 0; i < g.size(); ++i) {
                a.adjoint[i] += g[i];
            }
            break;
        case OpKind::kMulScalar:
            for (std::size_t i = 0; i < g.size(); ++i) {
                a.adjoint[i] += g[i] * n.scalar;
            }
            break;
        case OpKind::kTanh:
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double y = n.value.values[i];
                a.adjoint[i] += g[i] * (1.0 - y * y);
            }
            break;
        case OpKind::kRelu:
            // Subgradient at 0 is taken as 0.
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (a.value.values[i] > 0.0) {
                    a.adjoint[i] += g[i];
                }
            }
            break;
        case OpKind::kExp:
            for (std::size_t i = 0; i < g.size(); ++i) {
                a.adjoint[i] += g[i] * n.value.values[i];
            }
            break;
        case OpKind::kLog:
            for (std::size_t i = 0; i < g.size(); ++i) {
                a.adjoint[i] += g[i] / a.value.values[i];
            }
            break;
        case OpKind::kPowScalar:
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double x = a.value.values[i];
                a.adjoint[i] += g[i] * n.scalar * std::pow(x, n.scalar - 1.0);
            }
            break;
        case OpKind::kLogSoftmax: {
            const std::size_t rows = n.value.shape[0];
            const std::size_t cols = n.value.shape[1];
            for (std::size_t r = 0; r < rows; ++r) {
                double gsum = 0.0;
                for (std::size_t c = 0; c < cols; ++c) {
                    gsum += g[r * cols + c];
                }
                for (std::size_t c = 0; c < cols; ++c) {
                    const double soft = std::exp(n.value.values[r * cols + c]);
                    a.adjoint[r * cols + c] += g[r * cols + c] - soft * gsum;
                }
            }
            break;
        }
        case OpKind::kSumAxis:
        case OpKind::kMeanAxis: {
            const AxisSpan s = axis_span(a.value.shape, n.axis);
            const double scale =
                n.op == OpKind::kMeanAxis ? 1.0 / static_cast<double>(s.len) : 1.0;
            for (std::size_t o = 0; o < s.outer; ++o) {
                for (std::size_t i = 0; i < s.len; ++i) {
                    for (std::size_t in = 0; in < s.inner; ++in) {
                        a.adjoint[(o * s.len + i) * s.inner + in] +=
                            g[o * s.inner + in] * scale;
                    }
                }
            }
            break;
        }
        case OpKind::kL2NormAxis: {
            const AxisSpan s = axis_span(a.value.shape, n.axis);
            for (std::size_t o = 0; o < s.outer; ++o) {
                for (std::size_t i = 0; i < s.len; ++i) {
                    for (std::size_t in = 0; in < s.inner; ++in) {
                        const double norm = n.value.values[o * s.inner + in];
                        if (norm == 0.0) {
                            continue;  // zero vector: subgradient 0
                        }
                        const double x = a.value.values[(o * s.len + i) * s.inner + in];
                        a.adjoint[(o * s.len + i) * s.inner + in] +=
                            g[o * s.inner + in] * x / norm;
                    }
                }
            }
            break;
        }
        case OpKind::kGather: {
            const std::size_t dim = a.value.shape[1];
            for (std::size_t r = 0; r < n.ids.size(); ++r) {
                const std::size_t row = static_cast<std::size_t>(n.ids[r]);
                for (std::size_t c = 0; c < dim; ++c) {
                    a.adjoint[row * dim + c] += g[r * dim + c];
                }
            }
            break;
        }
        case OpKind::kLeaf:
            break;
    }
}

const Tensor& Tape::value(Var v) const {
    return node(v).value;
}

std::span<const double> Tape::grad(Var v) const {
    return std::span<const double>(node(v).adjoint);
}

double grad_check(
    const std::function<std::pair<double, std::vector<double>>(const Tensor&)>& fn,
    const Tensor& point, double step) {
    const auto [value, analytic] = fn(point);
    (void)value;
    if (analytic.size() != point.numel()) {
        throw std::invalid_argument("grad_check: gradient has " +
                                    std::to_string(analytic.size()) + " entries for a point of " +
                                    std::to_string(point.numel()));
    }
    Tensor probe = point;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < probe.numel(); ++i) {
        const double original = probe.values[i];
        probe.values[i] = original + step;
        const double plus = fn(probe).first;
        probe.values[i] = original - step;
        const double minus = fn(probe).first;
        probe.values[i] = original;
        const double central = (plus - minus) / (2.0 * step);
        const double denom = std::max({std::abs(analytic[i]), std::abs(central), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic[i] - central) / denom);
    }
    return max_rel;
}

}  // namespace debiaslab
