// SPDX-License-Identifier: Apache-2.0

#include "ptum/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace ptum {

namespace {

thread_local bool g_no_grad = false;

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

[[noreturn]] void shape_error(const std::string& what) {
    throw std::invalid_argument("tensor: " + what);
}

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) shape_error(std::string(op) + ": undefined tensor");
}

NodePtr make_leaf(std::vector<std::size_t> shape, std::vector<double> value, bool requires_grad) {
    if (shape_numel(shape) != value.size()) shape_error("shape does not match data length");
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad && !g_no_grad;
    return n;
}

// Creates a graph node. Parents that cannot receive gradient are dropped
// from the traversal list; if none remain the node is a constant.
Tensor make_op(std::vector<std::size_t> shape, std::vector<double> value,
               std::initializer_list<NodePtr> parents,
               std::function<void(TensorNode&)> backward_fn) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    if (!g_no_grad) {
        for (const auto& p : parents) {
            if (p && p->requires_grad) n->parents.push_back(p);
        }
        if (!n->parents.empty()) {
            n->requires_grad = true;
            n->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor::wrap(std::move(n));
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

// True when b is a 1-D vector that broadcasts over the rows of 2-D a.
bool row_broadcast(const Tensor& a, const Tensor& b) {
    return a.ndim() == 2 && b.ndim() == 1 && a.dim(1) == b.dim(0);
}

}  // namespace

// ---- NoGradGuard ------------------------------------------------------

NoGradGuard::NoGradGuard() : prev_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = prev_; }
bool NoGradGuard::active() { return g_no_grad; }

// ---- Tensor -----------------------------------------------------------

Tensor Tensor::wrap(std::shared_ptr<detail::TensorNode> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    std::vector<double> v(shape_numel(shape), 0.0);
    return wrap(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    std::vector<double> v(shape_numel(shape), value);
    return wrap(make_leaf(std::move(shape), std::move(v), requires_grad));
}

Tensor Tensor::from_data(std::vector<std::size_t> shape, std::vector<double> data,
                         bool requires_grad) {
    return wrap(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const std::vector<std::size_t>& Tensor::shape() const {
    check_defined(*this, "shape");
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) shape_error("dim: axis out of range");
    return s[axis];
}

std::size_t Tensor::numel() const {
    check_defined(*this, "numel");
    return node_->numel();
}

const std::vector<double>& Tensor::data() const {
    check_defined(*this, "data");
    return node_->value;
}

std::vector<double>& Tensor::mutable_data() {
    check_defined(*this, "mutable_data");
    return node_->value;
}

bool Tensor::requires_grad() const {
    check_defined(*this, "requires_grad");
    return node_->requires_grad;
}

const std::vector<double>& Tensor::grad() const {
    check_defined(*this, "grad");
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    check_defined(*this, "zero_grad");
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) shape_error("item: tensor is not scalar");
    return node_->value[0];
}

// ---- elementwise ------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_defined(a, "add");
    check_defined(b, "add");
    if (same_shape(a, b)) {
        std::vector<double> out(a.numel());
        const auto& av = a.data();
        const auto& bv = b.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
        auto pa = a.node_ptr();
        auto pb = b.node_ptr();
        return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](TensorNode& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
            }
        });
    }
    if (row_broadcast(a, b)) {
        const std::size_t m = a.dim(0), n = a.dim(1);
        std::vector<double> out(a.numel());
        const auto& av = a.data();
        const auto& bv = b.data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] + bv[j];
        auto pa = a.node_ptr();
        auto pb = b.node_ptr();
        return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb, m, n](TensorNode& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < m * n; ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) pb->grad[j] += self.grad[i * n + j];
            }
        });
    }
    shape_error("add: incompatible shapes");
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    check_defined(a, "mul");
    check_defined(b, "mul");
    if (same_shape(a, b)) {
        std::vector<double> out(a.numel());
        const auto& av = a.data();
        const auto& bv = b.data();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
        auto pa = a.node_ptr();
        auto pb = b.node_ptr();
        return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb](TensorNode& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pa->grad[i] += self.grad[i] * pb->value[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pb->grad[i] += self.grad[i] * pa->value[i];
            }
        });
    }
    if (row_broadcast(a, b)) {
        const std::size_t m = a.dim(0), n = a.dim(1);
        std::vector<double> out(a.numel());
        const auto& av = a.data();
        const auto& bv = b.data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = av[i * n + j] * bv[j];
        auto pa = a.node_ptr();
        auto pb = b.node_ptr();
        return make_op(a.shape(), std::move(out), {pa, pb}, [pa, pb, m, n](TensorNode& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        pa->grad[i * n + j] += self.grad[i * n + j] * pb->value[j];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        pb->grad[j] += self.grad[i * n + j] * pa->value[i * n + j];
            }
        });
    }
    shape_error("mul: incompatible shapes");
}

Tensor scale(const Tensor& a, double c) {
    check_defined(a, "scale");
    std::vector<double> out(a.numel());
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
    auto pa = a.node_ptr();
    return make_op(a.shape(), std::move(out), {pa}, [pa, c](TensorNode& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += c * self.grad[i];
    });
}

// ---- linear algebra ---------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        shape_error("matmul: inner dimensions disagree");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n, 0.0);
    const double* av = a.data().data();
    const double* bv = b.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * n;
        const double* arow = av + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double s = arow[p];
            const double* brow = bv + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += s * brow[j];
        }
    }
    auto pa = a.node_ptr();
    auto pb = b.node_ptr();
    return make_op({m, n}, std::move(out), {pa, pb}, [pa, pb, m, k, n](TensorNode& self) {
        const double* g = self.grad.data();
        if (pa->requires_grad) {
            pa->ensure_grad();  // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* grow = g + i * n;
                    const double* brow = pb->value.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    pa->grad[i * k + p] += acc;
                }
        }
        if (pb->requires_grad) {
            pb->ensure_grad();  // dB = A^T * G
            for (std::size_t p = 0; p < k; ++p) {
                double* brow = pb->grad.data() + p * n;
                for (std::size_t i = 0; i < m; ++i) {
                    const double s = pa->value[i * k + p];
                    const double* grow = g + i * n;
                    for (std::size_t j = 0; j < n; ++j) brow[j] += s * grow[j];
                }
            }
        }
    });
}

Tensor matvec(const Tensor& a, const Tensor& x) {
    check_defined(a, "matvec");
    check_defined(x, "matvec");
    if (a.ndim() != 2 || x.ndim() != 1 || a.dim(1) != x.dim(0))
        shape_error("matvec: dimensions disagree");
    const std::size_t m = a.dim(0), k = a.dim(1);
    std::vector<double> out(m, 0.0);
    const double* av = a.data().data();
    const double* xv = x.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* arow = av + i * k;
        for (std::size_t j = 0; j < k; ++j) acc += arow[j] * xv[j];
        out[i] = acc;
    }
    auto pa = a.node_ptr();
    auto px = x.node_ptr();
    return make_op({m}, std::move(out), {pa, px}, [pa, px, m, k](TensorNode& self) {
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double g = self.grad[i];
                double* arow = pa->grad.data() + i * k;
                for (std::size_t j = 0; j < k; ++j) arow[j] += g * px->value[j];
            }
        }
        if (px->requires_grad) {
            px->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double g = self.grad[i];
                const double* arow = pa->value.data() + i * k;
                for (std::size_t j = 0; j < k; ++j) px->grad[j] += g * arow[j];
            }
        }
    });
}

Tensor dot(const Tensor& a, const Tensor& b) {
    check_defined(a, "dot");
    check_defined(b, "dot");
    if (a.ndim() != 1 || b.ndim() != 1 || a.dim(0) != b.dim(0))
        shape_error("dot: dimensions disagree");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.data()[i] * b.data()[i];
    auto pa = a.node_ptr();
    auto pb = b.node_ptr();
    return make_op({1}, {acc}, {pa, pb}, [pa, pb](TensorNode& self) {
        const double g = self.grad[0];
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (std::size_t i = 0; i < pa->value.size(); ++i) pa->grad[i] += g * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (std::size_t i = 0; i < pb->value.size(); ++i) pb->grad[i] += g * pa->value[i];
        }
    });
}

Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
    check_defined(a, "reshape");
    if (shape_numel(shape) != a.numel()) shape_error("reshape: element count mismatch");
    auto pa = a.node_ptr();
    return make_op(std::move(shape), a.data(), {pa}, [pa](TensorNode& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    });
}

Tensor transpose(const Tensor& a) {
    check_defined(a, "transpose");
    if (a.ndim() != 2) shape_error("transpose: expected 2-D tensor");
    const std::size_t m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    const auto& av = a.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    auto pa = a.node_ptr();
    return make_op({n, m}, std::move(out), {pa}, [pa, m, n](TensorNode& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) pa->grad[i * n + j] += self.grad[j * m + i];
    });
}

// ---- activations ------------------------------------------------------

Tensor tanh(const Tensor& a) {
    check_defined(a, "tanh");
    std::vector<double> out(a.numel());
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
    auto pa = a.node_ptr();
    return make_op(a.shape(), std::move(out), {pa}, [pa](TensorNode& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.value[i];
            pa->grad[i] += self.grad[i] * (1.0 - y * y);
        }
    });
}

Tensor sigmoid(const Tensor& a) {
    check_defined(a, "sigmoid");
    std::vector<double> out(a.numel());
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = av[i];
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    auto pa = a.node_ptr();
    return make_op(a.shape(), std::move(out), {pa}, [pa](TensorNode& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.value[i];
            pa->grad[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

Tensor relu(const Tensor& a) {
    check_defined(a, "relu");
    std::vector<double> out(a.numel());
    const auto& av = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : 0.0;
    auto pa = a.node_ptr();
    return make_op(a.shape(), std::move(out), {pa}, [pa](TensorNode& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (pa->value[i] > 0.0) pa->grad[i] += self.grad[i];
    });
}

// ---- softmax / losses -------------------------------------------------

Tensor softmax(const Tensor& a) {
    check_defined(a, "softmax");
    if (a.ndim() < 1 || a.ndim() > 2) shape_error("softmax: expected 1-D or 2-D tensor");
    const std::size_t cols = a.ndim() == 2 ? a.dim(1) : a.dim(0);
    const std::size_t rows = a.numel() / cols;
    if (cols == 0) shape_error("softmax: empty axis");
    std::vector<double> out(a.numel());
    const auto& av = a.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = av.data() + r * cols;
        double* orow = out.data() + r * cols;
        double mx = row[0];
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (std::size_t j = 0; j < cols; ++j) orow[j] /= denom;
    }
    auto pa = a.node_ptr();
    return make_op(a.shape(), std::move(out), {pa}, [pa, rows, cols](TensorNode& self) {
        pa->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * cols;
            const double* g = self.grad.data() + r * cols;
            double gy = 0.0;
            for (std::size_t j = 0; j < cols; ++j) gy += g[j] * y[j];
            double* pg = pa->grad.data() + r * cols;
            for (std::size_t j = 0; j < cols; ++j) pg[j] += y[j] * (g[j] - gy);
        }
    });
}

Tensor mask_fill(const Tensor& a, const Tensor& mask, double fill) {
    check_defined(a, "mask_fill");
    check_defined(mask, "mask_fill");
    if (!same_shape(a, mask)) shape_error("mask_fill: mask shape mismatch");
    std::vector<double> out(a.numel());
    const auto& av = a.data();
    const auto& mv = mask.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = mv[i] != 0.0 ? av[i] : fill;
    auto pa = a.node_ptr();
    auto pm = mask.node_ptr();
    return make_op(a.shape(), std::move(out), {pa}, [pa, pm](TensorNode& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (pm->value[i] != 0.0) pa->grad[i] += self.grad[i];
    });
}

Tensor mean_axis(const Tensor& a, int axis) {
    check_defined(a, "mean_axis");
    if (a.ndim() != 2) shape_error("mean_axis: expected 2-D tensor");
    if (axis != 0 && axis != 1) shape_error("mean_axis: axis must be 0 or 1");
    const std::size_t m = a.dim(0), n = a.dim(1);
    const auto& av = a.data();
    auto pa = a.node_ptr();
    if (axis == 0) {
        std::vector<double> out(n, 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[j] += av[i * n + j];
        for (std::size_t j = 0; j < n; ++j) out[j] /= static_cast<double>(m);
        return make_op({n}, std::move(out), {pa}, [pa, m, n](TensorNode& self) {
            pa->ensure_grad();
            const double inv = 1.0 / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) pa->grad[i * n + j] += self.grad[j] * inv;
        });
    }
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[i] += av[i * n + j];
        out[i] /= static_cast<double>(n);
    }
    return make_op({m}, std::move(out), {pa}, [pa, m, n](TensorNode& self) {
        pa->ensure_grad();
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) pa->grad[i * n + j] += self.grad[i] * inv;
    });
}

Tensor sum(const Tensor& a) {
    check_defined(a, "sum");
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    auto pa = a.node_ptr();
    return make_op({1}, {acc}, {pa}, [pa](TensorNode& self) {
        pa->ensure_grad();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g;
    });
}

// ---- structure --------------------------------------------------------

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    check_defined(a, "concat");
    check_defined(b, "concat");
    if (a.ndim() != 2 || b.ndim() != 2) shape_error("concat: expected 2-D tensors");
    if (axis == 0) {
        if (a.dim(1) != b.dim(1)) shape_error("concat: column counts disagree");
        const std::size_t n = a.dim(1), ma = a.dim(0), mb = b.dim(0);
        std::vector<double> out;
        out.reserve((ma + mb) * n);
        out.insert(out.end(), a.data().begin(), a.data().end());
        out.insert(out.end(), b.data().begin(), b.data().end());
        auto pa = a.node_ptr();
        auto pb = b.node_ptr();
        return make_op({ma + mb, n}, std::move(out), {pa, pb}, [pa, pb, ma, n](TensorNode& self) {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                const std::size_t off = ma * n;
                for (std::size_t i = 0; i < pb->grad.size(); ++i) pb->grad[i] += self.grad[off + i];
            }
        });
    }
    if (axis == 1) return concat_cols({a, b});
    shape_error("concat: axis must be 0 or 1");
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) shape_error("concat_cols: no inputs");
    const std::size_t m = parts[0].dim(0);
    std::size_t total = 0;
    for (const auto& p : parts) {
        check_defined(p, "concat_cols");
        if (p.ndim() != 2 || p.dim(0) != m) shape_error("concat_cols: row counts disagree");
        total += p.dim(1);
    }
    std::vector<double> out(m * total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * total + off + j] = p.data()[i * w + j];
        off += w;
    }
    std::vector<NodePtr> nodes;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        nodes.push_back(p.node_ptr());
        widths.push_back(p.dim(1));
    }
    auto n = std::make_shared<TensorNode>();
    n->shape = {m, total};
    n->value = std::move(out);
    if (!g_no_grad) {
        bool any = false;
        for (const auto& p : nodes)
            if (p->requires_grad) {
                n->parents.push_back(p);
                any = true;
            }
        if (any) {
            n->requires_grad = true;
            n->backward_fn = [nodes, widths, m, total](TensorNode& self) {
                std::size_t off2 = 0;
                for (std::size_t k = 0; k < nodes.size(); ++k) {
                    const std::size_t w = widths[k];
                    if (nodes[k]->requires_grad) {
                        nodes[k]->ensure_grad();
                        for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < w; ++j)
                                nodes[k]->grad[i * w + j] += self.grad[i * total + off2 + j];
                    }
                    off2 += w;
                }
            };
        }
    }
    return Tensor::wrap(std::move(n));
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) shape_error("stack_rows: no inputs");
    const std::size_t d = rows[0].numel();
    for (const auto& r : rows) {
        check_defined(r, "stack_rows");
        if (r.ndim() != 1 || r.numel() != d) shape_error("stack_rows: rows must be 1-D, equal length");
    }
    const std::size_t n = rows.size();
    std::vector<double> out(n * d);
    for (std::size_t i = 0; i < n; ++i)
        std::copy(rows[i].data().begin(), rows[i].data().end(), out.begin() + i * d);
    std::vector<NodePtr> nodes;
    for (const auto& r : rows) nodes.push_back(r.node_ptr());
    auto node = std::make_shared<TensorNode>();
    node->shape = {n, d};
    node->value = std::move(out);
    if (!g_no_grad) {
        bool any = false;
        for (const auto& p : nodes)
            if (p->requires_grad) {
                node->parents.push_back(p);
                any = true;
            }
        if (any) {
            node->requires_grad = true;
            node->backward_fn = [nodes, d](TensorNode& self) {
                for (std::size_t i = 0; i < nodes.size(); ++i) {
                    if (!nodes[i]->requires_grad) continue;
                    nodes[i]->ensure_grad();
                    for (std::size_t j = 0; j < d; ++j) nodes[i]->grad[j] += self.grad[i * d + j];
                }
            };
        }
    }
    return Tensor::wrap(std::move(node));
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
    check_defined(table, "embedding_lookup");
    if (table.ndim() != 2) shape_error("embedding_lookup: table must be 2-D");
    const std::size_t v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                                    " outside table of " + std::to_string(v) + " rows");
    const std::size_t n = ids.size();
    std::vector<double> out(n * d);
    const auto& tv = table.data();
    for (std::size_t i = 0; i < n; ++i)
        std::copy(tv.begin() + static_cast<std::size_t>(ids[i]) * d,
                  tv.begin() + (static_cast<std::size_t>(ids[i]) + 1) * d, out.begin() + i * d);
    auto pt = table.node_ptr();
    std::vector<int> ids_copy(ids.begin(), ids.end());
    return make_op({n, d}, std::move(out), {pt},
                   [pt, ids_copy = std::move(ids_copy), d](TensorNode& self) {
                       pt->ensure_grad();
                       for (std::size_t i = 0; i < ids_copy.size(); ++i) {
                           double* row = pt->grad.data() + static_cast<std::size_t>(ids_copy[i]) * d;
                           const double* g = self.grad.data() + i * d;
                           for (std::size_t j = 0; j < d; ++j) row[j] += g[j];
                       }
                   });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> gold) {
    check_defined(logits, "cross_entropy");
    if (logits.ndim() != 2) shape_error("cross_entropy: logits must be [B x C]");
    const std::size_t b = logits.dim(0), c = logits.dim(1);
    if (gold.size() != b) shape_error("cross_entropy: one gold index per row required");
    for (int g : gold)
        if (g < 0 || static_cast<std::size_t>(g) >= c)
            throw std::out_of_range("cross_entropy: gold index " + std::to_string(g) +
                                    " outside [0, " + std::to_string(c) + ")");
    const auto& lv = logits.data();
    std::vector<double> probs(b * c);  // cached for the backward pass
    double total = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
        const double* row = lv.data() + r * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            probs[r * c + j] = std::exp(row[j] - mx);
            denom += probs[r * c + j];
        }
        for (std::size_t j = 0; j < c; ++j) probs[r * c + j] /= denom;
        total += std::log(denom) + mx - row[gold[r]];
    }
    auto pl = logits.node_ptr();
    std::vector<int> gold_copy(gold.begin(), gold.end());
    return make_op({1}, {total / static_cast<double>(b)}, {pl},
                   [pl, probs = std::move(probs), gold_copy = std::move(gold_copy), b,
                    c](TensorNode& self) {
                       pl->ensure_grad();
                       const double g = self.grad[0] / static_cast<double>(b);
                       for (std::size_t r = 0; r < b; ++r) {
                           double* row = pl->grad.data() + r * c;
                           const double* p = probs.data() + r * c;
                           for (std::size_t j = 0; j < c; ++j) row[j] += g * p[j];
                           row[gold_copy[r]] -= g;
                       }
                   });
}

Tensor cross_entropy(const Tensor& logits, int gold) {
    check_defined(logits, "cross_entropy");
    if (logits.ndim() != 1) shape_error("cross_entropy: expected 1-D logits");
    Tensor as_row = Tensor::wrap([&] {
        auto n = std::make_shared<TensorNode>();
        n->shape = {1, logits.dim(0)};
        n->value = logits.data();
        if (!NoGradGuard::active() && logits.requires_grad()) {
            auto pl = logits.node_ptr();
            n->parents = {pl};
            n->requires_grad = true;
            n->backward_fn = [pl](TensorNode& self) {
                pl->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pl->grad[i] += self.grad[i];
            };
        }
        return n;
    }());
    const int g[1] = {gold};
    return cross_entropy(as_row, std::span<const int>(g, 1));
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
    check_defined(logits, "bce_with_logits");
    if (logits.ndim() != 1 || logits.numel() != targets.size())
        shape_error("bce_with_logits: logits and targets must be 1-D, equal length");
    const std::size_t n = logits.numel();
    if (n == 0) shape_error("bce_with_logits: empty input");
    const auto& lv = logits.data();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double s = lv[i];
        // max(s,0) - s*y + log(1 + exp(-|s|))
        total += std::max(s, 0.0) - s * targets[i] + std::log1p(std::exp(-std::abs(s)));
    }
    auto pl = logits.node_ptr();
    std::vector<double> t_copy(targets.begin(), targets.end());
    return make_op({1}, {total / static_cast<double>(n)}, {pl},
                   [pl, t_copy = std::move(t_copy), n](TensorNode& self) {
                       pl->ensure_grad();
                       const double g = self.grad[0] / static_cast<double>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                           const double s = pl->value[i];
                           const double p = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s))
                                                     : std::exp(s) / (1.0 + std::exp(s));
                           pl->grad[i] += g * (p - t_copy[i]);
                       }
                   });
}

Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng) {
    check_defined(a, "dropout");
    if (p < 0.0 || p >= 1.0) shape_error("dropout: p must be in [0, 1)");
    if (p == 0.0) return a;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> keep(a.numel());
    const double inv = 1.0 / (1.0 - p);
    for (auto& k : keep) k = unit(rng) < p ? 0.0 : inv;
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * keep[i];
    auto pa = a.node_ptr();
    return make_op(a.shape(), std::move(out), {pa}, [pa, keep = std::move(keep)](TensorNode& self) {
        pa->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * keep[i];
    });
}

// ---- backward ---------------------------------------------------------

void backward(const Tensor& loss) {
    check_defined(loss, "backward");
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
    TensorNode* root = loss.node();
    if (!root->requires_grad) return;  // constant graph, nothing to do

    // Iterative post-order DFS; reversed post-order is a topological order
    // with consumers ahead of producers.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* parent = node->parents[next++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

}  // namespace ptum
