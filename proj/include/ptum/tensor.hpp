// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit tensors with reverse-mode automatic differentiation.
//
// The computation graph is recorded implicitly: every op produces a node
// holding its value, the parent nodes it was computed from, and a closure
// that accumulates gradients into those parents. backward() walks the
// graph once in reverse topological order and the graph is freed as soon
// as the last handle to it goes out of scope. Gradients of leaf tensors
// (parameters) accumulate across backward calls; callers zero them
// between optimizer steps.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ptum {

namespace detail {

struct TensorNode {
    std::vector<std::size_t> shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until first needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Accumulates d(loss)/d(parent) into each parent's grad buffer.
    // `self` is this node; self.grad is fully accumulated when called.
    std::function<void(TensorNode& self)> backward_fn;

    std::size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// Disables graph recording in scope. Ops executed under the guard produce
// constant tensors regardless of their inputs' requires_grad flags.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
    static bool active();

private:
    bool prev_;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<std::size_t> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const;
    std::size_t ndim() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    const std::vector<double>& data() const;
    std::vector<double>& mutable_data();  // in-place edit; leaves only, never graph nodes
    bool requires_grad() const;

    // Gradient accumulated by backward(); zero-sized until first accumulation.
    const std::vector<double>& grad() const;
    void zero_grad();

    double item() const;  // scalar tensors only

    detail::TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<detail::TensorNode>& node_ptr() const { return node_; }

    static Tensor wrap(std::shared_ptr<detail::TensorNode> node);

private:
    std::shared_ptr<detail::TensorNode> node_;
};

// ---- ops -------------------------------------------------------------
//
// Shapes are 1-D or 2-D. Broadcast support is deliberately narrow: a 1-D
// vector of length n combines elementwise with every row of an [m x n]
// matrix (add/mul only). Anything else is a shape error.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);        // [m x k] * [k x n]
Tensor matvec(const Tensor& a, const Tensor& x);        // [m x k] * [k] -> [m]
Tensor dot(const Tensor& a, const Tensor& b);           // [d] . [d] -> scalar
Tensor transpose(const Tensor& a);                      // 2-D
Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);  // same element count

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

// Softmax over the last axis, max-subtracted for stability.
Tensor softmax(const Tensor& a);

// out[i] = mask[i] != 0 ? a[i] : fill. No gradient flows through masked
// slots or the mask itself.
Tensor mask_fill(const Tensor& a, const Tensor& mask, double fill);

Tensor mean_axis(const Tensor& a, int axis);            // 2-D -> 1-D
Tensor sum(const Tensor& a);                            // -> scalar

Tensor concat(const Tensor& a, const Tensor& b, int axis);  // 2-D
Tensor concat_cols(const std::vector<Tensor>& parts);       // [m x d_i] -> [m x sum d_i]
Tensor stack_rows(const std::vector<Tensor>& rows);         // n x [d] -> [n x d]

// Gathers rows of a [V x d] table; gradient scatter-adds into the rows.
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

// Mean over rows of -log softmax(logits)[gold]. logits is [B x C] with one
// gold index per row, or 1-D [C] with a single index.
Tensor cross_entropy(const Tensor& logits, std::span<const int> gold);
Tensor cross_entropy(const Tensor& logits, int gold);

// Mean over elements of the numerically stable binary cross-entropy
// between sigmoid(logits) and targets in [0, 1].
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets);

// Inverted dropout: keeps each element with probability 1-p and rescales
// by 1/(1-p). p = 0 is the identity. Draws the keep mask from rng.
Tensor dropout(const Tensor& a, double p, std::mt19937_64& rng);

// Accumulates d(loss)/d(t) into the grad of every reachable tensor with
// requires_grad. loss must be scalar.
void backward(const Tensor& loss);

}  // namespace ptum
