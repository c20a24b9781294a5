// SPDX-License-Identifier: Apache-2.0
//
// Named parameters, the registry that owns them, and Adam.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ptum/tensor.hpp"

namespace ptum {

// A trainable tensor with a unique name. The underlying node persists
// across forward passes; its grad buffer accumulates until zeroed.
class Parameter {
public:
    Parameter() = default;
    Parameter(std::string name, Tensor tensor);

    const std::string& name() const { return name_; }
    const Tensor& tensor() const { return tensor_; }
    Tensor& tensor() { return tensor_; }

    const std::vector<double>& grad() const { return tensor_.grad(); }
    void zero_grad() { tensor_.zero_grad(); }
    void set_trainable(bool trainable);

private:
    std::string name_;
    Tensor tensor_;
};

// Owns a model's parameters; names are unique. Iteration order is
// registration order, which checkpointing relies on.
class ParameterRegistry {
public:
    // Registers a new parameter initialized from `data`.
    Parameter& add(const std::string& name, std::vector<std::size_t> shape,
                   std::vector<double> data);

    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    bool contains(const std::string& name) const;

    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;
    std::size_t size() const { return params_.size(); }

    void zero_grads();
    void set_trainable(bool trainable);
    std::size_t numel() const;

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::map<std::string, std::size_t> index_;
};

// ---- initializers ------------------------------------------------------

// Uniform in [-0.1, 0.1]; embedding tables.
std::vector<double> init_embedding(std::size_t n, std::mt19937_64& rng);
// Glorot-uniform for a dense [fan_in x fan_out] weight.
std::vector<double> init_glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

// ---- Adam ---------------------------------------------------------------

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard Adam with bias correction. step() consumes the grads currently
// stored on the parameters and leaves them untouched; callers zero grads
// between steps.
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Parameter*> params, AdamConfig cfg);

    void step();
    void zero_grads();
    std::uint64_t step_count() const { return step_; }

private:
    struct Slot {
        Parameter* param;
        std::vector<double> m;
        std::vector<double> v;
    };
    std::vector<Slot> slots_;
    AdamConfig cfg_;
    std::uint64_t step_ = 0;
};

}  // namespace ptum
