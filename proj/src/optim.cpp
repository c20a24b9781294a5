// SPDX-License-Identifier: Apache-2.0

#include "ptum/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ptum {

Parameter::Parameter(std::string name, Tensor tensor)
    : name_(std::move(name)), tensor_(std::move(tensor)) {
    if (name_.empty()) throw std::invalid_argument("parameter name must be non-empty");
}

void Parameter::set_trainable(bool trainable) {
    tensor_.node()->requires_grad = trainable;
}

Parameter& ParameterRegistry::add(const std::string& name, std::vector<std::size_t> shape,
                                  std::vector<double> data) {
    if (index_.count(name))
        throw std::invalid_argument("duplicate parameter name: " + name);
    Tensor t = Tensor::from_data(std::move(shape), std::move(data), /*requires_grad=*/true);
    params_.push_back(std::make_unique<Parameter>(name, std::move(t)));
    index_[name] = params_.size() - 1;
    return *params_.back();
}

Parameter& ParameterRegistry::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return *params_[it->second];
}

const Parameter& ParameterRegistry::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return *params_[it->second];
}

bool ParameterRegistry::contains(const std::string& name) const { return index_.count(name) > 0; }

std::vector<Parameter*> ParameterRegistry::all() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParameterRegistry::all() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

void ParameterRegistry::zero_grads() {
    for (auto& p : params_) p->zero_grad();
}

void ParameterRegistry::set_trainable(bool trainable) {
    for (auto& p : params_) p->set_trainable(trainable);
}

std::size_t ParameterRegistry::numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->tensor().numel();
    return n;
}

std::vector<double> init_embedding(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-0.1, 0.1);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

std::vector<double> init_glorot(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> v(fan_in * fan_out);
    for (auto& x : v) x = dist(rng);
    return v;
}

AdamOptimizer::AdamOptimizer(std::vector<Parameter*> params, AdamConfig cfg) : cfg_(cfg) {
    slots_.reserve(params.size());
    for (Parameter* p : params) {
        Slot s;
        s.param = p;
        s.m.assign(p->tensor().numel(), 0.0);
        s.v.assign(p->tensor().numel(), 0.0);
        slots_.push_back(std::move(s));
    }
}

void AdamOptimizer::step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (Slot& s : slots_) {
        const std::vector<double>& g = s.param->grad();
        std::vector<double>& x = s.param->tensor().mutable_data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double m_hat = s.m[i] / bc1;
            const double v_hat = s.v[i] / bc2;
            x[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
    }
}

void AdamOptimizer::zero_grads() {
    for (Slot& s : slots_) s.param->zero_grad();
}

}  // namespace ptum
