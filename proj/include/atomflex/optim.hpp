#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "atomflex/errors.hpp"
#include "atomflex/rng.hpp"
#include "atomflex/tensor.hpp"

namespace atomflex {

struct OptimizerConfig {
    Real learning_rate = Real(1e-3);
    Real epsilon = Real(1e-8);
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.999);
    Real weight_decay = Real(0);

    void validate() const {
        if (!(learning_rate > Real(0))) throw ContractError("OptimizerConfig: learning_rate must be > 0");
        if (!(epsilon > Real(0))) throw ContractError("OptimizerConfig: epsilon must be > 0");
        if (!(beta1 > Real(0) && beta1 < Real(1))) throw ContractError("OptimizerConfig: beta1 must be in (0, 1)");
        if (!(beta2 > Real(0) && beta2 < Real(1))) throw ContractError("OptimizerConfig: beta2 must be in (0, 1)");
        if (weight_decay < Real(0)) throw ContractError("OptimizerConfig: weight_decay must be >= 0");
    }
};

/// Uniform Glorot initialization in +-sqrt(6 / (rows + cols)).
inline Tensor glorot_init(std::size_t rows, std::size_t cols, Rng& rng) {
    if (rows < 1 || cols < 1) throw ContractError("glorot_init: rows and cols must be >= 1");
    const Real bound = std::sqrt(Real(6) / static_cast<Real>(rows + cols));
    Tensor t(rows, cols);
    for (Real& v : t.values()) v = static_cast<Real>(rng.uniform(-bound, bound));
    return t;
}

inline Tensor glorot_init(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Rng rng(seed);
    return glorot_init(rows, cols, rng);
}

/// All learnable tensors of a model, keyed by a unique name. Iteration order
/// is the lexicographic name order, which makes optimizer sweeps and
/// checkpoint layout deterministic. Buffers (batch-norm running statistics)
/// live alongside parameters so checkpoints capture them, but are excluded
/// from gradient updates and the trainable-parameter count.
class ParameterStore {
public:
    Tensor& create(const std::string& name, std::size_t rows, std::size_t cols) {
        return insert(name, Tensor(rows, cols, true), false);
    }

    Tensor& create_glorot(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng) {
        Tensor t = glorot_init(rows, cols, rng);
        t.set_requires_grad(true);
        return insert(name, std::move(t), false);
    }

    Tensor& create_buffer(const std::string& name, std::size_t rows, std::size_t cols) {
        return insert(name, Tensor(rows, cols, false), true);
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    Tensor& get(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ContractError("ParameterStore: unknown name '" + name + "'");
        return it->second.tensor;
    }

    const Tensor& get(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ContractError("ParameterStore: unknown name '" + name + "'");
        return it->second.tensor;
    }

    bool is_buffer(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ContractError("ParameterStore: unknown name '" + name + "'");
        return it->second.buffer;
    }

    template <typename Fn>
    void for_each(Fn fn) const {
        for (const auto& [name, e] : entries_) fn(name, e.tensor, e.buffer);
    }

    template <typename Fn>
    void for_each_parameter(Fn fn) {
        for (auto& [name, e] : entries_)
            if (!e.buffer) fn(name, e.tensor);
    }

    std::size_t total_parameters() const {
        std::size_t n = 0;
        for (const auto& [name, e] : entries_)
            if (!e.buffer) n += e.tensor.numel();
        return n;
    }

    std::size_t size() const { return entries_.size(); }

    void zero_grad() {
        for (auto& [name, e] : entries_) e.tensor.zero_grad();
    }

    std::uint64_t step_count() const { return step_; }

    /// One AdamW update over every parameter. Weight decay is decoupled:
    /// w -= lr * wd * w happens independently of the moment-based step.
    /// Gradients must be populated for all parameters and are cleared after.
    void adamw_step(const OptimizerConfig& cfg) {
        cfg.validate();
        for (auto& [name, e] : entries_) {
            if (e.buffer) continue;
            if (!e.tensor.has_grad())
                throw ContractError("adamw_step: parameter '" + name + "' has no gradient");
        }
        ++step_;
        const Real bc1 = Real(1) - std::pow(cfg.beta1, static_cast<Real>(step_));
        const Real bc2 = Real(1) - std::pow(cfg.beta2, static_cast<Real>(step_));
        for (auto& [name, e] : entries_) {
            if (e.buffer) continue;
            auto& w = e.tensor.values();
            const auto& g = e.tensor.grad();
            if (e.m.size() != w.size()) {
                e.m.assign(w.size(), Real(0));
                e.v.assign(w.size(), Real(0));
            }
            for (std::size_t i = 0; i < w.size(); ++i) {
                if (cfg.weight_decay != Real(0))
                    w[i] -= cfg.learning_rate * cfg.weight_decay * w[i];
                e.m[i] = cfg.beta1 * e.m[i] + (Real(1) - cfg.beta1) * g[i];
                e.v[i] = cfg.beta2 * e.v[i] + (Real(1) - cfg.beta2) * g[i] * g[i];
                const Real mhat = e.m[i] / bc1;
                const Real vhat = e.v[i] / bc2;
                w[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
            }
            e.tensor.zero_grad();
        }
    }

private:
    struct Entry {
        Tensor tensor;
        bool buffer = false;
        std::vector<Real> m, v;  // AdamW moments, allocated on first step
    };

    Tensor& insert(const std::string& name, Tensor t, bool buffer) {
        auto [it, fresh] = entries_.emplace(name, Entry{std::move(t), buffer, {}, {}});
        if (!fresh) throw ContractError("ParameterStore: duplicate name '" + name + "'");
        return it->second.tensor;
    }

    std::map<std::string, Entry> entries_;
    std::uint64_t step_ = 0;
};

inline void adamw_step(ParameterStore& store, const OptimizerConfig& cfg) {
    store.adamw_step(cfg);
}

}  // namespace atomflex
