#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmr/layers.hpp"

namespace mmr {

/// Thrown when training produces a NaN/Inf value.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are created lazily on the first step and
/// bound positionally to the parameter list passed to step().
template <typename T>
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    long steps() const { return step_; }

    void step(const std::vector<Parameter<T>*>& params) {
        if (m_.empty()) {
            for (auto* p : params) {
                m_.emplace_back(p->value.shape());
                v_.emplace_back(p->value.shape());
            }
        }
        if (m_.size() != params.size()) throw std::logic_error("Adam: parameter list changed between steps");
        for (std::size_t k = 0; k < params.size(); ++k) {
            require_shape(params[k]->grad.shape(), m_[k].shape(), "Adam::step");
            if (!params[k]->grad.all_finite())
                throw NonFiniteError("non-finite gradient in parameter '" + params[k]->name + "' at Adam step " +
                                     std::to_string(step_ + 1));
        }
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
        const T lr_hat = static_cast<T>(cfg_.learning_rate / bc1);
        const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
        const T eps = static_cast<T>(cfg_.epsilon);
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& p = *params[k];
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const T g = p.grad[i];
                m[i] = b1 * m[i] + (T(1) - b1) * g;
                v[i] = b2 * v[i] + (T(1) - b2) * g * g;
                p.value[i] -= lr_hat * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
            }
        }
    }

private:
    AdamConfig cfg_;
    long step_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

}  // namespace mmr
