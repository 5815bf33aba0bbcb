#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "mmr/tensor.hpp"

namespace mmr {

/// Floor applied to probabilities before taking a log.
inline constexpr double kProbFloor = 1e-12;

/// A scalar loss together with its gradient with respect to the loss input.
template <typename T>
struct ScalarLoss {
    T value{};
    Tensor<T> grad;
    std::size_t clamped = 0;  // entries that hit kProbFloor
};

/// Backward passes start from a scalar root; anything else is a caller bug.
template <typename T>
T require_scalar_root(const Tensor<T>& root) {
    if (root.size() != 1)
        throw ShapeError("backward needs a scalar loss root, got shape " + shape_str(root.shape()));
    return root[0];
}

/// (1/N) * sum_i ||pred_i - target_i||^2, summed over all feature elements.
template <typename T>
ScalarLoss<T> squared_error_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    require_shape(pred.shape(), target.shape(), "squared_error_loss");
    const std::size_t n = pred.dim(0);
    ScalarLoss<T> out{T{0}, Tensor<T>(pred.shape())};
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const T r = pred[i] - target[i];
        acc += static_cast<double>(r) * static_cast<double>(r);
        out.grad[i] = T(2) * r / static_cast<T>(n);
    }
    out.value = static_cast<T>(acc / static_cast<double>(n));
    return out;
}

/// Soft-target cross-entropy on probabilities [N, C]:
///   scale/N * sum_i w_i * sum_c -y_ic log(max(p_ic, floor)).
/// The gradient is taken with respect to the probabilities; clamped entries get zero.
template <typename T>
ScalarLoss<T> cross_entropy_loss(const Tensor<T>& probs, const Tensor<T>& targets, std::span<const T> weights = {},
                                 T scale = T(1)) {
    require_shape(targets.shape(), probs.shape(), "cross_entropy_loss");
    const std::size_t n = probs.dim(0), c = probs.dim(1);
    if (!weights.empty() && weights.size() != n)
        throw ShapeError("cross_entropy_loss: weight count " + std::to_string(weights.size()) + " vs batch " +
                         std::to_string(n));
    ScalarLoss<T> out{T{0}, Tensor<T>(probs.shape())};
    double acc = 0.0;
    const T floor = static_cast<T>(kProbFloor);
    for (std::size_t i = 0; i < n; ++i) {
        const T w = weights.empty() ? T(1) : weights[i];
        for (std::size_t j = 0; j < c; ++j) {
            const T y = targets[i * c + j];
            const T p = probs[i * c + j];
            if (p <= floor) {
                ++out.clamped;
                acc -= static_cast<double>(w * y) * std::log(static_cast<double>(floor));
            } else {
                acc -= static_cast<double>(w * y) * std::log(static_cast<double>(p));
                out.grad[i * c + j] = -scale * w * y / (p * static_cast<T>(n));
            }
        }
    }
    out.value = static_cast<T>(static_cast<double>(scale) * acc / static_cast<double>(n));
    return out;
}

/// (1/N) sum_ij q_ij log(q_ij / p_ij), p held constant; gradient is with respect to q.
template <typename T>
ScalarLoss<T> kl_divergence_loss(const Tensor<T>& q, const Tensor<T>& p) {
    require_shape(p.shape(), q.shape(), "kl_divergence_loss");
    const std::size_t n = q.dim(0);
    ScalarLoss<T> out{T{0}, Tensor<T>(q.shape())};
    const double floor = kProbFloor;
    double acc = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double qi = std::max(static_cast<double>(q[i]), floor);
        double pi = static_cast<double>(p[i]);
        if (pi < floor) {
            if (q[i] > 0) ++out.clamped;
            pi = floor;
        }
        const double log_ratio = std::log(qi / pi);
        acc += static_cast<double>(q[i]) * log_ratio;
        out.grad[i] = static_cast<T>((log_ratio + 1.0) / static_cast<double>(n));
    }
    out.value = static_cast<T>(acc / static_cast<double>(n));
    return out;
}

}  // namespace mmr
