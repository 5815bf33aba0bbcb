#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "mmr/layers.hpp"
#include "mmr/tensor.hpp"

namespace mmr::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(u(rng));
    return t;
}

/// Same as random_tensor but keeps |x| >= gap, so kinks at 0 are never crossed by a small step.
inline Tensor<double> random_away_from_zero(Shape shape, std::mt19937_64& rng, double gap = 0.05) {
    std::uniform_real_distribution<double> u(gap, 1.0);
    std::bernoulli_distribution sign(0.5);
    Tensor<double> t(std::move(shape));
    for (auto& v : t.values()) v = sign(rng) ? u(rng) : -u(rng);
    return t;
}

/// ||a - b|| / max(||a||, ||b||, floor); below the floor this is an absolute error.
inline double rel_err(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-14) {
    double d = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        d += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double den = std::max(std::sqrt(std::max(na, nb)), floor);
    return std::sqrt(d) / den;
}

/// Central differences of f over every entry of `x` (x is perturbed in place and restored).
inline std::vector<double> numeric_grad(const std::function<double()>& f, std::span<double> x, double h = 1e-6) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f();
        x[i] = keep - h;
        const double dn = f();
        x[i] = keep;
        g[i] = (up - dn) / (2 * h);
    }
    return g;
}

inline std::vector<double> to_vec(const Tensor<double>& t) { return {t.values().begin(), t.values().end()}; }

struct LayerGradReport {
    double input = 0;
    double params = 0;  // worst over parameters
};

/// Checks a layer under the scalar loss sum(r * layer(x)) for a fixed random r.
inline LayerGradReport check_layer(Layer<double>& layer, Tensor<double> x, std::mt19937_64& rng) {
    const Tensor<double> r = random_tensor<double>(layer.output_shape(x.shape()), rng);
    const auto loss = [&] {
        const auto y = layer.forward(x);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
        return s;
    };
    for (auto* p : layer.parameters()) p->zero_grad();
    layer.forward(x);
    const auto dx = layer.backward(r);
    LayerGradReport rep;
    rep.input = rel_err(to_vec(dx), numeric_grad(loss, x.values()));
    for (auto* p : layer.parameters()) {
        const auto analytic = to_vec(p->grad);
        rep.params = std::max(rep.params, rel_err(analytic, numeric_grad(loss, p->value.values())));
    }
    return rep;
}

}  // namespace mmr::testing
