#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mmr/layers.hpp"
#include "mmr/tensor.hpp"

namespace mmr {

/// Floor for the membership base ||z - mu_j||^2 - ||mu_j - mu_bar||^2, which can go nonpositive.
inline constexpr double kBaseFloor = 1e-8;
/// Cluster mass below which a center counts as empty.
inline constexpr double kEmptyClusterMass = 1e-12;
/// Minimum separation between the two centers.
inline constexpr double kMinCenterDistance = 1e-8;

/// Two cluster centers plus the global embedding mean they are measured against.
template <typename T>
struct ClusterState {
    Tensor<T> centers;      // [2, Ze]
    Tensor<T> global_mean;  // [Ze]
    double fuzzifier = 2.0;

    std::size_t dim() const { return global_mean.size(); }
};

template <typename T>
struct Separation {
    double intra = 0.0;
    double inter = 0.0;
    double objective = 0.0;  // intra - inter
};

namespace detail {

template <typename T>
double squared_distance(const T* a, const T* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double d = static_cast<double>(a[k]) - static_cast<double>(b[k]);
        acc += d * d;
    }
    return acc;
}

template <typename T>
void check_embeddings(const Tensor<T>& z, const ClusterState<T>& s, const char* where) {
    if (z.rank() != 2 || z.dim(1) != s.dim())
        throw ShapeError(std::string(where) + ": embeddings " + shape_str(z.shape()) + " vs center dim " +
                         std::to_string(s.dim()));
    require_shape(s.centers.shape(), {2, s.dim()}, where);
}

}  // namespace detail

template <typename T>
Tensor<T> column_mean(const Tensor<T>& z) {
    const std::size_t n = z.dim(0), d = z.dim(1);
    std::vector<double> acc(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < d; ++k) acc[k] += z.at(i, k);
    Tensor<T> out({d});
    for (std::size_t k = 0; k < d; ++k) out[k] = static_cast<T>(acc[k] / static_cast<double>(n));
    return out;
}

/// Trace form of the fuzzy inter/intra scatter and their difference.
template <typename T>
Separation<T> separation_objective(const Tensor<T>& z, const ClusterState<T>& s, const Tensor<T>& q) {
    detail::check_embeddings(z, s, "separation_objective");
    const std::size_t n = z.dim(0), d = z.dim(1);
    require_shape(q.shape(), {n, 2}, "separation_objective q");
    Separation<T> out;
    for (std::size_t i = 0; i < n; ++i) {
        const double to_mean = detail::squared_distance(z.data() + i * d, s.global_mean.data(), d);
        for (std::size_t j = 0; j < 2; ++j) {
            const double w = std::pow(static_cast<double>(q.at(i, j)), s.fuzzifier);
            out.inter += w * to_mean;
            out.intra += w * detail::squared_distance(z.data() + i * d, s.centers.data() + j * d, d);
        }
    }
    out.inter /= static_cast<double>(n);
    out.intra /= static_cast<double>(n);
    out.objective = out.intra - out.inter;
    return out;
}

/// Membership bases before clamping, [N, 2].
template <typename T>
std::vector<double> membership_bases(const Tensor<T>& z, const ClusterState<T>& s) {
    detail::check_embeddings(z, s, "membership_bases");
    const std::size_t n = z.dim(0), d = z.dim(1);
    double spread[2];
    for (std::size_t j = 0; j < 2; ++j)
        spread[j] = detail::squared_distance(s.centers.data() + j * d, s.global_mean.data(), d);
    std::vector<double> base(n * 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            base[i * 2 + j] = detail::squared_distance(z.data() + i * d, s.centers.data() + j * d, d) - spread[j];
    return base;
}

/// Soft memberships q_ij proportional to max(base_ij, floor)^(-1/(m-1)), rows normalised.
/// This is both the solver's assignment step and the clustering layer's forward pass.
template <typename T>
Tensor<T> update_assignments(const Tensor<T>& z, const ClusterState<T>& s) {
    if (!(s.fuzzifier > 1.0)) throw std::invalid_argument("fuzzifier must exceed 1");
    const auto base = membership_bases(z, s);
    const std::size_t n = z.dim(0);
    const double expo = 1.0 / (s.fuzzifier - 1.0);
    Tensor<T> q({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        double lu[2];
        for (std::size_t j = 0; j < 2; ++j) lu[j] = -expo * std::log(std::max(base[i * 2 + j], kBaseFloor));
        const double mx = std::max(lu[0], lu[1]);
        const double u0 = std::exp(lu[0] - mx), u1 = std::exp(lu[1] - mx);
        q.at(i, 0) = static_cast<T>(u0 / (u0 + u1));
        q.at(i, 1) = static_cast<T>(u1 / (u0 + u1));
    }
    return q;
}

template <typename T>
struct CenterUpdate {
    Tensor<T> centers;
    bool reseeded = false;
};

namespace detail {

// Moves center j onto the sample farthest from the other center, or nudges it
// off the other center when every sample coincides with it.
template <typename T>
void reseed_center(const Tensor<T>& z, Tensor<T>& centers, std::size_t j) {
    const std::size_t n = z.dim(0), d = z.dim(1);
    const T* other = centers.data() + (1 - j) * d;
    std::size_t best = 0;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dd = squared_distance(z.data() + i * d, other, d);
        if (dd > best_d) {
            best_d = dd;
            best = i;
        }
    }
    if (std::sqrt(best_d) > kMinCenterDistance) {
        std::copy_n(z.data() + best * d, d, centers.data() + j * d);
        return;
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += static_cast<double>(other[k]) * other[k];
    std::copy_n(other, d, centers.data() + j * d);
    centers[j * d] += static_cast<T>(1e-3 * std::max(1.0, std::sqrt(norm)));
}

}  // namespace detail

/// mu_j = sum_i q_ij^m z_i / sum_i q_ij^m, re-seeding empty clusters.
template <typename T>
CenterUpdate<T> update_centers(const Tensor<T>& z, const Tensor<T>& q, double m) {
    const std::size_t n = z.dim(0), d = z.dim(1);
    require_shape(q.shape(), {n, 2}, "update_centers q");
    CenterUpdate<T> out{Tensor<T>({2, d}), false};
    std::vector<double> acc(2 * d, 0.0);
    double mass[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 2; ++j) {
            const double w = std::pow(static_cast<double>(q.at(i, j)), m);
            mass[j] += w;
            for (std::size_t k = 0; k < d; ++k) acc[j * d + k] += w * static_cast<double>(z.at(i, k));
        }
    bool empty[2];
    for (std::size_t j = 0; j < 2; ++j) {
        empty[j] = mass[j] < kEmptyClusterMass;
        for (std::size_t k = 0; k < d; ++k)
            out.centers[j * d + k] = empty[j] ? T{0} : static_cast<T>(acc[j * d + k] / mass[j]);
    }
    if (empty[0] && empty[1]) throw std::invalid_argument("update_centers: both clusters are empty");
    for (std::size_t j = 0; j < 2; ++j)
        if (empty[j]) {
            detail::reseed_center(z, out.centers, j);
            out.reseeded = true;
        }
    return out;
}

/// p_ij = (q_ij^2 / f_j) / sum_k (q_ik^2 / f_k), f_j = sum_i q_ij.
template <typename T>
Tensor<T> target_distribution(const Tensor<T>& q, std::size_t* clamped_frequencies = nullptr) {
    if (q.rank() != 2 || q.dim(1) != 2) throw ShapeError("target_distribution expects [N, 2]");
    const std::size_t n = q.dim(0);
    double f[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < 2; ++j) f[j] += q.at(i, j);
    std::size_t clamped = 0;
    for (double& fj : f)
        if (fj < 1e-12) {
            fj = 1e-12;
            ++clamped;
        }
    if (clamped_frequencies) *clamped_frequencies = clamped;
    Tensor<T> p({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        const double a = static_cast<double>(q.at(i, 0)) * q.at(i, 0) / f[0];
        const double b = static_cast<double>(q.at(i, 1)) * q.at(i, 1) / f[1];
        const double s = a + b;
        if (s <= 0.0) {
            p.at(i, 0) = p.at(i, 1) = T(0.5);
        } else {
            p.at(i, 0) = static_cast<T>(a / s);
            p.at(i, 1) = static_cast<T>(b / s);
        }
    }
    return p;
}

struct InitOptions {
    double fuzzifier = 2.0;
    int max_iter = 100;
    double tol = 1e-6;
};

template <typename T>
struct InitResult {
    ClusterState<T> state;
    Tensor<T> q;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
    bool reseeded = false;
};

/// Alternates the assignment and center updates until the separation objective
/// stops moving. Starts from the sample farthest from the mean and the sample
/// farthest from that one, so the result depends only on the data and its order.
template <typename T>
InitResult<T> init_centers(const Tensor<T>& z, const InitOptions& opt = {}) {
    if (z.rank() != 2 || z.dim(0) < 2) throw std::invalid_argument("init_centers needs at least 2 embeddings");
    if (!(opt.fuzzifier > 1.0)) throw std::invalid_argument("fuzzifier must exceed 1");
    const std::size_t n = z.dim(0), d = z.dim(1);

    ClusterState<T> s{Tensor<T>({2, d}), column_mean(z), opt.fuzzifier};
    const auto farthest_from = [&](const T* ref) {
        std::size_t best = 0;
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double dd = detail::squared_distance(z.data() + i * d, ref, d);
            if (dd > best_d) {
                best_d = dd;
                best = i;
            }
        }
        return best;
    };
    const std::size_t a = farthest_from(s.global_mean.data());
    std::copy_n(z.data() + a * d, d, s.centers.data());
    const std::size_t b = farthest_from(z.data() + a * d);
    std::copy_n(z.data() + b * d, d, s.centers.data() + d);

    InitResult<T> out;
    if (std::sqrt(detail::squared_distance(s.centers.data(), s.centers.data() + d, d)) <= kMinCenterDistance) {
        detail::reseed_center(z, s.centers, 1);
        out.reseeded = true;
    }

    double prev = std::numeric_limits<double>::infinity();
    double best_obj = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= opt.max_iter; ++it) {
        Tensor<T> q = update_assignments(z, s);
        const double obj = separation_objective(z, s, q).objective;
        if (obj < best_obj || it == 1) {
            best_obj = obj;
            out.state = s;
            out.q = q;
            out.objective = obj;
        }
        out.iterations = it;
        if (std::abs(prev - obj) < opt.tol) {
            out.converged = true;
            out.state = s;
            out.q = q;
            out.objective = obj;
            break;
        }
        prev = obj;
        auto upd = update_centers(z, q, s.fuzzifier);
        s.centers = std::move(upd.centers);
        out.reseeded = out.reseeded || upd.reseeded;
        // uniform memberships put both centers on the mean; split them again
        if (std::sqrt(detail::squared_distance(s.centers.data(), s.centers.data() + d, d)) <= kMinCenterDistance) {
            detail::reseed_center(z, s.centers, 1);
            out.reseeded = true;
        }
    }
    return out;
}

/// Trainable clustering layer: forward is update_assignments with learnable centers;
/// the global mean is held fixed between refreshes.
template <typename T>
class ClusteringLayer {
public:
    ClusteringLayer() = default;
    explicit ClusteringLayer(const ClusterState<T>& s)
        : centers_("centers", s.centers), global_mean_(s.global_mean), fuzzifier_(s.fuzzifier) {}

    ClusterState<T> state() const { return {centers_.value, global_mean_, fuzzifier_}; }
    bool initialized() const { return !global_mean_.empty(); }
    void set_global_mean(Tensor<T> mean) { global_mean_ = std::move(mean); }
    Parameter<T>& centers() { return centers_; }
    std::vector<Parameter<T>*> parameters() { return {&centers_}; }

    Tensor<T> forward(const Tensor<T>& z) {
        z_ = z;
        q_ = update_assignments(z, state());
        base_ = membership_bases(z, state());
        return q_;
    }

    /// Returns dL/dz and accumulates dL/dmu into the center gradient.
    Tensor<T> backward(const Tensor<T>& grad_q) {
        require_shape(grad_q.shape(), q_.shape(), "ClusteringLayer::backward");
        const std::size_t n = z_.dim(0), d = z_.dim(1);
        const double expo = 1.0 / (fuzzifier_ - 1.0);
        Tensor<T> grad_z(z_.shape());
        const T* mu = centers_.value.data();
        for (std::size_t i = 0; i < n; ++i) {
            const double g0 = grad_q.at(i, 0), g1 = grad_q.at(i, 1);
            const double q0 = q_.at(i, 0), q1 = q_.at(i, 1);
            const double gbar = g0 * q0 + g1 * q1;
            for (std::size_t j = 0; j < 2; ++j) {
                const double b = base_[i * 2 + j];
                if (b <= kBaseFloor) continue;
                const double qj = j == 0 ? q0 : q1;
                const double gj = j == 0 ? g0 : g1;
                const double db = -expo * (qj / b) * (gj - gbar);
                for (std::size_t k = 0; k < d; ++k) {
                    const double diff = static_cast<double>(z_.at(i, k)) - mu[j * d + k];
                    grad_z.at(i, k) += static_cast<T>(2.0 * db * diff);
                    const double spread = static_cast<double>(mu[j * d + k]) - global_mean_[k];
                    centers_.grad[j * d + k] += static_cast<T>(-2.0 * db * (diff + spread));
                }
            }
        }
        return grad_z;
    }

private:
    Parameter<T> centers_;
    Tensor<T> global_mean_;
    double fuzzifier_ = 2.0;
    Tensor<T> z_, q_;
    std::vector<double> base_;
};

}  // namespace mmr
