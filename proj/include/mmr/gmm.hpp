#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace mmr {

inline constexpr double kGmmVarianceFloor = 1e-6;

struct GaussianComponent {
    double weight = 0.5;
    double mean = 0.0;
    double variance = 1.0;
};

/// Two-component 1-D Gaussian mixture fitted to per-sample losses.
struct Gmm1d {
    GaussianComponent low, high;  // high has the larger mean
    bool degenerate = false;      // losses had (almost) no spread
    int iterations = 0;
    std::vector<double> log_likelihood;  // per EM iteration, starting with the initial fit
};

namespace detail {

inline double normal_logpdf(double x, const GaussianComponent& c) {
    const double d = x - c.mean;
    return -0.5 * (std::log(2.0 * std::numbers::pi * c.variance) + d * d / c.variance);
}

inline double log_sum_exp(double a, double b) {
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Linear-interpolated percentile of sorted data.
inline double percentile(const std::vector<double>& sorted, double p) {
    const double pos = p * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double mixture_loglik(std::span<const double> x, const Gmm1d& g) {
    double ll = 0.0;
    for (double v : x)
        ll += log_sum_exp(std::log(g.low.weight) + normal_logpdf(v, g.low),
                          std::log(g.high.weight) + normal_logpdf(v, g.high));
    return ll;
}

}  // namespace detail

struct GmmOptions {
    int max_iter = 100;
    double tol = 1e-6;  // stop when the log-likelihood gain drops below this
};

/// EM for a 2-component mixture, initialised at the 25th/75th percentiles with
/// equal weights and the pooled variance.
inline Gmm1d fit_gmm(std::span<const double> losses, const GmmOptions& opt = {}) {
    if (losses.size() < 4) throw std::invalid_argument("fit_gmm needs at least 4 losses");
    std::vector<double> sorted(losses.begin(), losses.end());
    std::sort(sorted.begin(), sorted.end());
    const double n = static_cast<double>(losses.size());
    double mean = 0.0;
    for (double v : losses) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : losses) var += (v - mean) * (v - mean);
    var /= n;

    Gmm1d g;
    if (var < kGmmVarianceFloor * 1e-6 || sorted.back() - sorted.front() < 1e-12) {
        g.low = g.high = {0.5, mean, std::max(var, kGmmVarianceFloor)};
        g.degenerate = true;
        return g;
    }
    g.low = {0.5, detail::percentile(sorted, 0.25), std::max(var, kGmmVarianceFloor)};
    g.high = {0.5, detail::percentile(sorted, 0.75), std::max(var, kGmmVarianceFloor)};
    g.log_likelihood.push_back(detail::mixture_loglik(losses, g));

    std::vector<double> resp(losses.size());
    for (int it = 1; it <= opt.max_iter; ++it) {
        // E step: responsibility of the high component
        for (std::size_t i = 0; i < losses.size(); ++i) {
            const double a = std::log(g.low.weight) + detail::normal_logpdf(losses[i], g.low);
            const double b = std::log(g.high.weight) + detail::normal_logpdf(losses[i], g.high);
            resp[i] = std::exp(b - detail::log_sum_exp(a, b));
        }
        // M step
        double nh = 0.0, mh = 0.0, ml = 0.0;
        for (std::size_t i = 0; i < losses.size(); ++i) {
            nh += resp[i];
            mh += resp[i] * losses[i];
            ml += (1.0 - resp[i]) * losses[i];
        }
        const double nl = n - nh;
        if (nh < 1e-12 || nl < 1e-12) break;
        mh /= nh;
        ml /= nl;
        double vh = 0.0, vl = 0.0;
        for (std::size_t i = 0; i < losses.size(); ++i) {
            vh += resp[i] * (losses[i] - mh) * (losses[i] - mh);
            vl += (1.0 - resp[i]) * (losses[i] - ml) * (losses[i] - ml);
        }
        g.high = {nh / n, mh, std::max(vh / nh, kGmmVarianceFloor)};
        g.low = {nl / n, ml, std::max(vl / nl, kGmmVarianceFloor)};
        g.iterations = it;
        const double ll = detail::mixture_loglik(losses, g);
        const double gain = ll - g.log_likelihood.back();
        g.log_likelihood.push_back(ll);
        if (gain < opt.tol) break;
    }
    if (g.low.mean > g.high.mean) std::swap(g.low, g.high);
    return g;
}

/// Posterior probability that `loss` came from the higher-mean component.
inline double p_false(const Gmm1d& g, double loss) {
    if (g.degenerate) return 0.0;
    const double a = std::log(g.low.weight) + detail::normal_logpdf(loss, g.low);
    const double b = std::log(g.high.weight) + detail::normal_logpdf(loss, g.high);
    return std::exp(b - detail::log_sum_exp(a, b));
}

inline std::vector<double> p_false(const Gmm1d& g, std::span<const double> losses) {
    std::vector<double> out(losses.size());
    for (std::size_t i = 0; i < losses.size(); ++i) out[i] = p_false(g, losses[i]);
    return out;
}

}  // namespace mmr
