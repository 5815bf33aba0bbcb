#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmr/dataset.hpp"

namespace mmr {

/// Percentage of predictions matching the clean labels.
inline double accuracy(std::span<const int> predicted, std::span<const int> truth) {
    if (truth.empty()) throw std::invalid_argument("accuracy on an empty test set");
    if (predicted.size() != truth.size()) throw std::invalid_argument("accuracy: prediction/label count mismatch");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
    return 100.0 * static_cast<double>(hit) / static_cast<double>(truth.size());
}

/// Share of attack-flipped samples whose training label argmax is back to the truth,
/// in percent. Directions are named by the false label: stable_false covers
/// unstable samples that were labelled stable.
struct CorrectionRates {
    std::optional<double> overall;
    std::optional<double> stable_false;    // S_F -> U_T
    std::optional<double> unstable_false;  // U_F -> S_T
};

inline CorrectionRates correction_rate(const Dataset& ds) {
    std::size_t n[3] = {0, 0, 0}, fixed[3] = {0, 0, 0};
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (!ds.flipped[i]) continue;
        const bool ok = ds.labels_train[i].argmax() == ds.labels_true[i];
        const std::size_t dir = ds.labels_true[i] == kUnstable ? 1 : 2;
        ++n[0];
        ++n[dir];
        fixed[0] += ok;
        fixed[dir] += ok;
    }
    const auto rate = [&](int k) -> std::optional<double> {
        if (n[k] == 0) return std::nullopt;
        return 100.0 * static_cast<double>(fixed[k]) / static_cast<double>(n[k]);
    };
    return {rate(0), rate(1), rate(2)};
}

struct ConvergencePoint {
    int epoch = 0;
    bool truncated = false;  // the holding window ran past the end of the trace
};

/// Smallest epoch e with acc(e) >= max - band that stays in the band for the next
/// `patience` epochs. When no window fits inside the trace, the first epoch that
/// stays in the band until the end is returned with `truncated` set.
inline ConvergencePoint convergence_epoch(std::span<const double> trace, double band = 0.25, int patience = 10) {
    if (trace.empty()) throw std::invalid_argument("convergence_epoch on an empty trace");
    const double top = *std::max_element(trace.begin(), trace.end());
    const double floor = top - band;
    const auto n = static_cast<int>(trace.size());
    for (int e = 0; e < n; ++e) {
        if (trace[e] < floor) continue;
        const int last = e + patience;
        bool held = true;
        for (int k = e + 1; k <= std::min(last, n - 1); ++k)
            if (trace[k] < floor) {
                held = false;
                break;
            }
        if (!held) continue;
        return {e, last > n - 1};
    }
    return {n - 1, true};  // unreachable: the maximum itself always qualifies
}

struct Efficiency {
    double xi = 0.0;
    bool floor_engaged = false;
};

/// xi = delta * |k| / max(dup_ratio, 1 / max(total_queries, 1)).
inline Efficiency relative_efficiency(double delta, double k_abs, double dup_ratio, std::size_t total_queries) {
    if (dup_ratio < 0.0) throw std::invalid_argument("duplicate ratio must be nonnegative");
    const double floor = 1.0 / static_cast<double>(std::max<std::size_t>(total_queries, 1));
    const bool engaged = dup_ratio < floor;
    return {delta * k_abs / (engaged ? floor : dup_ratio), engaged};
}

/// xi* = xi / N_q^r; undefined when nothing was queried.
inline std::optional<double> absolute_efficiency(double xi, double n_q, double r) {
    if (!(n_q > 0.0)) return std::nullopt;
    return xi / std::pow(n_q, r);
}

/// One row of the per-epoch trace.
struct MetricsSnapshot {
    int epoch = 0;
    double accuracy = 0.0;
    CorrectionRates correction;
    double n_q = 0.0;                // unique queried samples / N
    std::size_t n_dq = 0;            // duplicate queries so far
    std::size_t queries_total = 0;   // queries issued so far
    double dup_ratio = 0.0;          // n_dq / queries_total
    double omega = 0.0;
    double loss_classification = 0.0;
    double loss_clustering = 0.0;
    std::size_t detected = 0;        // GMM detections this epoch (HIL rounds only)
    std::size_t queried = 0;         // queries issued this epoch
};

inline nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline std::optional<double> optional_from_json(const nlohmann::json& j) {
    if (j.is_null()) return std::nullopt;
    return j.get<double>();
}

inline void to_json(nlohmann::json& j, const MetricsSnapshot& s) {
    j = {{"epoch", s.epoch},
         {"accuracy", s.accuracy},
         {"corr_overall", optional_json(s.correction.overall)},
         {"corr_SF_UT", optional_json(s.correction.stable_false)},
         {"corr_UF_ST", optional_json(s.correction.unstable_false)},
         {"N_q", s.n_q},
         {"N_dq", s.n_dq},
         {"queries_total", s.queries_total},
         {"N_dq_over_Nq", s.dup_ratio},
         {"omega", s.omega},
         {"loss_classification", s.loss_classification},
         {"loss_clustering", s.loss_clustering},
         {"detected", s.detected},
         {"queried", s.queried}};
}

inline void from_json(const nlohmann::json& j, MetricsSnapshot& s) {
    s.epoch = j.at("epoch").get<int>();
    s.accuracy = j.at("accuracy").get<double>();
    s.correction.overall = optional_from_json(j.at("corr_overall"));
    s.correction.stable_false = optional_from_json(j.at("corr_SF_UT"));
    s.correction.unstable_false = optional_from_json(j.at("corr_UF_ST"));
    s.n_q = j.at("N_q").get<double>();
    s.n_dq = j.at("N_dq").get<std::size_t>();
    s.queries_total = j.at("queries_total").get<std::size_t>();
    s.dup_ratio = j.at("N_dq_over_Nq").get<double>();
    s.omega = j.at("omega").get<double>();
    s.loss_classification = j.value("loss_classification", 0.0);
    s.loss_clustering = j.value("loss_clustering", 0.0);
    s.detected = j.value("detected", std::size_t{0});
    s.queried = j.value("queried", std::size_t{0});
}

}  // namespace mmr
