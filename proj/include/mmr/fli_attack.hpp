#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmr/dataset.hpp"

namespace mmr {

enum class NoiseKind { sym, asym };

inline const char* to_string(NoiseKind k) { return k == NoiseKind::sym ? "sym" : "asym"; }

inline NoiseKind parse_noise_kind(const std::string& s) {
    if (s == "sym" || s == "Sym") return NoiseKind::sym;
    if (s == "asym" || s == "Asym") return NoiseKind::asym;
    throw std::invalid_argument("unknown attack kind '" + s + "' (expected sym|asym)");
}

struct NoiseSpec {
    NoiseKind kind = NoiseKind::sym;
    double ratio = 0.0;
    std::uint64_t seed = 0;
    bool exact_count = false;  // flip exactly round(G_ij * n_i) per class instead of Bernoulli draws

    void validate() const {
        if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("injection ratio must lie in [0,1]");
    }
};

/// Row-stochastic G with G[i][j] = P(observed j | true i).
using TransitionMatrix = std::array<std::array<double, 2>, 2>;

inline TransitionMatrix make_matrix(const NoiseSpec& spec) {
    spec.validate();
    const double v = spec.ratio;
    if (spec.kind == NoiseKind::sym) return {{{1.0 - v, v}, {v, 1.0 - v}}};
    // only unstable labels are rewritten as stable
    return {{{1.0, 0.0}, {v, 1.0 - v}}};
}

/// Thrown when an attack would compound on labels that were already attacked.
class AlreadyInjectedError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

inline Dataset inject(const Dataset& ds, const NoiseSpec& spec) {
    spec.validate();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.flipped[i] || ds.labels_train[i] != SoftLabel::one_hot(ds.labels_true[i]))
            throw AlreadyInjectedError("inject: sample " + std::to_string(i) +
                                       " already differs from its clean label; refusing to compound attacks");
    }
    if (ds.provenance.contains("attack"))
        throw AlreadyInjectedError("inject: dataset already carries an attack record");

    const TransitionMatrix g = make_matrix(spec);
    Dataset out = ds;
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    if (!spec.exact_count) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            const int y = out.labels_true[i];
            const double u = unit(rng);
            const int observed = u < g[y][kStable] ? kStable : kUnstable;
            out.labels_train[i] = SoftLabel::one_hot(observed);
            out.flipped[i] = observed != y;
        }
    } else {
        for (int c = 0; c < kNumClasses; ++c) {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < out.size(); ++i)
                if (out.labels_true[i] == c) members.push_back(i);
            std::shuffle(members.begin(), members.end(), rng);
            const auto flips = static_cast<std::size_t>(std::llround(g[c][1 - c] * static_cast<double>(members.size())));
            for (std::size_t k = 0; k < flips; ++k) {
                out.labels_train[members[k]] = SoftLabel::one_hot(1 - c);
                out.flipped[members[k]] = 1;
            }
        }
    }
    out.provenance["attack"] = {{"kind", to_string(spec.kind)},
                                {"ratio", spec.ratio},
                                {"seed", spec.seed},
                                {"exact_count", spec.exact_count}};
    return out;
}

}  // namespace mmr
