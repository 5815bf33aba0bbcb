#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace mmr {

inline constexpr int kStable = 0;
inline constexpr int kUnstable = 1;
inline constexpr int kNumClasses = 2;

inline const char* class_name(int c) { return c == kStable ? "stable" : "unstable"; }

/// Two-class probability vector.
struct SoftLabel {
    double p_stable = 1.0;
    double p_unstable = 0.0;

    static SoftLabel one_hot(int cls) { return cls == kStable ? SoftLabel{1.0, 0.0} : SoftLabel{0.0, 1.0}; }

    double operator[](int c) const { return c == kStable ? p_stable : p_unstable; }

    /// Ties go to unstable.
    int argmax() const { return p_stable > p_unstable ? kStable : kUnstable; }

    bool valid(double tol = 1e-9) const {
        return p_stable >= 0.0 && p_unstable >= 0.0 && p_stable <= 1.0 && p_unstable <= 1.0 &&
               std::abs(p_stable + p_unstable - 1.0) <= tol;
    }

    friend bool operator==(const SoftLabel&, const SoftLabel&) = default;
};

/// Trajectory samples laid out as N x 1 x H x W plus the label bookkeeping.
struct Dataset {
    std::size_t height = 0;  // monitored channels
    std::size_t width = 0;   // time steps
    std::vector<float> features;
    std::vector<int> labels_true;
    std::vector<SoftLabel> labels_train;
    std::vector<std::uint8_t> flipped;
    std::vector<std::uint8_t> annotated;
    nlohmann::json provenance = nlohmann::json::object();

    std::size_t size() const { return labels_true.size(); }
    std::size_t sample_size() const { return height * width; }
    const float* sample(std::size_t i) const { return features.data() + i * sample_size(); }

    /// Throws std::invalid_argument describing the first broken invariant.
    void validate() const {
        const std::size_t n = size();
        if (n == 0) throw std::invalid_argument("dataset is empty");
        if (height == 0 || width == 0) throw std::invalid_argument("dataset dims must be positive");
        if (features.size() != n * height * width)
            throw std::invalid_argument("features length " + std::to_string(features.size()) + " != N*H*W = " +
                                        std::to_string(n * height * width));
        if (labels_train.size() != n || flipped.size() != n || annotated.size() != n)
            throw std::invalid_argument("per-sample arrays disagree with N=" + std::to_string(n));
        for (std::size_t i = 0; i < n; ++i) {
            if (labels_true[i] != kStable && labels_true[i] != kUnstable)
                throw std::invalid_argument("labels_true[" + std::to_string(i) + "] is not a class index");
            if (!labels_train[i].valid())
                throw std::invalid_argument("labels_train[" + std::to_string(i) + "] is not a distribution");
        }
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Copy of the selected samples, in the given order.
inline Dataset subset(const Dataset& ds, const std::vector<std::size_t>& idx) {
    Dataset out;
    out.height = ds.height;
    out.width = ds.width;
    out.provenance = ds.provenance;
    const std::size_t ss = ds.sample_size();
    out.features.reserve(idx.size() * ss);
    for (auto i : idx) {
        out.features.insert(out.features.end(), ds.sample(i), ds.sample(i) + ss);
        out.labels_true.push_back(ds.labels_true.at(i));
        out.labels_train.push_back(ds.labels_train.at(i));
        out.flipped.push_back(ds.flipped.at(i));
        out.annotated.push_back(ds.annotated.at(i));
    }
    return out;
}

struct Range {
    double lo = 0.0;
    double hi = 0.0;
    bool valid() const { return lo <= hi; }
};

/// Parameters of the synthetic transient-trajectory generator.
///
/// Each channel of a sample is a * exp(-lambda t) * sin(2 pi f t + phi) + noise,
/// with lambda > 0 drawn from `damping` for stable samples and lambda = -g,
/// g drawn from `growth`, for unstable ones.
struct GeneratorSpec {
    std::uint64_t seed = 1;
    std::size_t n = 4000;
    std::size_t height = 16;
    std::size_t width = 32;
    double balance = 0.5;  // P(unstable)
    Range damping{0.6, 1.0};
    Range growth{0.3, 0.5};
    Range frequency{1.0, 2.5};  // Hz
    Range amplitude{0.9, 1.1};
    Range phase{0.0, 2.0 * std::numbers::pi};  // rad
    double horizon = 4.0;  // seconds spanned by the W samples
    double noise_sigma = 0.1;
    double phase_jitter = 0.2;  // per-channel phase spread around the sample phase, rad
    bool normalize = true;  // per-channel z-normalisation over the whole set

    void validate() const {
        if (n == 0) throw std::invalid_argument("generator: N must be positive");
        if (height == 0 || width < 4) throw std::invalid_argument("generator: need H >= 1 and W >= 4");
        if (balance < 0.0 || balance > 1.0) throw std::invalid_argument("generator: balance must be in [0,1]");
        if (!damping.valid() || !growth.valid() || !frequency.valid() || !amplitude.valid() || !phase.valid())
            throw std::invalid_argument("generator: empty parameter range");
        if (damping.lo <= 0.0 || growth.lo <= 0.0)
            throw std::invalid_argument("generator: damping and growth rates must be positive");
        if (noise_sigma < 0.0 || phase_jitter < 0.0 || horizon <= 0.0)
            throw std::invalid_argument("generator: bad noise, jitter or horizon");
    }
};

inline void to_json(nlohmann::json& j, const Range& r) { j = nlohmann::json::array({r.lo, r.hi}); }
inline void from_json(const nlohmann::json& j, Range& r) {
    r.lo = j.at(0).get<double>();
    r.hi = j.at(1).get<double>();
}

inline void to_json(nlohmann::json& j, const GeneratorSpec& s) {
    j = {{"seed", s.seed},           {"n", s.n},
         {"height", s.height},       {"width", s.width},
         {"balance", s.balance},     {"damping", s.damping},
         {"growth", s.growth},       {"frequency", s.frequency},
         {"amplitude", s.amplitude}, {"phase", s.phase},
         {"horizon", s.horizon},
         {"noise_sigma", s.noise_sigma}, {"phase_jitter", s.phase_jitter},
         {"normalize", s.normalize}};
}

inline void from_json(const nlohmann::json& j, GeneratorSpec& s) {
    GeneratorSpec d;
    s.seed = j.value("seed", d.seed);
    s.n = j.value("n", d.n);
    s.height = j.value("height", d.height);
    s.width = j.value("width", d.width);
    s.balance = j.value("balance", d.balance);
    s.damping = j.value("damping", d.damping);
    s.growth = j.value("growth", d.growth);
    s.frequency = j.value("frequency", d.frequency);
    s.amplitude = j.value("amplitude", d.amplitude);
    s.phase = j.value("phase", d.phase);
    s.horizon = j.value("horizon", d.horizon);
    s.noise_sigma = j.value("noise_sigma", d.noise_sigma);
    s.phase_jitter = j.value("phase_jitter", d.phase_jitter);
    s.normalize = j.value("normalize", d.normalize);
}

inline Dataset generate(const GeneratorSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);
    const auto draw = [&](const Range& r) { return r.lo + (r.hi - r.lo) * unit(rng); };

    Dataset ds;
    ds.height = spec.height;
    ds.width = spec.width;
    ds.features.resize(spec.n * spec.height * spec.width);
    const double dt = spec.horizon / static_cast<double>(spec.width - 1);
    // signed participation of each channel, shared by all samples
    std::vector<double> shape(spec.height);
    for (auto& v : shape) v = (0.5 + unit(rng)) * (unit(rng) < 0.5 ? -1.0 : 1.0);
    for (std::size_t i = 0; i < spec.n; ++i) {
        const int cls = unit(rng) < spec.balance ? kUnstable : kStable;
        ds.labels_true.push_back(cls);
        // one oscillatory mode per sample; channels follow the shared mode shape
        const double lambda = cls == kStable ? draw(spec.damping) : -draw(spec.growth);
        const double omega = 2.0 * std::numbers::pi * draw(spec.frequency);
        const double phi = draw(spec.phase);
        const double scale = draw(spec.amplitude);
        for (std::size_t h = 0; h < spec.height; ++h) {
            const double a = scale * shape[h] * (1.0 + 0.1 * noise(rng));
            const double ph = phi + spec.phase_jitter * noise(rng);
            float* row = ds.features.data() + (i * spec.height + h) * spec.width;
            for (std::size_t w = 0; w < spec.width; ++w) {
                const double t = static_cast<double>(w) * dt;
                double x = a * std::exp(-lambda * t) * std::sin(omega * t + ph);
                if (spec.noise_sigma > 0.0) x += spec.noise_sigma * noise(rng);
                row[w] = static_cast<float>(x);
            }
        }
    }

    if (spec.normalize) {
        for (std::size_t h = 0; h < spec.height; ++h) {
            double sum = 0.0, sq = 0.0;
            const double count = static_cast<double>(spec.n * spec.width);
            for (std::size_t i = 0; i < spec.n; ++i) {
                const float* row = ds.features.data() + (i * spec.height + h) * spec.width;
                for (std::size_t w = 0; w < spec.width; ++w) {
                    sum += row[w];
                    sq += static_cast<double>(row[w]) * row[w];
                }
            }
            const double mean = sum / count;
            const double sd = std::sqrt(std::max(sq / count - mean * mean, 1e-24));
            for (std::size_t i = 0; i < spec.n; ++i) {
                float* row = ds.features.data() + (i * spec.height + h) * spec.width;
                for (std::size_t w = 0; w < spec.width; ++w)
                    row[w] = static_cast<float>((row[w] - mean) / sd);
            }
        }
    }

    ds.labels_train.reserve(spec.n);
    for (int c : ds.labels_true) ds.labels_train.push_back(SoftLabel::one_hot(c));
    ds.flipped.assign(spec.n, 0);
    ds.annotated.assign(spec.n, 0);
    ds.provenance = {{"generator", spec}};
    return ds;
}

/// Stratified, seeded split; `ratio` is the training fraction (3:1 -> 0.75).
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("split ratio must lie in (0,1)");
    const std::size_t n = ds.size();
    const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    if (n_train == 0 || n_train >= n)
        throw std::invalid_argument("split of N=" + std::to_string(n) + " at ratio " + std::to_string(ratio) +
                                    " leaves an empty side");

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> by_class[kNumClasses];
    for (std::size_t i = 0; i < n; ++i) by_class[ds.labels_true[i]].push_back(i);
    for (auto& v : by_class) std::shuffle(v.begin(), v.end(), rng);

    std::size_t take0 = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(by_class[0].size())));
    take0 = std::min(take0, n_train);
    std::size_t take1 = n_train - take0;
    if (take1 > by_class[1].size()) {
        take0 += take1 - by_class[1].size();
        take1 = by_class[1].size();
    }

    std::vector<std::size_t> train, test;
    train.insert(train.end(), by_class[0].begin(), by_class[0].begin() + static_cast<long>(take0));
    train.insert(train.end(), by_class[1].begin(), by_class[1].begin() + static_cast<long>(take1));
    test.insert(test.end(), by_class[0].begin() + static_cast<long>(take0), by_class[0].end());
    test.insert(test.end(), by_class[1].begin() + static_cast<long>(take1), by_class[1].end());
    std::shuffle(train.begin(), train.end(), rng);
    std::shuffle(test.begin(), test.end(), rng);

    auto a = subset(ds, train);
    auto b = subset(ds, test);
    a.provenance["split"] = {{"part", "train"}, {"ratio", ratio}, {"seed", seed}};
    b.provenance["split"] = {{"part", "test"}, {"ratio", ratio}, {"seed", seed}};
    return {std::move(a), std::move(b)};
}

}  // namespace mmr
