#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmr/adam.hpp"
#include "mmr/dataset.hpp"
#include "mmr/fuzzy_clustering.hpp"
#include "mmr/gmm.hpp"
#include "mmr/hil.hpp"
#include "mmr/metrics.hpp"
#include "mmr/model.hpp"

namespace mmr {

enum class Method { baseline_ce, mmr, mmr_hil };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::baseline_ce: return "baseline-ce";
        case Method::mmr: return "mmr";
        case Method::mmr_hil: return "mmr-hil";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    if (s == "baseline-ce" || s == "baseline") return Method::baseline_ce;
    if (s == "mmr") return Method::mmr;
    if (s == "mmr-hil") return Method::mmr_hil;
    throw std::invalid_argument("unknown method '" + s + "' (expected baseline-ce|mmr|mmr-hil)");
}

/// omega = min(kappa * t, 1).
inline double omega(double kappa, int epoch) {
    if (!(kappa > 0.0)) throw std::invalid_argument("kappa must be positive");
    return std::min(kappa * static_cast<double>(epoch), 1.0);
}

struct RunConfig {
    Method method = Method::mmr;
    int epochs = 60;
    std::uint64_t seed = 1;
    double kappa = 0.03;
    ModelConfig model;
    HilConfig hil;
    int patience = 10;
    double band = 0.25;
    bool separate_penalized_pass = true;  // extra pass after each annotation round
    int init_max_iter = 100;
    double init_tol = 1e-6;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
        if (!(kappa > 0.0)) throw std::invalid_argument("kappa must be positive");
        if (patience < 0 || band < 0.0) throw std::invalid_argument("bad convergence settings");
        model.validate();
        hil.validate();
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"method", to_string(c.method)},
         {"epochs", c.epochs},
         {"seed", c.seed},
         {"kappa", c.kappa},
         {"model", c.model},
         {"hil", c.hil},
         {"patience", c.patience},
         {"band", c.band},
         {"separate_penalized_pass", c.separate_penalized_pass},
         {"init_max_iter", c.init_max_iter},
         {"init_tol", c.init_tol}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
    RunConfig d;
    c.method = parse_method(j.value("method", std::string(to_string(d.method))));
    c.epochs = j.value("epochs", d.epochs);
    c.seed = j.value("seed", d.seed);
    c.kappa = j.value("kappa", d.kappa);
    c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
    c.hil = j.contains("hil") ? j.at("hil").get<HilConfig>() : d.hil;
    c.patience = j.value("patience", d.patience);
    c.band = j.value("band", d.band);
    c.separate_penalized_pass = j.value("separate_penalized_pass", d.separate_penalized_pass);
    c.init_max_iter = j.value("init_max_iter", d.init_max_iter);
    c.init_tol = j.value("init_tol", d.init_tol);
}

/// Soft-label update y <- (1 - omega) y + omega (y_C + y_Clu) / 2 for every
/// sample not pinned by an expert annotation.
inline void correct_labels(std::vector<SoftLabel>& labels, std::span<const int> y_c, std::span<const int> y_clu,
                           double w, std::span<const std::uint8_t> pinned = {}) {
    if (y_c.size() != labels.size() || y_clu.size() != labels.size())
        throw std::invalid_argument("correct_labels: prediction count mismatch");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!pinned.empty() && pinned[i]) continue;
        const double s = 0.5 * ((y_c[i] == kStable) + (y_clu[i] == kStable));
        auto& y = labels[i];
        y.p_stable = (1.0 - w) * y.p_stable + w * s;
        y.p_unstable = 1.0 - y.p_stable;
    }
}

/// Chooses the cluster-index -> class mapping that agrees best with the
/// classifier; `swapped` is kept on ties. Returns the aligned hard assignments.
inline std::vector<int> align_clusters(std::span<const int> raw, std::span<const int> y_c, bool& swapped) {
    std::size_t same = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) same += raw[i] == y_c[i];
    const std::size_t flipped = raw.size() - same;
    if (same > flipped) swapped = false;
    else if (flipped > same) swapped = true;
    std::vector<int> out(raw.begin(), raw.end());
    if (swapped)
        for (auto& v : out) v = 1 - v;
    return out;
}

struct TrainerStatus {
    int epoch = 0;
    std::string phase;  // classification | annotation | clustering | correction | done
    std::optional<MetricsSnapshot> latest;
};

template <typename T>
struct RunResult {
    RunConfig config;
    std::string annotator;
    std::vector<MetricsSnapshot> snapshots;
    Dataset final_train;
    std::vector<QueryItem> queries;
    ConvergencePoint convergence;
    int init_iterations = 0;
    bool init_converged = false;
    bool init_reseeded = false;
    std::vector<double> epoch_seconds;  // wall clock, kept out of run.json
    std::optional<MmrModel<T>> model;

    double final_accuracy() const { return snapshots.back().accuracy; }
};

/// The alternating classification / clustering loop with label correction and
/// the optional annotation rounds.
template <typename T = float>
class Trainer {
public:
    Trainer(RunConfig cfg, Dataset train, Dataset test, Annotator* annotator = nullptr)
        : cfg_(std::move(cfg)), train_(std::move(train)), test_(std::move(test)), annotator_(annotator),
          model_(adjusted(cfg_.model, train_), cfg_.seed) {
        cfg_.validate();
        train_.validate();
        test_.validate();
        if (cfg_.method == Method::mmr_hil && annotator_ == nullptr)
            throw std::invalid_argument("mmr-hil needs an annotator");
        weights_.assign(train_.size(), T(1));
        for (std::size_t i = 0; i < train_.size(); ++i)
            if (train_.annotated[i]) weights_[i] = static_cast<T>(cfg_.hil.penalty);
        const AdamConfig ac{cfg_.model.learning_rate};
        opt_enc_ = Adam<T>(ac);
        opt_dec_ = Adam<T>(ac);
        opt_cls_ = Adam<T>(ac);
        opt_clu_ = Adam<T>(ac);
    }

    std::function<void(const TrainerStatus&)> on_status;

    MmrModel<T>& model() { return model_; }
    const Dataset& train_set() const { return train_; }
    std::span<const T> weights() const { return weights_; }

    // ----- single passes --------------------------------------------------

    /// One shuffled pass minimising L_Rec + alpha1 * weighted CE. Returns the mean batch loss.
    double train_epoch_classification(int epoch, int tag = 0) {
        return run_batches(epoch, tag, [&](const std::vector<std::size_t>& idx, const Tensor<T>& x) {
            auto y = gather_labels<T>(train_, idx);
            std::vector<T> w(idx.size());
            for (std::size_t b = 0; b < idx.size(); ++b) w[b] = weights_[idx[b]];
            auto l = model_.classification_step(x, y, w);
            opt_enc_.step(model_.encoder().parameters());
            opt_dec_.step(model_.decoder().parameters());
            opt_cls_.step(model_.classifier().parameters());
            return l.total;
        });
    }

    /// One shuffled pass minimising L_Rec + alpha2 * KL(q || p_t) against a fixed target.
    double train_epoch_clustering(const Tensor<T>& target, int epoch) {
        require_shape(target.shape(), {train_.size(), 2}, "train_epoch_clustering target");
        return run_batches(epoch, 1, [&](const std::vector<std::size_t>& idx, const Tensor<T>& x) {
            Tensor<T> p({idx.size(), 2});
            for (std::size_t b = 0; b < idx.size(); ++b) {
                p.at(b, 0) = target.at(idx[b], 0);
                p.at(b, 1) = target.at(idx[b], 1);
            }
            auto l = model_.clustering_step(x, p);
            opt_enc_.step(model_.encoder().parameters());
            opt_dec_.step(model_.decoder().parameters());
            opt_clu_.step(model_.clustering().parameters());
            return l.total;
        });
    }

    double train_epoch_cross_entropy(int epoch) {
        return run_batches(epoch, 0, [&](const std::vector<std::size_t>& idx, const Tensor<T>& x) {
            auto l = model_.cross_entropy_step(x, gather_labels<T>(train_, idx));
            opt_enc_.step(model_.encoder().parameters());
            opt_cls_.step(model_.classifier().parameters());
            return l.total;
        });
    }

    /// Fits the clustering layer on the current embeddings.
    void initialize_clustering() {
        auto z = embed_dataset(model_, train_);
        auto init = init_centers(z, {cfg_.model.fuzzifier, cfg_.init_max_iter, cfg_.init_tol});
        model_.init_clustering(init.state);
        opt_clu_ = Adam<T>(AdamConfig{cfg_.model.learning_rate});
        init_iterations_ = init.iterations;
        init_converged_ = init.converged;
        init_reseeded_ = init.reseeded;
    }

    /// Refreshes the global mean and returns the target distribution over the training set.
    Tensor<T> refresh_target() {
        auto z = embed_dataset(model_, train_);
        model_.clustering().set_global_mean(column_mean(z));
        return target_distribution(model_.clustering().forward(z));
    }

    /// Cluster and classifier predictions, then the soft-label update.
    void correct_training_labels(double w) {
        auto probs = predict_proba_dataset(model_, train_);
        const auto y_c = argmax_classes(probs);
        const auto raw = argmax_classes(model_.clustering().forward(embed_dataset(model_, train_)));
        const auto y_clu = align_clusters(raw, y_c, clusters_swapped_);
        correct_labels(train_.labels_train, y_c, y_clu, w, train_.annotated);
    }

    /// Detect, select, annotate, and pin one annotation round. Returns the detected count.
    std::size_t annotation_round(int epoch) {
        const auto losses = per_sample_losses(model_, train_);
        const auto gmm = fit_gmm(losses);
        const auto pf = p_false(gmm, losses);
        const auto det = detect(pf, cfg_.hil.tau);
        auto items = select_queries(det, pf, cfg_.hil.rho, train_.size(), history_, cfg_.hil.dedupe, ++round_, epoch);
        for (auto& q : items) {
            q.id = next_query_id_++;
            q.train_p_unstable = train_.labels_train[q.sample_id].p_unstable;
        }
        if (!items.empty()) annotator_->annotate(items, train_);
        for (const auto& q : items) {
            if (q.duplicate) ++n_dq_;
            history_.insert(q.sample_id);
            if (q.status == QueryStatus::labeled && q.label) {
                train_.labels_train[q.sample_id] = SoftLabel::one_hot(*q.label);
                train_.annotated[q.sample_id] = 1;
                weights_[q.sample_id] = static_cast<T>(cfg_.hil.penalty);
            }
            queries_.push_back(q);
        }
        last_queried_ = items.size();
        return det.size();
    }

    double test_accuracy() {
        const auto pred = argmax_classes(predict_proba_dataset(model_, test_));
        return accuracy(pred, test_.labels_true);
    }

    // ----- full run -------------------------------------------------------

    RunResult<T> run() {
        RunResult<T> res;
        res.config = cfg_;
        res.annotator = annotator_ ? annotator_->name() : "none";
        for (int t = 0; t < cfg_.epochs; ++t) {
            const auto start = std::chrono::steady_clock::now();
            MetricsSnapshot snap;
            snap.epoch = t;
            last_queried_ = 0;
            if (cfg_.method == Method::baseline_ce) {
                emit(t, "classification");
                snap.loss_classification = check_finite(train_epoch_cross_entropy(t), t, "cross-entropy");
            } else {
                emit(t, "classification");
                snap.loss_classification = check_finite(train_epoch_classification(t), t, "classification");
                if (t == 0) initialize_clustering();
                if (cfg_.method == Method::mmr_hil && t % cfg_.hil.period == 0) {
                    emit(t, "annotation");
                    snap.detected = annotation_round(t);
                    if (cfg_.separate_penalized_pass)
                        check_finite(train_epoch_classification(t, 2), t, "penalized classification");
                }
                emit(t, "clustering");
                const auto target = refresh_target();
                snap.loss_clustering = check_finite(train_epoch_clustering(target, t), t, "clustering");
                emit(t, "correction");
                snap.omega = omega(cfg_.kappa, t);
                correct_training_labels(snap.omega);
            }
            snap.accuracy = test_accuracy();
            snap.correction = correction_rate(train_);
            snap.queries_total = queries_.size();
            snap.queried = last_queried_;
            snap.n_dq = n_dq_;
            snap.n_q = static_cast<double>(history_.size()) / static_cast<double>(train_.size());
            snap.dup_ratio = queries_.empty() ? 0.0 : static_cast<double>(n_dq_) / static_cast<double>(queries_.size());
            res.snapshots.push_back(snap);
            res.epoch_seconds.push_back(
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
            latest_ = snap;
            emit(t, "epoch-end");
        }
        std::vector<double> trace;
        for (const auto& s : res.snapshots) trace.push_back(s.accuracy);
        res.convergence = convergence_epoch(trace, cfg_.band, cfg_.patience);
        res.final_train = train_;
        res.queries = queries_;
        res.init_iterations = init_iterations_;
        res.init_converged = init_converged_;
        res.init_reseeded = init_reseeded_;
        res.model = model_;
        emit(cfg_.epochs, "done");
        return res;
    }

private:
    static ModelConfig adjusted(ModelConfig m, const Dataset& ds) {
        m.input_height = ds.height;
        m.input_width = ds.width;
        return m;
    }

    static double check_finite(double v, int epoch, const char* pass) {
        if (!std::isfinite(v))
            throw NonFiniteError(std::string("non-finite ") + pass + " loss at epoch " + std::to_string(epoch));
        return v;
    }

    template <typename Step>
    double run_batches(int epoch, int tag, Step&& step) {
        std::vector<std::size_t> order(train_.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::seed_seq seq{static_cast<std::uint32_t>(cfg_.seed), static_cast<std::uint32_t>(cfg_.seed >> 32),
                          static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(tag)};
        std::mt19937_64 rng(seq);
        std::shuffle(order.begin(), order.end(), rng);
        const std::size_t bs = cfg_.model.batch_size;
        double acc = 0.0;
        std::size_t batches = 0;
        std::vector<std::size_t> idx;
        for (std::size_t b = 0; b < order.size(); b += bs) {
            idx.assign(order.begin() + static_cast<long>(b),
                       order.begin() + static_cast<long>(std::min(order.size(), b + bs)));
            const auto x = gather_features<T>(train_, idx);
            model_.zero_grad();
            const double l = step(idx, x);
            if (!std::isfinite(l))
                throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                     std::to_string(batches));
            acc += l;
            ++batches;
        }
        return acc / static_cast<double>(batches);
    }

    void emit(int epoch, const char* phase) {
        if (on_status) on_status({epoch, phase, latest_});
    }

    RunConfig cfg_;
    Dataset train_, test_;
    Annotator* annotator_;
    MmrModel<T> model_;
    Adam<T> opt_enc_, opt_dec_, opt_cls_, opt_clu_;
    std::vector<T> weights_;
    bool clusters_swapped_ = false;
    std::set<std::size_t> history_;
    std::vector<QueryItem> queries_;
    std::size_t n_dq_ = 0;
    std::size_t last_queried_ = 0;
    std::size_t next_query_id_ = 1;
    int round_ = 0;
    int init_iterations_ = 0;
    bool init_converged_ = false;
    bool init_reseeded_ = false;
    std::optional<MetricsSnapshot> latest_;
};

struct ScalingPoint {
    std::size_t n = 0;
    double seconds = 0.0;  // fastest steady-state epoch over the repeats
};

/// Times one MMR epoch after clustering init on the first n samples of `pool`
/// for each n. Epoch 0 (which also fits the clustering layer) is not timed.
template <typename T = float>
std::vector<ScalingPoint> scaling_probe(const Dataset& pool, const Dataset& test, std::span<const std::size_t> sizes,
                                        RunConfig cfg, int repeats = 1) {
    if (repeats < 1) throw std::invalid_argument("scaling_probe: repeats must be >= 1");
    cfg.method = Method::mmr;
    cfg.epochs = 2;
    std::vector<ScalingPoint> out;
    for (std::size_t n : sizes) {
        if (n == 0 || n > pool.size())
            throw std::invalid_argument("scaling_probe: size " + std::to_string(n) + " outside the pool");
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        const Dataset part = subset(pool, idx);
        double best = std::numeric_limits<double>::infinity();
        for (int r = 0; r < repeats; ++r) {
            Trainer<T> tr(cfg, part, test);
            best = std::min(best, tr.run().epoch_seconds.back());
        }
        out.push_back({n, best});
    }
    return out;
}

}  // namespace mmr
