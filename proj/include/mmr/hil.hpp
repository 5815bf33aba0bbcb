#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmr/dataset.hpp"
#include "mmr/dataset_io.hpp"
#include "mmr/gmm.hpp"
#include "mmr/losses.hpp"
#include "mmr/model.hpp"

namespace mmr {

enum class TimeoutPolicy { skip, oracle };

struct HilConfig {
    double tau = 0.8;
    double rho = 0.0055;
    int period = 3;  // annotate every `period` epochs
    double penalty = 3.0;
    bool dedupe = false;
    double timeout_seconds = 600.0;
    TimeoutPolicy timeout_policy = TimeoutPolicy::skip;

    void validate() const {
        if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("tau must lie in (0,1)");
        if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("rho must lie in (0,1)");
        if (period < 1) throw std::invalid_argument("annotation period must be >= 1");
        if (penalty < 1.0) throw std::invalid_argument("penalty must be >= 1");
        if (timeout_seconds < 0.0) throw std::invalid_argument("timeout must be nonnegative");
    }
};

inline void to_json(nlohmann::json& j, const HilConfig& c) {
    j = {{"tau", c.tau},
         {"rho", c.rho},
         {"period", c.period},
         {"penalty", c.penalty},
         {"dedupe", c.dedupe},
         {"timeout_seconds", c.timeout_seconds},
         {"timeout_policy", c.timeout_policy == TimeoutPolicy::skip ? "skip" : "oracle"}};
}

inline void from_json(const nlohmann::json& j, HilConfig& c) {
    HilConfig d;
    c.tau = j.value("tau", d.tau);
    c.rho = j.value("rho", d.rho);
    c.period = j.value("period", d.period);
    c.penalty = j.value("penalty", d.penalty);
    c.dedupe = j.value("dedupe", d.dedupe);
    c.timeout_seconds = j.value("timeout_seconds", d.timeout_seconds);
    const std::string p = j.value("timeout_policy", std::string("skip"));
    if (p != "skip" && p != "oracle") throw std::invalid_argument("unknown timeout_policy '" + p + "'");
    c.timeout_policy = p == "skip" ? TimeoutPolicy::skip : TimeoutPolicy::oracle;
}

enum class Direction { descending, ascending };
enum class QueryStatus { pending, labeled, expired };

inline const char* to_string(Direction d) { return d == Direction::descending ? "descending" : "ascending"; }
inline const char* to_string(QueryStatus s) {
    switch (s) {
        case QueryStatus::pending: return "pending";
        case QueryStatus::labeled: return "labeled";
        case QueryStatus::expired: return "expired";
    }
    return "?";
}

struct QueryItem {
    std::size_t id = 0;  // unique across the run
    std::size_t sample_id = 0;
    double p_false = 0.0;
    Direction direction = Direction::descending;
    int round = 1;
    int issued_epoch = 0;
    QueryStatus status = QueryStatus::pending;
    std::optional<int> label;  // expert class once labeled
    std::string source;        // oracle | human | scripted | timeout-fallback
    bool duplicate = false;    // sample was queried in an earlier round
    double train_p_unstable = 0.0;  // training label when the query was issued
};

inline void to_json(nlohmann::json& j, const QueryItem& q) {
    j = {{"id", q.id},
         {"sample_id", q.sample_id},
         {"p_false", q.p_false},
         {"direction", to_string(q.direction)},
         {"round", q.round},
         {"issued_epoch", q.issued_epoch},
         {"status", to_string(q.status)},
         {"label", q.label ? nlohmann::json(class_name(*q.label)) : nlohmann::json(nullptr)},
         {"source", q.source},
         {"duplicate", q.duplicate},
         {"train_label", {{"p_stable", 1.0 - q.train_p_unstable}, {"p_unstable", q.train_p_unstable}}}};
}

/// Per-sample cross-entropy with the 1/2 factor: -1/2 sum_j y_ij log p_ij.
template <typename T>
std::vector<double> per_sample_losses(const Tensor<T>& probs, std::span<const SoftLabel> labels) {
    if (probs.dim(0) != labels.size()) throw ShapeError("per_sample_losses: batch/label count mismatch");
    std::vector<double> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        double acc = 0.0;
        for (int c = 0; c < 2; ++c)
            acc -= labels[i][c] * std::log(std::max(static_cast<double>(probs.at(i, c)), kProbFloor));
        out[i] = 0.5 * acc;
    }
    return out;
}

template <typename T>
std::vector<double> per_sample_losses(MmrModel<T>& m, const Dataset& ds) {
    return per_sample_losses(predict_proba_dataset(m, ds), std::span<const SoftLabel>(ds.labels_train));
}

/// Indices with p_false > tau, highest p_false first (ties by index).
inline std::vector<std::size_t> detect(std::span<const double> p_false_values, double tau) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < p_false_values.size(); ++i)
        if (p_false_values[i] > tau) out.push_back(i);
    std::stable_sort(out.begin(), out.end(),
                     [&](std::size_t a, std::size_t b) { return p_false_values[a] > p_false_values[b]; });
    return out;
}

inline std::size_t queries_per_direction(double rho, std::size_t n_total) {
    return static_cast<std::size_t>(std::ceil(rho * static_cast<double>(n_total) - 1e-9));
}

/// Bi-directional selection from the detected set: the head (most likely false)
/// and the tail (barely above threshold), each ceil(rho * N) long.
inline std::vector<QueryItem> select_queries(std::span<const std::size_t> detected,
                                             std::span<const double> p_false_values, double rho,
                                             std::size_t n_total, const std::set<std::size_t>& history,
                                             bool dedupe, int round, int epoch) {
    std::vector<std::size_t> pool;
    for (auto i : detected)
        if (!dedupe || !history.count(i)) pool.push_back(i);
    const std::size_t k = std::min(queries_per_direction(rho, n_total), pool.size());
    std::vector<QueryItem> out;
    std::set<std::size_t> taken;
    const auto push = [&](std::size_t sample, Direction d) {
        if (!taken.insert(sample).second) return;
        QueryItem q;
        q.sample_id = sample;
        q.p_false = p_false_values[sample];
        q.direction = d;
        q.round = round;
        q.issued_epoch = epoch;
        q.duplicate = history.count(sample) > 0;
        out.push_back(q);
    };
    for (std::size_t i = 0; i < k; ++i) push(pool[i], Direction::descending);
    for (std::size_t i = 0; i < k; ++i) push(pool[pool.size() - 1 - i], Direction::ascending);
    return out;
}

// ----- annotator backends -------------------------------------------------

/// Resolves one round of queries in place: every item ends labeled or expired.
class Annotator {
public:
    virtual ~Annotator() = default;
    virtual std::string name() const = 0;
    virtual void annotate(std::vector<QueryItem>& round, const Dataset& train) = 0;
};

class OracleAnnotator final : public Annotator {
public:
    std::string name() const override { return "oracle"; }
    void annotate(std::vector<QueryItem>& round, const Dataset& train) override {
        for (auto& q : round) {
            q.label = train.labels_true.at(q.sample_id);
            q.status = QueryStatus::labeled;
            q.source = "oracle";
        }
    }
};

struct TranscriptRow {
    int round = 0;
    std::size_t sample_id = 0;
    double p_false = 0.0;
    std::string direction;
    int issued_epoch = 0;
    std::string status;
    std::string label;
    std::string source;
};

inline constexpr const char* kTranscriptHeader = "round,sample_id,p_false,direction,issued_epoch,status,label,source";

inline void write_transcript_row(std::ostream& out, const QueryItem& q) {
    out << q.round << ',' << q.sample_id << ',' << io::fmt_double(q.p_false) << ',' << to_string(q.direction) << ','
        << q.issued_epoch << ',' << to_string(q.status) << ',' << (q.label ? class_name(*q.label) : "") << ','
        << q.source << '\n';
}

inline void write_transcript(const std::filesystem::path& path, std::span<const QueryItem> items) {
    auto out = io::open_out(path);
    out << kTranscriptHeader << '\n';
    for (const auto& q : items) write_transcript_row(out, q);
}

inline std::vector<TranscriptRow> read_transcript(const std::filesystem::path& path) {
    std::vector<TranscriptRow> out;
    std::size_t line = 1;
    for (const auto& r : io::read_csv(path, kTranscriptHeader, 8)) {
        const std::string where = path.filename().string() + " line " + std::to_string(++line);
        out.push_back({io::parse_number<int>(r[0], where), io::parse_number<std::size_t>(r[1], where),
                       io::parse_number<double>(r[2], where), r[3], io::parse_number<int>(r[4], where), r[5], r[6],
                       r[7]});
    }
    return out;
}

inline int parse_class_name(const std::string& s) {
    if (s == "stable") return kStable;
    if (s == "unstable") return kUnstable;
    throw std::invalid_argument("unknown class label '" + s + "'");
}

/// Replays answers recorded in a queries.csv transcript.
class ScriptedAnnotator final : public Annotator {
public:
    explicit ScriptedAnnotator(std::vector<TranscriptRow> rows) {
        for (auto& r : rows) answers_[{r.round, r.sample_id}] = std::move(r);
    }
    explicit ScriptedAnnotator(const std::filesystem::path& transcript) : ScriptedAnnotator(read_transcript(transcript)) {}

    std::string name() const override { return "scripted"; }

    void annotate(std::vector<QueryItem>& round, const Dataset&) override {
        for (auto& q : round) {
            auto it = answers_.find({q.round, q.sample_id});
            if (it == answers_.end())
                throw std::runtime_error("scripted transcript has no answer for round " + std::to_string(q.round) +
                                         ", sample " + std::to_string(q.sample_id));
            if (it->second.status == "labeled") {
                q.label = parse_class_name(it->second.label);
                q.status = QueryStatus::labeled;
            } else {
                q.status = QueryStatus::expired;
            }
            q.source = "scripted";
        }
    }

private:
    std::map<std::pair<int, std::size_t>, TranscriptRow> answers_;
};

/// Thread-safe hand-off between HTTP label submissions and the training loop.
///
/// The trainer opens a round, blocks until every item is resolved or the timeout
/// fires, then closes it. Each item moves pending -> labeled at most once.
class AnnotationInbox {
public:
    enum class Submit { ok, not_found, conflict };

    void open_round(const std::vector<QueryItem>& items) {
        std::lock_guard lk(mu_);
        for (const auto& q : items) {
            items_[q.id] = q;
            pending_.insert(q.id);
        }
        round_open_ = true;
        ++round_counter_;
        cv_.notify_all();
    }

    Submit submit(std::size_t query_id, int label) {
        std::lock_guard lk(mu_);
        auto it = items_.find(query_id);
        if (it == items_.end()) return Submit::not_found;
        if (it->second.status != QueryStatus::pending) return Submit::conflict;
        it->second.status = QueryStatus::labeled;
        it->second.label = label;
        it->second.source = "human";
        pending_.erase(query_id);
        cv_.notify_all();
        return Submit::ok;
    }

    /// True when every item of the open round was answered before the deadline.
    bool wait_resolved(std::chrono::duration<double> timeout) {
        std::unique_lock lk(mu_);
        return cv_.wait_for(lk, timeout, [&] { return pending_.empty(); });
    }

    /// Resolves leftovers and returns the round's items in issue order.
    template <typename Fallback>
    std::vector<QueryItem> close_round(const std::vector<QueryItem>& issued, Fallback&& fallback) {
        std::lock_guard lk(mu_);
        std::vector<QueryItem> out;
        for (const auto& q : issued) {
            auto& item = items_.at(q.id);
            if (item.status == QueryStatus::pending) {
                fallback(item);
                pending_.erase(item.id);
            }
            out.push_back(item);
        }
        round_open_ = false;
        return out;
    }

    std::vector<QueryItem> pending() const {
        std::lock_guard lk(mu_);
        std::vector<QueryItem> out;
        for (auto id : pending_) out.push_back(items_.at(id));
        return out;
    }

    std::optional<QueryItem> find(std::size_t id) const {
        std::lock_guard lk(mu_);
        auto it = items_.find(id);
        if (it == items_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t pending_count() const {
        std::lock_guard lk(mu_);
        return pending_.size();
    }

    bool round_open() const {
        std::lock_guard lk(mu_);
        return round_open_;
    }

    int rounds_opened() const {
        std::lock_guard lk(mu_);
        return round_counter_;
    }

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::map<std::size_t, QueryItem> items_;
    std::set<std::size_t> pending_;
    bool round_open_ = false;
    int round_counter_ = 0;
};

/// Publishes rounds to an inbox (fed over HTTP) and waits for human answers.
class InteractiveAnnotator final : public Annotator {
public:
    InteractiveAnnotator(AnnotationInbox& inbox, double timeout_seconds, TimeoutPolicy policy)
        : inbox_(inbox), timeout_(timeout_seconds), policy_(policy) {}

    std::string name() const override { return "interactive"; }

    void annotate(std::vector<QueryItem>& round, const Dataset& train) override {
        inbox_.open_round(round);
        inbox_.wait_resolved(std::chrono::duration<double>(timeout_));
        round = inbox_.close_round(round, [&](QueryItem& q) {
            q.source = "timeout-fallback";
            if (policy_ == TimeoutPolicy::oracle) {
                q.label = train.labels_true.at(q.sample_id);
                q.status = QueryStatus::labeled;
            } else {
                q.status = QueryStatus::expired;
            }
        });
    }

private:
    AnnotationInbox& inbox_;
    double timeout_;
    TimeoutPolicy policy_;
};

}  // namespace mmr
