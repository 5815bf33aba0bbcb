#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmr/dataset_io.hpp"
#include "mmr/metrics.hpp"
#include "mmr/run_io.hpp"

namespace mmr {

/// Increment of run `a` over run `b`: delta in final accuracy, k in convergence epoch.
struct Increment {
    std::string a, b;  // run ids
    double delta = 0.0;
    int k = 0;
};

/// One efficiency row for an (mmr-hil, mmr) pair.
struct EfficiencyRow {
    std::string hil_run, base_run;
    double delta = 0.0;
    double k_abs = 0.0;
    double dup_ratio = 0.0;
    std::size_t queries_total = 0;
    double xi = 0.0;
    bool floor_engaged = false;
    double r = 1.0;
    double n_q = 0.0;
    std::optional<double> xi_star;
};

inline const MetricsSnapshot& final_snapshot(const RunRecord& r) { return r.snapshots.back(); }

/// Runs are comparable when seed, attack and epoch budget agree.
inline void require_pairable(const RunRecord& a, const RunRecord& b) {
    std::string why;
    if (a.config.seed != b.config.seed) why = "seeds differ";
    else if (a.attack_kind != b.attack_kind) why = "attack kinds differ";
    else if (std::abs(a.ratio - b.ratio) > 1e-12) why = "injection ratios differ";
    else if (a.config.epochs != b.config.epochs) why = "epoch budgets differ";
    if (!why.empty()) throw std::invalid_argument("cannot pair runs " + a.run_id + " and " + b.run_id + ": " + why);
}

inline Increment increment(const RunRecord& a, const RunRecord& b) {
    require_pairable(a, b);
    return {a.run_id, b.run_id, final_snapshot(a).accuracy - final_snapshot(b).accuracy,
            a.convergence.epoch - b.convergence.epoch};
}

inline EfficiencyRow efficiency(const RunRecord& hil, const RunRecord& base, double r) {
    const auto inc = increment(hil, base);
    const auto& s = final_snapshot(hil);
    EfficiencyRow row;
    row.hil_run = hil.run_id;
    row.base_run = base.run_id;
    row.delta = inc.delta;
    row.k_abs = std::abs(static_cast<double>(inc.k));
    row.dup_ratio = s.dup_ratio;
    row.queries_total = s.queries_total;
    const auto e = relative_efficiency(row.delta, row.k_abs, row.dup_ratio, row.queries_total);
    row.xi = e.xi;
    row.floor_engaged = e.floor_engaged;
    row.r = r;
    row.n_q = s.n_q;
    row.xi_star = absolute_efficiency(row.xi, row.n_q, r);
    return row;
}

struct Report {
    std::vector<RunRecord> runs;
    std::vector<Increment> increments;
    std::vector<EfficiencyRow> efficiency;
};

/// Pairs runs that share (seed, attack, ratio): mmr over baseline-ce and
/// mmr-hil over mmr. Efficiency rows come with every mmr-hil/mmr pair.
inline Report build_report(std::vector<RunRecord> runs, double r = 1.0) {
    Report rep;
    const auto same_setting = [](const RunRecord& a, const RunRecord& b) {
        return a.config.seed == b.config.seed && a.attack_kind == b.attack_kind && std::abs(a.ratio - b.ratio) < 1e-12;
    };
    for (const auto& a : runs) {
        const Method want = a.config.method == Method::mmr       ? Method::baseline_ce
                            : a.config.method == Method::mmr_hil ? Method::mmr
                                                                 : a.config.method;
        if (want == a.config.method) continue;
        for (const auto& b : runs) {
            if (b.config.method != want || !same_setting(a, b)) continue;
            rep.increments.push_back(increment(a, b));
            if (a.config.method == Method::mmr_hil) rep.efficiency.push_back(efficiency(a, b, r));
        }
    }
    rep.runs = std::move(runs);
    return rep;
}

/// Explicit pairs, given as (a, b) run ids; unknown ids or unpairable runs are rejected.
inline Report build_report(std::vector<RunRecord> runs, const std::vector<std::pair<std::string, std::string>>& pairs,
                           double r) {
    Report rep;
    const auto find = [&](const std::string& id) -> const RunRecord& {
        for (const auto& x : runs)
            if (x.run_id == id) return x;
        throw std::invalid_argument("report pair names unknown run '" + id + "'");
    };
    for (const auto& [ia, ib] : pairs) {
        const auto& a = find(ia);
        const auto& b = find(ib);
        rep.increments.push_back(increment(a, b));
        if (a.config.method == Method::mmr_hil) rep.efficiency.push_back(efficiency(a, b, r));
    }
    rep.runs = std::move(runs);
    return rep;
}

inline constexpr const char* kReportHeader =
    "run_id,method,attack_kind,ratio,accuracy,conv_epoch,corr_overall,corr_SF_UT,corr_UF_ST,N_q,N_dq_over_Nq,xi,"
    "xi_star,r";

namespace detail {
inline std::string opt_cell(const std::optional<double>& v) { return v ? io::fmt_double(*v) : ""; }
}  // namespace detail

/// Run rows first, then one row per increment (run_id "a/b", method "increment",
/// accuracy = delta, conv_epoch = k, efficiency columns filled for hil pairs).
inline void write_report_csv(std::ostream& out, const Report& rep) {
    out << kReportHeader << '\n';
    for (const auto& r : rep.runs) {
        const auto& s = final_snapshot(r);
        out << r.run_id << ',' << to_string(r.config.method) << ',' << r.attack_kind << ','
            << io::fmt_double(r.ratio) << ',' << io::fmt_double(s.accuracy) << ',' << r.convergence.epoch << ','
            << detail::opt_cell(s.correction.overall) << ',' << detail::opt_cell(s.correction.stable_false) << ','
            << detail::opt_cell(s.correction.unstable_false) << ',' << io::fmt_double(s.n_q) << ','
            << io::fmt_double(s.dup_ratio) << ",,,\n";
    }
    for (const auto& inc : rep.increments) {
        const EfficiencyRow* e = nullptr;
        for (const auto& x : rep.efficiency)
            if (x.hil_run == inc.a && x.base_run == inc.b) e = &x;
        out << inc.a << '/' << inc.b << ",increment,,," << io::fmt_double(inc.delta) << ',' << inc.k << ",,,,";
        if (e)
            out << io::fmt_double(e->n_q) << ',' << io::fmt_double(e->dup_ratio) << ',' << io::fmt_double(e->xi)
                << ',' << detail::opt_cell(e->xi_star) << ',' << io::fmt_double(e->r);
        else
            out << ",,,,";
        out << '\n';
    }
}

inline nlohmann::json report_json(const Report& rep) {
    nlohmann::json j;
    j["format_version"] = kRunFormatVersion;
    j["convergence_definition"] = {
        {"rule", "smallest epoch within band of the run maximum that stays in band for patience epochs"}};
    j["runs"] = nlohmann::json::array();
    for (const auto& r : rep.runs) {
        const auto& s = final_snapshot(r);
        j["runs"].push_back({{"run_id", r.run_id},
                             {"method", to_string(r.config.method)},
                             {"seed", r.config.seed},
                             {"attack_kind", r.attack_kind},
                             {"ratio", r.ratio},
                             {"accuracy", s.accuracy},
                             {"conv_epoch", r.convergence.epoch},
                             {"conv_truncated", r.convergence.truncated},
                             {"band", r.config.band},
                             {"patience", r.config.patience},
                             {"final", s}});
    }
    j["increments"] = nlohmann::json::array();
    for (const auto& i : rep.increments)
        j["increments"].push_back({{"a", i.a}, {"b", i.b}, {"delta", i.delta}, {"k", i.k}});
    j["efficiency"] = nlohmann::json::array();
    for (const auto& e : rep.efficiency)
        j["efficiency"].push_back({{"hil_run", e.hil_run},
                                   {"base_run", e.base_run},
                                   {"delta", e.delta},
                                   {"k_abs", e.k_abs},
                                   {"N_dq_over_Nq", e.dup_ratio},
                                   {"queries_total", e.queries_total},
                                   {"xi", e.xi},
                                   {"dup_floor_engaged", e.floor_engaged},
                                   {"r", e.r},
                                   {"N_q", e.n_q},
                                   {"xi_star", optional_json(e.xi_star)}});
    return j;
}

inline void emit_report(const Report& rep, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        auto out = io::open_out(dir / "report.csv");
        write_report_csv(out, rep);
    }
    io::open_out(dir / "report.json") << report_json(rep).dump(2) << '\n';
}

/// One column of an efficiency table (e.g. "T=3").
struct EfficiencyColumn {
    std::string label;
    double xi = 0.0;
    std::optional<double> xi_star;
};

/// Tab-separated table: a header of column labels, then the xi and xi* rows, two decimals.
inline std::string render_efficiency_table(const std::vector<EfficiencyColumn>& cols) {
    const auto fmt2 = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };
    std::ostringstream out;
    for (const auto& c : cols) out << '\t' << c.label;
    out << "\nxi";
    for (const auto& c : cols) out << '\t' << fmt2(c.xi);
    out << "\nxi*";
    for (const auto& c : cols) out << '\t' << (c.xi_star ? fmt2(*c.xi_star) : "n/a");
    out << '\n';
    return out.str();
}

}  // namespace mmr
