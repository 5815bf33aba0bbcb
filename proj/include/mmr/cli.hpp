#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmr/dataset.hpp"
#include "mmr/dataset_io.hpp"
#include "mmr/fli_attack.hpp"
#include "mmr/hil.hpp"
#include "mmr/http_service.hpp"
#include "mmr/metrics.hpp"
#include "mmr/report.hpp"
#include "mmr/run_io.hpp"
#include "mmr/trainer.hpp"

namespace mmr::cli {

/// Failure with a machine-readable kind, reported as one JSON line on stderr.
struct CliError : std::runtime_error {
    std::string kind;
    CliError(std::string k, const std::string& msg) : std::runtime_error(msg), kind(std::move(k)) {}
};

/// Top-level sections of the config document.
struct Config {
    GeneratorSpec generator;
    double split = 0.75;
    NoiseSpec attack{NoiseKind::sym, 0.0, 1, false};
    RunConfig run;
    double report_r = 1.0;
};

inline Config load_config(const std::string& path) {
    Config c;
    if (path.empty()) return c;
    nlohmann::json j;
    {
        std::ifstream in(path);
        if (!in) throw CliError("config", "cannot open config " + path);
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw CliError("config", path + ": " + e.what());
        }
    }
    if (!j.is_object()) throw CliError("config", path + ": top level must be an object");
    static const std::set<std::string> known{"generator", "split", "attack", "run", "report"};
    for (const auto& [k, v] : j.items())
        if (!known.count(k)) throw CliError("config", path + ": unknown section '" + k + "'");
    try {
        if (j.contains("generator")) c.generator = j["generator"].get<GeneratorSpec>();
        c.split = j.value("split", c.split);
        if (j.contains("attack")) {
            const auto& a = j["attack"];
            c.attack.kind = parse_noise_kind(a.value("kind", std::string("sym")));
            c.attack.ratio = a.value("ratio", c.attack.ratio);
            c.attack.seed = a.value("seed", c.attack.seed);
            c.attack.exact_count = a.value("exact_count", c.attack.exact_count);
        }
        if (j.contains("run")) c.run = j["run"].get<RunConfig>();
        if (j.contains("report")) c.report_r = j["report"].value("r", c.report_r);
    } catch (const nlohmann::json::exception& e) {
        throw CliError("config", path + ": " + e.what());
    }
    return c;
}

struct TrainFlags {
    std::string config, train, test, out, method, annotator = "oracle", transcript, attack;
    std::optional<std::uint64_t> seed, attack_seed;
    std::optional<int> epochs, period;
    std::optional<double> rho, tau, ratio;
    bool embeddings = false;
    // serve only
    std::string listen, static_dir, timeout_policy;
    std::optional<double> timeout;
};

inline void add_train_flags(CLI::App* sub, TrainFlags& f, bool serve) {
    sub->add_option("--config", f.config, "JSON config document");
    sub->add_option("--train", f.train, "training dataset directory")->required();
    sub->add_option("--test", f.test, "test dataset directory")->required();
    sub->add_option("--out", f.out, "run output directory")->required();
    sub->add_option("--method", f.method, "baseline-ce | mmr | mmr-hil");
    sub->add_option("--seed", f.seed, "run seed");
    sub->add_option("--epochs", f.epochs, "number of epochs");
    sub->add_option("--rho", f.rho, "annotation rate");
    sub->add_option("--tau", f.tau, "detection threshold");
    sub->add_option("--period", f.period, "annotation period T");
    sub->add_option("--attack", f.attack, "attack applied to a clean training set (sym|asym)");
    sub->add_option("--ratio", f.ratio, "injection ratio for --attack");
    sub->add_option("--attack-seed", f.attack_seed, "seed for --attack");
    sub->add_flag("--embeddings", f.embeddings, "also write embeddings.bin");
    if (serve) {
        sub->add_option("--listen", f.listen, std::string("host:port (default from ") + kListenEnv + ")");
        sub->add_option("--timeout", f.timeout, "seconds to wait for a round");
        sub->add_option("--timeout-policy", f.timeout_policy, "skip | oracle");
        sub->add_option("--static", f.static_dir, "directory of UI assets served at /");
    } else {
        sub->add_option("--annotator", f.annotator, "oracle | scripted")
            ->check(CLI::IsMember({"oracle", "scripted"}));
        sub->add_option("--transcript", f.transcript, "queries.csv to replay with --annotator scripted");
    }
}

inline RunConfig resolve_run_config(const Config& c, const TrainFlags& f) {
    RunConfig r = c.run;
    if (!f.method.empty()) r.method = parse_method(f.method);
    if (f.seed) r.seed = *f.seed;
    if (f.epochs) r.epochs = *f.epochs;
    if (f.rho) r.hil.rho = *f.rho;
    if (f.tau) r.hil.tau = *f.tau;
    if (f.period) r.hil.period = *f.period;
    if (f.timeout) r.hil.timeout_seconds = *f.timeout;
    if (!f.timeout_policy.empty()) {
        if (f.timeout_policy != "skip" && f.timeout_policy != "oracle")
            throw std::invalid_argument("unknown timeout policy '" + f.timeout_policy + "'");
        r.hil.timeout_policy = f.timeout_policy == "skip" ? TimeoutPolicy::skip : TimeoutPolicy::oracle;
    }
    r.validate();
    return r;
}

inline std::pair<Dataset, Dataset> load_train_test(const Config& c, const TrainFlags& f) {
    Dataset train = load_dataset(f.train);
    Dataset test = load_dataset(f.test);
    if (!f.attack.empty() || f.ratio) {
        NoiseSpec ns = c.attack;
        if (!f.attack.empty()) ns.kind = parse_noise_kind(f.attack);
        if (f.ratio) ns.ratio = *f.ratio;
        if (f.attack_seed) ns.seed = *f.attack_seed;
        train = inject(train, ns);
    }
    return {std::move(train), std::move(test)};
}

inline void print_summary(std::ostream& out, const RunResult<float>& r, const std::string& dir) {
    const auto& s = r.snapshots.back();
    nlohmann::json j = {{"run_dir", dir},
                        {"method", to_string(r.config.method)},
                        {"accuracy", s.accuracy},
                        {"conv_epoch", r.convergence.epoch},
                        {"corr_overall", optional_json(s.correction.overall)},
                        {"N_q", s.n_q}};
    out << j.dump() << '\n';
}

inline int cmd_train(const TrainFlags& f, std::ostream& out) {
    const auto cfg = load_config(f.config);
    const auto rc = resolve_run_config(cfg, f);
    auto [train, test] = load_train_test(cfg, f);
    std::unique_ptr<Annotator> ann;
    if (rc.method == Method::mmr_hil) {
        if (f.annotator == "scripted") {
            if (f.transcript.empty()) throw CliError("usage", "--annotator scripted needs --transcript");
            ann = std::make_unique<ScriptedAnnotator>(std::filesystem::path(f.transcript));
        } else {
            ann = std::make_unique<OracleAnnotator>();
        }
    }
    Trainer<float> trainer(rc, std::move(train), std::move(test), ann.get());
    auto res = trainer.run();
    write_run(res, f.out, {f.embeddings, true});
    print_summary(out, res, f.out);
    return 0;
}

inline int cmd_serve(const TrainFlags& f, std::ostream& out) {
    const auto cfg = load_config(f.config);
    auto rc = resolve_run_config(cfg, f);
    if (rc.method != Method::mmr_hil) throw CliError("usage", "serve requires --method mmr-hil");
    std::string listen = f.listen;
    if (listen.empty()) {
        const char* env = std::getenv(kListenEnv);
        listen = env ? env : "127.0.0.1:8080";
    }
    const auto addr = parse_listen(listen);
    auto [train, test] = load_train_test(cfg, f);

    AnnotationInbox inbox;
    StatusBoard board;
    AnnotationService service(inbox, board, train, rc.hil.timeout_seconds);
    if (!f.static_dir.empty() && !service.mount_static(f.static_dir))
        throw CliError("usage", "static directory " + f.static_dir + " does not exist");
    const int port = service.start(addr);
    out << nlohmann::json{{"listening", addr.host + ":" + std::to_string(port)}}.dump() << std::endl;

    InteractiveAnnotator ann(inbox, rc.hil.timeout_seconds, rc.hil.timeout_policy);
    Trainer<float> trainer(rc, std::move(train), std::move(test), &ann);
    trainer.on_status = [&](const TrainerStatus& s) { board.publish(s); };
    auto res = trainer.run();
    write_run(res, f.out, {f.embeddings, true});
    service.stop();
    print_summary(out, res, f.out);
    return 0;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"mmr: robust time-series classification under false-label injection"};
    app.require_subcommand(1);

    std::string config, out_dir, data_dir, attack;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> n;
    std::optional<double> split, ratio;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic train/test pair");
    gen->add_option("--config", config, "JSON config document");
    gen->add_option("--seed", seed, "generator seed (also seeds the split)");
    gen->add_option("--n", n, "number of samples");
    gen->add_option("--split", split, "training fraction");
    gen->add_option("--out", out_dir, "output directory (gets train/ and test/)")->required();

    auto* inj = app.add_subcommand("inject", "apply a false-label attack to a dataset");
    inj->add_option("--config", config, "JSON config document");
    inj->add_option("--data", data_dir, "clean dataset directory")->required();
    inj->add_option("--attack", attack, "sym | asym");
    inj->add_option("--ratio", ratio, "injection ratio");
    inj->add_option("--seed", seed, "attack seed");
    inj->add_option("--out", out_dir, "output dataset directory")->required();

    TrainFlags tf, sf;
    auto* train = app.add_subcommand("train", "train with oracle or scripted annotations");
    add_train_flags(train, tf, false);
    auto* serve = app.add_subcommand("serve", "train mmr-hil with HTTP annotation");
    add_train_flags(serve, sf, true);

    std::string model_dir;
    auto* eval = app.add_subcommand("eval", "evaluate a saved model on a dataset");
    eval->add_option("--model", model_dir, "run directory or its model/ directory")->required();
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--out", out_dir, "optional directory for eval.json");

    std::vector<std::string> runs, pairs;
    std::optional<double> r;
    auto* report = app.add_subcommand("report", "summarise run directories");
    report->add_option("--config", config, "JSON config document");
    report->add_option("--runs", runs, "run directories")->required();
    report->add_option("--pair", pairs, "explicit increment pair a/b (run directory names)");
    report->add_option("--r", r, "exponent of N_q in the absolute efficiency");
    report->add_option("--out", out_dir, "report directory")->required();

    const auto fail = [&](const std::string& kind, const std::string& msg, int code) {
        err << nlohmann::json{{"error", kind}, {"message", msg}}.dump() << '\n';
        return code;
    };

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 2);
    }

    try {
        if (gen->parsed()) {
            auto cfg = load_config(config);
            if (seed) cfg.generator.seed = *seed;
            if (n) cfg.generator.n = *n;
            if (split) cfg.split = *split;
            const auto ds = generate(cfg.generator);
            auto [a, b] = mmr::split(ds, cfg.split, cfg.generator.seed);
            save_dataset(a, std::filesystem::path(out_dir) / "train");
            save_dataset(b, std::filesystem::path(out_dir) / "test");
            out << nlohmann::json{{"train", a.size()}, {"test", b.size()}, {"out", out_dir}}.dump() << '\n';
        } else if (inj->parsed()) {
            auto cfg = load_config(config);
            if (!attack.empty()) cfg.attack.kind = parse_noise_kind(attack);
            if (ratio) cfg.attack.ratio = *ratio;
            if (seed) cfg.attack.seed = *seed;
            const auto ds = inject(load_dataset(data_dir), cfg.attack);
            save_dataset(ds, out_dir);
            std::size_t flipped = 0;
            for (auto f : ds.flipped) flipped += f;
            out << nlohmann::json{{"flipped", flipped}, {"N", ds.size()}, {"out", out_dir}}.dump() << '\n';
        } else if (train->parsed()) {
            return cmd_train(tf, out);
        } else if (serve->parsed()) {
            return cmd_serve(sf, out);
        } else if (eval->parsed()) {
            std::filesystem::path md = model_dir;
            if (std::filesystem::exists(md / "model" / "model.json")) md /= "model";
            auto m = load_model<float>(md);
            const auto ds = load_dataset(data_dir);
            const auto pred = argmax_classes(predict_proba_dataset(m, ds));
            const auto cr = correction_rate(ds);
            nlohmann::json j = {{"model", md.string()},
                                {"data", data_dir},
                                {"N", ds.size()},
                                {"accuracy", accuracy(pred, ds.labels_true)},
                                {"corr_overall", optional_json(cr.overall)}};
            if (!out_dir.empty()) {
                std::filesystem::create_directories(out_dir);
                io::open_out(std::filesystem::path(out_dir) / "eval.json") << j.dump(2) << '\n';
            }
            out << j.dump() << '\n';
        } else if (report->parsed()) {
            const auto cfg = load_config(config);
            const double rr = r ? *r : cfg.report_r;
            std::vector<RunRecord> recs;
            for (const auto& d : runs) recs.push_back(read_run(d));
            Report rep;
            if (pairs.empty()) {
                rep = build_report(std::move(recs), rr);
            } else {
                std::vector<std::pair<std::string, std::string>> ps;
                for (const auto& p : pairs) {
                    const auto slash = p.find('/');
                    if (slash == std::string::npos) throw CliError("usage", "--pair expects a/b, got '" + p + "'");
                    ps.emplace_back(p.substr(0, slash), p.substr(slash + 1));
                }
                rep = build_report(std::move(recs), ps, rr);
            }
            emit_report(rep, out_dir);
            out << nlohmann::json{{"runs", rep.runs.size()}, {"increments", rep.increments.size()}, {"out", out_dir}}
                       .dump()
                << '\n';
        }
    } catch (const CliError& e) {
        return fail(e.kind, e.what(), e.kind == "usage" ? 2 : 1);
    } catch (const DatasetFormatError& e) {
        return fail("format", e.what(), 1);
    } catch (const AlreadyInjectedError& e) {
        return fail("already-injected", e.what(), 1);
    } catch (const std::invalid_argument& e) {
        return fail("invalid-argument", e.what(), 1);
    } catch (const std::exception& e) {
        return fail("runtime", e.what(), 1);
    }
    return 0;
}

}  // namespace mmr::cli
