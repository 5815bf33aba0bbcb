#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmr/dataset_io.hpp"
#include "mmr/hil.hpp"
#include "mmr/metrics.hpp"
#include "mmr/model.hpp"
#include "mmr/trainer.hpp"

namespace mmr {

inline constexpr int kRunFormatVersion = 1;

// ----- model persistence -------------------------------------------------
// model.json holds the config, parameter shapes and the clustering state;
// model.bin holds every parameter as little-endian float32 in parameters() order.

template <typename T>
void save_model(MmrModel<T>& m, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json meta;
    meta["format_version"] = kRunFormatVersion;
    meta["config"] = m.config();
    nlohmann::json params = nlohmann::json::array();
    std::vector<float> flat;
    for (auto* p : m.parameters()) {
        params.push_back({{"name", p->name}, {"shape", p->value.shape()}});
        for (T v : p->value.values()) flat.push_back(static_cast<float>(v));
    }
    meta["parameters"] = params;
    const bool clu = m.clustering().initialized();
    meta["clustering"] = nullptr;
    if (clu) {
        const auto s = m.clustering().state();
        std::vector<double> mean(s.global_mean.values().begin(), s.global_mean.values().end());
        meta["clustering"] = {{"global_mean", mean}, {"fuzzifier", s.fuzzifier}};
    }
    io::open_out(dir / "model.json") << meta.dump(2) << '\n';
    auto out = io::open_out(dir / "model.bin", std::ios::binary);
    io::write_f32_le(out, flat.data(), flat.size());
}

template <typename T>
MmrModel<T> load_model(const std::filesystem::path& dir) {
    nlohmann::json meta;
    {
        auto in = io::open_in(dir / "model.json");
        try {
            in >> meta;
        } catch (const nlohmann::json::exception& e) {
            throw DatasetFormatError("model.json: " + std::string(e.what()));
        }
    }
    const auto cfg = meta.at("config").get<ModelConfig>();
    MmrModel<T> m(cfg, 0);
    const auto& cj = meta.at("clustering");
    if (!cj.is_null()) {
        const auto mean = cj.at("global_mean").get<std::vector<double>>();
        ClusterState<T> s;
        s.centers = Tensor<T>({2, mean.size()});
        s.global_mean = Tensor<T>({mean.size()});
        for (std::size_t i = 0; i < mean.size(); ++i) s.global_mean.data()[i] = static_cast<T>(mean[i]);
        s.fuzzifier = cj.at("fuzzifier").get<double>();
        m.init_clustering(s);
    }
    const auto flat = io::read_f32_le(dir / "model.bin");
    const auto params = m.parameters();
    const auto& pj = meta.at("parameters");
    if (pj.size() != params.size())
        throw DatasetFormatError("model.json lists " + std::to_string(pj.size()) + " parameters, model has " +
                                 std::to_string(params.size()));
    std::size_t off = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        const auto shape = pj[k].at("shape").get<Shape>();
        if (shape != params[k]->value.shape())
            throw DatasetFormatError("parameter " + std::to_string(k) + " (" + params[k]->name + "): stored shape " +
                                     shape_str(shape) + " != " + shape_str(params[k]->value.shape()));
        const std::size_t n = shape_size(shape);
        if (off + n > flat.size())
            throw DatasetFormatError("model.bin truncated at parameter " + std::to_string(k) + " (float offset " +
                                     std::to_string(off) + ")");
        T* dst = params[k]->value.data();
        for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(flat[off + i]);
        off += n;
    }
    if (off != flat.size())
        throw DatasetFormatError("model.bin has " + std::to_string(flat.size() - off) + " trailing floats");
    return m;
}

// ----- run directory -----------------------------------------------------

template <typename T>
nlohmann::json run_json(const RunResult<T>& r) {
    nlohmann::json j;
    j["format_version"] = kRunFormatVersion;
    j["config"] = r.config;
    j["annotator"] = r.annotator;
    j["train_provenance"] = r.final_train.provenance;
    j["convergence"] = {{"epoch", r.convergence.epoch},
                        {"truncated", r.convergence.truncated},
                        {"band", r.config.band},
                        {"patience", r.config.patience},
                        {"definition",
                         "smallest epoch within band of the run maximum that stays in band for patience epochs"}};
    j["clustering_init"] = {
        {"iterations", r.init_iterations}, {"converged", r.init_converged}, {"reseeded", r.init_reseeded}};
    j["snapshots"] = r.snapshots;
    return j;
}

struct RunWriteOptions {
    bool embeddings = false;
    bool model = true;
};

inline void write_labels_csv(const std::filesystem::path& path, std::span<const SoftLabel> labels) {
    auto out = io::open_out(path);
    out << "index,p_stable,p_unstable\n";
    for (std::size_t i = 0; i < labels.size(); ++i)
        out << i << ',' << io::fmt_double(labels[i].p_stable) << ',' << io::fmt_double(labels[i].p_unstable) << '\n';
}

template <typename T>
void write_run(RunResult<T>& r, const std::filesystem::path& dir, const RunWriteOptions& opt = {}) {
    std::filesystem::create_directories(dir);
    io::open_out(dir / "run.json") << run_json(r).dump(2) << '\n';
    write_labels_csv(dir / "labels_final.csv", r.final_train.labels_train);
    write_transcript(dir / "queries.csv", r.queries);
    if (r.model && opt.model) save_model(*r.model, dir / "model");
    if (r.model && opt.embeddings) {
        const auto z = embed_dataset(*r.model, r.final_train);
        std::vector<float> f(z.values().begin(), z.values().end());
        auto out = io::open_out(dir / "embeddings.bin", std::ios::binary);
        io::write_f32_le(out, f.data(), f.size());
        nlohmann::json meta = {{"N", z.dim(0)},
                               {"Z_e", z.dim(1)},
                               {"dtype", "float32"},
                               {"endianness", "little"},
                               {"layout", "row-major N x Z_e"},
                               {"labels_true", r.final_train.labels_true}};
        io::open_out(dir / "embeddings_meta.json") << meta.dump(2) << '\n';
    }
}

/// The parts of run.json the report needs.
struct RunRecord {
    std::string run_id;
    RunConfig config;
    std::string attack_kind = "none";
    double ratio = 0.0;
    std::vector<MetricsSnapshot> snapshots;
    ConvergencePoint convergence;
};

inline RunRecord record_from_json(const nlohmann::json& j, std::string run_id) {
    RunRecord r;
    r.run_id = std::move(run_id);
    r.config = j.at("config").get<RunConfig>();
    r.snapshots = j.at("snapshots").get<std::vector<MetricsSnapshot>>();
    if (r.snapshots.empty()) throw std::invalid_argument("run " + r.run_id + " has no snapshots");
    r.convergence = {j.at("convergence").at("epoch").get<int>(), j.at("convergence").at("truncated").get<bool>()};
    const auto& prov = j.value("train_provenance", nlohmann::json::object());
    if (prov.contains("attack")) {
        r.attack_kind = prov["attack"].at("kind").get<std::string>();
        r.ratio = prov["attack"].at("ratio").get<double>();
    }
    return r;
}

inline RunRecord read_run(const std::filesystem::path& dir) {
    auto in = io::open_in(dir / "run.json");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DatasetFormatError((dir / "run.json").string() + ": " + e.what());
    }
    return record_from_json(j, dir.filename().string());
}

}  // namespace mmr
