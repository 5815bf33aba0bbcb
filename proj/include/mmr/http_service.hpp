#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "mmr/dataset.hpp"
#include "mmr/hil.hpp"
#include "mmr/trainer.hpp"

namespace mmr {

/// Latest trainer status, replaced wholesale on each update.
class StatusBoard {
public:
    void publish(const TrainerStatus& s) {
        auto next = std::make_shared<const TrainerStatus>(s);
        std::lock_guard lk(mu_);
        current_ = std::move(next);
    }
    std::shared_ptr<const TrainerStatus> get() const {
        std::lock_guard lk(mu_);
        return current_;
    }

private:
    mutable std::mutex mu_;
    std::shared_ptr<const TrainerStatus> current_ = std::make_shared<const TrainerStatus>();
};

struct ListenAddress {
    std::string host = "127.0.0.1";
    int port = 8080;
};

inline constexpr const char* kListenEnv = "MMR_LISTEN";

/// Parses "host:port" (or just ":port").
inline ListenAddress parse_listen(const std::string& s) {
    const auto colon = s.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("listen address '" + s + "' is not host:port");
    ListenAddress a;
    if (colon > 0) a.host = s.substr(0, colon);
    const std::string port = s.substr(colon + 1);
    try {
        std::size_t used = 0;
        a.port = std::stoi(port, &used);
        if (used != port.size()) throw std::invalid_argument(port);
    } catch (const std::exception&) {
        throw std::invalid_argument("bad port in listen address '" + s + "'");
    }
    if (a.port < 0 || a.port > 65535) throw std::invalid_argument("port out of range in '" + s + "'");
    return a;
}

/// JSON API over the annotation inbox and status board. Handlers only read
/// snapshots and feed the inbox; the sample features are a private copy.
class AnnotationService {
public:
    AnnotationService(AnnotationInbox& inbox, const StatusBoard& status, const Dataset& train,
                      double timeout_seconds = 0.0)
        : inbox_(inbox), status_(status), height_(train.height), width_(train.width), features_(train.features),
          n_(train.size()), timeout_(timeout_seconds) {
        routes();
    }

    ~AnnotationService() { stop(); }

    /// Serves static assets (e.g. a built UI) under "/".
    bool mount_static(const std::string& dir) { return server_.set_mount_point("/", dir); }

    /// Binds and serves on a background thread; returns the bound port.
    int start(const ListenAddress& addr) {
        int port = addr.port;
        if (port == 0) {
            port = server_.bind_to_any_port(addr.host);
        } else if (!server_.bind_to_port(addr.host, port)) {
            port = -1;
        }
        if (port < 0) throw std::runtime_error("cannot listen on " + addr.host + ":" + std::to_string(addr.port));
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port;
    }

    void stop() {
        if (thread_.joinable()) {
            server_.stop();
            thread_.join();
        }
    }

    nlohmann::json sample_json(std::size_t id) const {
        const float* p = features_.data() + id * height_ * width_;
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t h = 0; h < height_; ++h)
            rows.push_back(std::vector<float>(p + h * width_, p + (h + 1) * width_));
        return {{"id", id}, {"shape", {1, height_, width_}}, {"data", rows}};
    }

private:
    static void send(httplib::Response& res, int code, const nlohmann::json& body) {
        res.status = code;
        res.set_content(body.dump(), "application/json; charset=utf-8");
    }
    static void error(httplib::Response& res, int code, const std::string& kind, const std::string& msg) {
        send(res, code, {{"error", kind}, {"message", msg}});
    }

    static std::optional<std::size_t> parse_id(const std::string& s) {
        if (s.empty() || s.size() > 18) return std::nullopt;
        std::size_t v = 0;
        for (char c : s) {
            if (c < '0' || c > '9') return std::nullopt;
            v = v * 10 + static_cast<std::size_t>(c - '0');
        }
        return v;
    }

    void routes() {
        server_.Get("/api/status", [this](const httplib::Request&, httplib::Response& res) {
            const auto s = status_.get();
            nlohmann::json j = {{"epoch", s->epoch},
                                {"phase", s->phase},
                                {"latest", s->latest ? nlohmann::json(*s->latest) : nlohmann::json(nullptr)},
                                {"pending",
                                 {{"count", inbox_.pending_count()},
                                  {"round_open", inbox_.round_open()},
                                  {"rounds_opened", inbox_.rounds_opened()},
                                  {"timeout_seconds", timeout_}}}};
            send(res, 200, j);
        });

        server_.Get("/api/queries", [this](const httplib::Request& req, httplib::Response& res) {
            const std::string state = req.has_param("state") ? req.get_param_value("state") : "pending";
            if (state != "pending") return error(res, 400, "bad-request", "only state=pending is supported");
            nlohmann::json items = nlohmann::json::array();
            for (const auto& q : inbox_.pending()) {
                nlohmann::json j = q;
                j["trajectory"] = sample_json(q.sample_id);
                items.push_back(std::move(j));
            }
            send(res, 200, {{"queries", items}});
        });

        server_.Get(R"(/api/samples/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            const auto id = parse_id(req.matches[1]);
            if (!id || *id >= n_) return error(res, 404, "not-found", "no sample " + std::string(req.matches[1]));
            send(res, 200, sample_json(*id));
        });

        server_.Post(R"(/api/queries/([^/]+)/label)", [this](const httplib::Request& req, httplib::Response& res) {
            const auto id = parse_id(req.matches[1]);
            if (!id) return error(res, 404, "not-found", "no query " + std::string(req.matches[1]));
            int label = 0;
            try {
                const auto body = nlohmann::json::parse(req.body);
                label = parse_class_name(body.at("label").get<std::string>());
            } catch (const std::exception& e) {
                return error(res, 400, "bad-request", std::string("expected {\"label\": \"stable\"|\"unstable\"}: ") +
                                                          e.what());
            }
            switch (inbox_.submit(*id, label)) {
                case AnnotationInbox::Submit::ok:
                    return send(res, 200, {{"id", *id}, {"status", "labeled"}, {"label", class_name(label)}});
                case AnnotationInbox::Submit::not_found:
                    return error(res, 404, "not-found", "no query " + std::to_string(*id));
                case AnnotationInbox::Submit::conflict:
                    return error(res, 409, "conflict", "query " + std::to_string(*id) + " is not pending");
            }
        });
    }

    AnnotationInbox& inbox_;
    const StatusBoard& status_;
    std::size_t height_, width_;
    std::vector<float> features_;
    std::size_t n_;
    double timeout_;
    httplib::Server server_;
    std::thread thread_;
};

}  // namespace mmr
