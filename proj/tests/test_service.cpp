#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "mmr/cli.hpp"
#include "mmr/http_service.hpp"

using namespace mmr;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Dataset small_train(std::size_t n = 40) {
    GeneratorSpec s;
    s.n = n;
    s.height = 2;
    s.width = 6;
    s.seed = 4;
    return generate(s);
}

std::vector<QueryItem> items(std::initializer_list<std::size_t> samples, std::size_t first_id = 0) {
    std::vector<QueryItem> out;
    for (auto s : samples) {
        QueryItem q;
        q.id = first_id++;
        q.sample_id = s;
        q.p_false = 0.9;
        out.push_back(q);
    }
    return out;
}

class ServiceTest : public ::testing::Test {
protected:
    void SetUp() override {
        train = small_train();
        service = std::make_unique<AnnotationService>(inbox, board, train, 5.0);
        port = service->start({"127.0.0.1", 0});
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
    }
    void TearDown() override { service->stop(); }

    httplib::Result post_label(std::size_t id, const std::string& body) {
        return client->Post("/api/queries/" + std::to_string(id) + "/label", body, "application/json");
    }

    Dataset train;
    AnnotationInbox inbox;
    StatusBoard board;
    std::unique_ptr<AnnotationService> service;
    int port = 0;
    std::unique_ptr<httplib::Client> client;
};

}  // namespace

TEST(Listen, Parse) {
    EXPECT_EQ(parse_listen("0.0.0.0:9000").host, "0.0.0.0");
    EXPECT_EQ(parse_listen("0.0.0.0:9000").port, 9000);
    EXPECT_EQ(parse_listen(":0").host, "127.0.0.1");
    EXPECT_EQ(parse_listen(":0").port, 0);
    EXPECT_THROW(parse_listen("8080"), std::invalid_argument);
    EXPECT_THROW(parse_listen("h:80x"), std::invalid_argument);
    EXPECT_THROW(parse_listen("h:70000"), std::invalid_argument);
}

TEST_F(ServiceTest, StatusReflectsBoardAndInbox) {
    auto r = client->Get("/api/status");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    auto j = json::parse(r->body);
    EXPECT_EQ(j["epoch"], 0);
    EXPECT_TRUE(j["latest"].is_null());
    EXPECT_EQ(j["pending"]["count"], 0);
    EXPECT_EQ(j["pending"]["round_open"], false);

    MetricsSnapshot snap;
    snap.epoch = 6;
    snap.accuracy = 88.5;
    board.publish({6, "annotation", snap});
    inbox.open_round(items({3, 5}));
    j = json::parse(client->Get("/api/status")->body);
    EXPECT_EQ(j["epoch"], 6);
    EXPECT_EQ(j["phase"], "annotation");
    EXPECT_EQ(j["latest"]["accuracy"], 88.5);
    EXPECT_EQ(j["pending"]["count"], 2);
    EXPECT_EQ(j["pending"]["round_open"], true);
    EXPECT_EQ(j["pending"]["rounds_opened"], 1);
    EXPECT_EQ(j["pending"]["timeout_seconds"], 5.0);
}

TEST_F(ServiceTest, PendingQueriesCarryTrajectories) {
    inbox.open_round(items({7, 2}));
    auto r = client->Get("/api/queries?state=pending");
    ASSERT_TRUE(r);
    ASSERT_EQ(r->status, 200);
    EXPECT_NE(r->get_header_value("Content-Type").find("application/json"), std::string::npos);
    const auto qs = json::parse(r->body)["queries"];
    ASSERT_EQ(qs.size(), 2u);
    EXPECT_EQ(qs[0]["sample_id"], 7);
    EXPECT_EQ(qs[0]["status"], "pending");
    EXPECT_TRUE(qs[0]["label"].is_null());
    const auto& traj = qs[0]["trajectory"];
    EXPECT_EQ(traj["shape"], json({1, 2, 6}));
    ASSERT_EQ(traj["data"].size(), 2u);
    EXPECT_FLOAT_EQ(traj["data"][1][3].get<float>(), train.features[7 * 12 + 6 + 3]);
    EXPECT_TRUE(qs[1].contains("train_label"));

    EXPECT_EQ(client->Get("/api/queries")->status, 200);
    auto bad = client->Get("/api/queries?state=labeled");
    EXPECT_EQ(bad->status, 400);
    EXPECT_EQ(json::parse(bad->body)["error"], "bad-request");
}

TEST_F(ServiceTest, Samples) {
    auto r = client->Get("/api/samples/39");
    ASSERT_EQ(r->status, 200);
    EXPECT_EQ(json::parse(r->body)["id"], 39);
    EXPECT_EQ(client->Get("/api/samples/40")->status, 404);
    EXPECT_EQ(client->Get("/api/samples/-1")->status, 404);
    EXPECT_EQ(json::parse(client->Get("/api/samples/abc")->body)["error"], "not-found");
}

TEST_F(ServiceTest, LabelSubmission) {
    inbox.open_round(items({1, 2, 3}, 10));
    auto ok = post_label(10, R"({"label": "unstable"})");
    ASSERT_EQ(ok->status, 200);
    EXPECT_EQ(json::parse(ok->body)["status"], "labeled");
    EXPECT_EQ(inbox.pending_count(), 2u);
    EXPECT_EQ(json::parse(client->Get("/api/queries")->body)["queries"].size(), 2u);
    EXPECT_EQ(inbox.find(10)->label, kUnstable);
    EXPECT_EQ(inbox.find(10)->source, "human");

    EXPECT_EQ(post_label(10, R"({"label": "stable"})")->status, 409);
    EXPECT_EQ(inbox.find(10)->label, kUnstable);
    EXPECT_EQ(post_label(99, R"({"label": "stable"})")->status, 404);
    EXPECT_EQ(post_label(11, R"({"label": "wobbly"})")->status, 400);
    EXPECT_EQ(post_label(11, "not json")->status, 400);
    EXPECT_EQ(post_label(11, R"({"lbl": "stable"})")->status, 400);
    EXPECT_EQ(inbox.pending_count(), 2u);
    EXPECT_EQ(post_label(11, R"({"label": "stable"})")->status, 200);
    EXPECT_EQ(inbox.pending_count(), 1u);
}

TEST_F(ServiceTest, RacingClientsResolveOnce) {
    inbox.open_round(items({4}));
    std::atomic<int> ok{0}, conflict{0};
    std::vector<std::thread> ts;
    for (int i = 0; i < 6; ++i)
        ts.emplace_back([&, i] {
            httplib::Client c("127.0.0.1", port);
            auto r = c.Post("/api/queries/0/label", i % 2 ? R"({"label":"stable"})" : R"({"label":"unstable"})",
                            "application/json");
            if (r && r->status == 200) ++ok;
            if (r && r->status == 409) ++conflict;
        });
    for (auto& t : ts) t.join();
    EXPECT_EQ(ok, 1);
    EXPECT_EQ(conflict, 5);
}

TEST(ServiceRound, HttpAnswersMatchOracleRun) {
    GeneratorSpec s;
    s.n = 400;
    s.height = 4;
    s.width = 32;
    auto [train, test] = split(generate(s), 0.75, 2);
    train = inject(train, {NoiseKind::sym, 0.3, 6});
    RunConfig c;
    c.method = Method::mmr_hil;
    c.epochs = 7;
    c.hil.rho = 0.02;
    c.hil.timeout_seconds = 60;
    c.model.architecture = Architecture::dense;

    OracleAnnotator oracle;
    const auto ref = Trainer<float>(c, train, test, &oracle).run();

    AnnotationInbox inbox;
    StatusBoard board;
    AnnotationService service(inbox, board, train, c.hil.timeout_seconds);
    const int port = service.start({"127.0.0.1", 0});
    std::atomic<bool> done{false};
    std::atomic<int> answered{0};
    std::thread expert([&] {
        httplib::Client cl("127.0.0.1", port);
        while (!done) {
            auto r = cl.Get("/api/queries?state=pending");
            if (!r || r->status != 200) continue;
            const auto pending = json::parse(r->body);
            for (const auto& q : pending["queries"]) {
                const auto sid = q["sample_id"].get<std::size_t>();
                const json body = {{"label", class_name(train.labels_true[sid])}};
                auto p = cl.Post("/api/queries/" + std::to_string(q["id"].get<std::size_t>()) + "/label",
                                 body.dump(), "application/json");
                if (p && p->status == 200) ++answered;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(5));
        }
    });
    InteractiveAnnotator ann(inbox, c.hil.timeout_seconds, c.hil.timeout_policy);
    Trainer<float> t(c, train, test, &ann);
    std::atomic<int> statuses{0};
    t.on_status = [&](const TrainerStatus& st) {
        board.publish(st);
        ++statuses;
    };
    const auto got = t.run();
    done = true;
    expert.join();
    service.stop();

    ASSERT_FALSE(ref.queries.empty());
    EXPECT_EQ(answered, int(got.queries.size()));
    EXPECT_GT(statuses, 0);
    ASSERT_EQ(got.queries.size(), ref.queries.size());
    for (std::size_t i = 0; i < got.queries.size(); ++i) {
        EXPECT_EQ(got.queries[i].sample_id, ref.queries[i].sample_id);
        EXPECT_EQ(got.queries[i].label, ref.queries[i].label);
        EXPECT_EQ(got.queries[i].source, "human");
    }
    EXPECT_EQ(json(got.snapshots), json(ref.snapshots));
    EXPECT_EQ(got.final_train.labels_train, ref.final_train.labels_train);
}

// ----- command line ---------------------------------------------------------

namespace {

struct CliResult {
    int code;
    std::string out, err;
};

CliResult cli_run(std::vector<std::string> args) {
    args.insert(args.begin(), "mmr");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    std::ostringstream out, err;
    const int code = cli::run(int(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root = fs::temp_directory_path() / "mmr_cli_test";
        fs::remove_all(root);
        fs::create_directories(root);
    }
    static void TearDownTestSuite() { fs::remove_all(root); }
    static std::string at(const std::string& rel) { return (root / rel).string(); }
    static inline fs::path root;
};

}  // namespace

TEST_F(CliTest, Pipeline) {
    auto g = cli_run({"gen-data", "--n", "240", "--seed", "3", "--out", at("data")});
    ASSERT_EQ(g.code, 0) << g.err;
    EXPECT_EQ(json::parse(g.out)["train"], 180);
    EXPECT_EQ(json::parse(g.out)["test"], 60);
    EXPECT_TRUE(fs::exists(at("data/train/features.bin")));

    auto inj = cli_run({"inject", "--data", at("data/train"), "--attack", "asym", "--ratio", "0.3", "--seed", "1",
                        "--out", at("noisy")});
    ASSERT_EQ(inj.code, 0) << inj.err;
    EXPECT_GT(json::parse(inj.out)["flipped"].get<int>(), 0);

    auto again = cli_run({"inject", "--data", at("noisy"), "--ratio", "0.3", "--out", at("twice")});
    EXPECT_EQ(again.code, 1);
    EXPECT_EQ(json::parse(again.err)["error"], "already-injected");

    for (std::string m : {"mmr", "mmr-hil"}) {
        auto t = cli_run({"train", "--train", at("noisy"), "--test", at("data/test"), "--method", m, "--epochs", "4",
                          "--period", "2", "--rho", "0.02", "--out", at("runs/" + m)});
        ASSERT_EQ(t.code, 0) << t.err;
        const auto j = json::parse(t.out);
        EXPECT_EQ(j["method"], m);
        EXPECT_TRUE(fs::exists(at("runs/" + m + "/run.json")));
    }
    // scripted replay of the hil transcript reproduces the run
    auto rep = cli_run({"train", "--train", at("noisy"), "--test", at("data/test"), "--method", "mmr-hil",
                        "--epochs", "4", "--period", "2", "--rho", "0.02", "--annotator", "scripted",
                        "--transcript", at("runs/mmr-hil/queries.csv"), "--out", at("replay")});
    ASSERT_EQ(rep.code, 0) << rep.err;
    const auto snaps = [&](const std::string& d) { return json::parse(std::ifstream(at(d + "/run.json")))["snapshots"]; };
    EXPECT_EQ(snaps("replay"), snaps("runs/mmr-hil"));

    auto ev = cli_run({"eval", "--model", at("runs/mmr"), "--data", at("data/test"), "--out", at("eval")});
    ASSERT_EQ(ev.code, 0) << ev.err;
    const auto run_json = json::parse(std::ifstream(at("runs/mmr/run.json")));
    EXPECT_EQ(json::parse(ev.out)["accuracy"], run_json["snapshots"].back()["accuracy"]);
    EXPECT_TRUE(fs::exists(at("eval/eval.json")));

    auto r = cli_run({"report", "--runs", at("runs/mmr"), at("runs/mmr-hil"), "--out", at("report")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out)["increments"], 1);
    EXPECT_TRUE(fs::exists(at("report/report.csv")));
    auto rp = cli_run({"report", "--runs", at("runs/mmr"), at("runs/mmr-hil"), "--pair", "mmr/mmr-hil", "--out",
                       at("report2")});
    ASSERT_EQ(rp.code, 0) << rp.err;
    auto bad_pair = cli_run({"report", "--runs", at("runs/mmr"), "--pair", "mmr", "--out", at("report3")});
    EXPECT_EQ(bad_pair.code, 2);
    EXPECT_EQ(json::parse(bad_pair.err)["error"], "usage");
}

TEST_F(CliTest, ErrorsAreJsonWithExitCodes) {
    auto none = cli_run({});
    EXPECT_EQ(none.code, 2);
    EXPECT_EQ(json::parse(none.err)["error"], "usage");

    auto missing = cli_run({"gen-data"});
    EXPECT_EQ(missing.code, 2);

    auto nodata = cli_run({"inject", "--data", at("nowhere"), "--out", at("x")});
    EXPECT_EQ(nodata.code, 1);
    EXPECT_EQ(json::parse(nodata.err)["error"], "format");

    std::ofstream(at("bad.json")) << R"({"generatr": {}})";
    auto badcfg = cli_run({"gen-data", "--config", at("bad.json"), "--out", at("y")});
    EXPECT_EQ(badcfg.code, 1);
    EXPECT_EQ(json::parse(badcfg.err)["error"], "config");

    auto badsplit = cli_run({"gen-data", "--n", "100", "--split", "1.5", "--out", at("z")});
    EXPECT_EQ(badsplit.code, 1);
    EXPECT_EQ(json::parse(badsplit.err)["error"], "invalid-argument");

    auto help = cli_run({"--help"});
    EXPECT_EQ(help.code, 0);
    EXPECT_NE(help.out.find("gen-data"), std::string::npos);
}

TEST_F(CliTest, ConfigSectionsApply) {
    std::ofstream(at("cfg.json")) << R"({"generator": {"n": 100, "height": 2, "width": 8}, "split": 0.5,
                                          "attack": {"kind": "sym", "ratio": 0.2, "seed": 9}})";
    auto g = cli_run({"gen-data", "--config", at("cfg.json"), "--out", at("cdata")});
    ASSERT_EQ(g.code, 0) << g.err;
    EXPECT_EQ(json::parse(g.out)["train"], 50);
    auto i1 = cli_run({"inject", "--config", at("cfg.json"), "--data", at("cdata/train"), "--out", at("c1")});
    auto i2 = cli_run({"inject", "--config", at("cfg.json"), "--data", at("cdata/train"), "--out", at("c2")});
    ASSERT_EQ(i1.code, 0) << i1.err;
    EXPECT_EQ(i1.out.substr(0, i1.out.find("\"out\"")), i2.out.substr(0, i2.out.find("\"out\"")));
}
