#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "mmr/fli_attack.hpp"
#include "mmr/trainer.hpp"

using namespace mmr;

namespace {

struct Split {
    Dataset train, test;
};

Split data(std::size_t n, std::uint64_t seed = 31) {
    GeneratorSpec s;
    s.n = n;
    s.seed = seed;
    auto [a, b] = split(generate(s), 0.75, 2);
    return {std::move(a), std::move(b)};
}

RunConfig config(Method m, int epochs) {
    RunConfig c;
    c.method = m;
    c.epochs = epochs;
    c.seed = 5;
    return c;
}

nlohmann::json trace(const std::vector<MetricsSnapshot>& s) { return s; }

double train_accuracy(Trainer<float>& tr) {
    return accuracy(argmax_classes(predict_proba_dataset(tr.model(), tr.train_set())), tr.train_set().labels_true);
}

}  // namespace

TEST(Omega, Schedule) {
    EXPECT_DOUBLE_EQ(omega(0.03, 0), 0.0);
    EXPECT_DOUBLE_EQ(omega(0.03, 10), 0.3);
    EXPECT_DOUBLE_EQ(omega(0.03, 40), 1.0);
    double prev = 0;
    for (int t = 0; t < 60; ++t) {
        const double w = omega(0.03, t);
        EXPECT_GE(w, prev);
        EXPECT_LE(w, 1.0);
        prev = w;
    }
    EXPECT_THROW(omega(0.0, 3), std::invalid_argument);
    EXPECT_THROW(omega(-0.1, 3), std::invalid_argument);
}

TEST(CorrectLabels, HandCases) {
    std::vector<SoftLabel> y{{0.2, 0.8}};
    const std::vector<int> stable{kStable}, unstable{kUnstable};
    correct_labels(y, stable, stable, 0.0);
    EXPECT_EQ(y[0], (SoftLabel{0.2, 0.8}));
    correct_labels(y, stable, stable, 1.0);
    EXPECT_DOUBLE_EQ(y[0].p_stable, 1.0);
    EXPECT_DOUBLE_EQ(y[0].p_unstable, 0.0);

    std::vector<SoftLabel> z{{0, 1}};
    correct_labels(z, stable, unstable, 0.5);
    EXPECT_DOUBLE_EQ(z[0].p_stable, 0.25);
    EXPECT_DOUBLE_EQ(z[0].p_unstable, 0.75);
}

TEST(CorrectLabels, StaysOnSimplexAndSkipsPinned) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    std::bernoulli_distribution coin(0.5);
    std::vector<SoftLabel> y(200);
    for (auto& l : y) {
        const double a = u(rng);
        l = {a, 1 - a};
    }
    std::vector<int> yc(200), yclu(200);
    std::vector<std::uint8_t> pinned(200);
    for (std::size_t i = 0; i < 200; ++i) {
        yc[i] = coin(rng);
        yclu[i] = coin(rng);
        pinned[i] = i % 7 == 0;
    }
    const auto before = y;
    for (int t = 0; t < 50; ++t) {
        correct_labels(y, yc, yclu, omega(0.03, t), pinned);
        for (std::size_t i = 0; i < 200; ++i) {
            ASSERT_TRUE(y[i].valid());
            if (pinned[i]) {
                ASSERT_EQ(y[i], before[i]);
            }
        }
    }
    const std::vector<int> short_pred(3);
    EXPECT_THROW(correct_labels(y, short_pred, yclu, 0.1), std::invalid_argument);
}

TEST(AlignClusters, MajorityAgreementAndTies) {
    bool swapped = false;
    const std::vector<int> yc{0, 0, 1, 1};
    EXPECT_EQ(align_clusters(std::vector<int>{0, 0, 1, 0}, yc, swapped), (std::vector<int>{0, 0, 1, 0}));
    EXPECT_FALSE(swapped);
    EXPECT_EQ(align_clusters(std::vector<int>{1, 1, 0, 1}, yc, swapped), (std::vector<int>{0, 0, 1, 0}));
    EXPECT_TRUE(swapped);
    // tie keeps the previous permutation
    EXPECT_EQ(align_clusters(std::vector<int>{0, 1, 0, 1}, yc, swapped), (std::vector<int>{1, 0, 1, 0}));
    EXPECT_TRUE(swapped);
    swapped = false;
    EXPECT_EQ(align_clusters(std::vector<int>{0, 1, 0, 1}, yc, swapped), (std::vector<int>{0, 1, 0, 1}));
}

TEST(RunConfigTest, JsonAndValidation) {
    auto c = config(Method::mmr_hil, 12);
    c.hil.rho = 0.01;
    c.model.batch_size = 32;
    const nlohmann::json j = c;
    EXPECT_EQ(j["method"], "mmr-hil");
    const auto back = j.get<RunConfig>();
    EXPECT_EQ(nlohmann::json(back), j);
    EXPECT_EQ(parse_method("baseline-ce"), Method::baseline_ce);
    EXPECT_THROW(parse_method("fcn"), std::invalid_argument);
    c.epochs = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    auto d = data(40);
    EXPECT_THROW(Trainer<float>(config(Method::mmr_hil, 1), d.train, d.test), std::invalid_argument);
}

TEST(TrainerPasses, ClassificationReachesHighTrainAccuracyOnCleanData) {
    auto d = data(1200);
    Trainer<float> tr(config(Method::mmr, 20), d.train, d.test);
    double best = 0;
    for (int t = 0; t < 20 && best < 95.0; ++t) {
        tr.train_epoch_classification(t);
        best = std::max(best, train_accuracy(tr));
    }
    EXPECT_GE(best, 95.0);
}

TEST(TrainerPasses, AlphaOneZeroFreezesClassifier) {
    auto d = data(200);
    auto c = config(Method::mmr, 1);
    c.model.alpha1 = 0;
    Trainer<float> tr(c, d.train, d.test);
    std::vector<Tensor<float>> before;
    for (auto* p : tr.model().classifier().parameters()) before.push_back(p->value);
    tr.train_epoch_classification(0);
    const auto after = tr.model().classifier().parameters();
    for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(after[k]->value, before[k]);
}

TEST(TrainerPasses, ClusteringPass) {
    auto d = data(400);
    {
        auto c = config(Method::mmr, 1);
        c.model.alpha2 = 0;
        Trainer<float> tr(c, d.train, d.test);
        tr.train_epoch_classification(0);
        tr.initialize_clustering();
        const auto centers = tr.model().clustering().centers().value;
        tr.train_epoch_clustering(tr.refresh_target(), 0);
        EXPECT_EQ(tr.model().clustering().centers().value, centers);
    }
    {
        auto c = config(Method::mmr, 1);
        c.model.learning_rate = 2e-4;
        Trainer<float> tr(c, d.train, d.test);
        tr.train_epoch_classification(0);
        tr.initialize_clustering();
        const auto target = tr.refresh_target();
        const auto kl = [&] {
            const auto q = tr.model().clustering().forward(embed_dataset(tr.model(), tr.train_set()));
            for (std::size_t i = 0; i < q.dim(0); ++i) EXPECT_NEAR(q.at(i, 0) + q.at(i, 1), 1.0, 1e-5);
            return kl_clustering_loss(q, target);
        };
        const double start = kl();
        tr.train_epoch_clustering(target, 0);
        EXPECT_LT(kl(), start);
    }
}

TEST(TrainerRun, SameSeedSameTrace) {
    auto d = data(300);
    d.train = inject(d.train, {NoiseKind::sym, 0.3, 1});
    const auto a = Trainer<float>(config(Method::mmr, 4), d.train, d.test).run();
    const auto b = Trainer<float>(config(Method::mmr, 4), d.train, d.test).run();
    EXPECT_EQ(trace(a.snapshots), trace(b.snapshots));
    EXPECT_EQ(a.final_train, b.final_train);
    auto other = config(Method::mmr, 4);
    other.seed = 6;
    const auto c = Trainer<float>(other, d.train, d.test).run();
    EXPECT_NE(trace(a.snapshots), trace(c.snapshots));
}

TEST(TrainerRun, SnapshotsFollowSchedule) {
    auto d = data(300);
    d.train = inject(d.train, {NoiseKind::sym, 0.2, 1});
    const auto r = Trainer<float>(config(Method::mmr, 5), d.train, d.test).run();
    ASSERT_EQ(r.snapshots.size(), 5u);
    for (int t = 0; t < 5; ++t) {
        EXPECT_EQ(r.snapshots[t].epoch, t);
        EXPECT_DOUBLE_EQ(r.snapshots[t].omega, omega(0.03, t));
        EXPECT_TRUE(r.snapshots[t].correction.overall.has_value());
        EXPECT_EQ(r.snapshots[t].queries_total, 0u);
    }
    EXPECT_EQ(r.annotator, "none");
    for (const auto& l : r.final_train.labels_train) EXPECT_TRUE(l.valid());
    ASSERT_TRUE(r.model);
    EXPECT_TRUE(r.model->clustering().initialized());
}

TEST(TrainerRun, BaselineLeavesLabelsAlone) {
    auto d = data(300);
    d.train = inject(d.train, {NoiseKind::sym, 0.3, 1});
    const auto r = Trainer<float>(config(Method::baseline_ce, 3), d.train, d.test).run();
    EXPECT_EQ(r.final_train.labels_train, d.train.labels_train);
    EXPECT_FALSE(r.model->clustering().initialized());
    EXPECT_DOUBLE_EQ(*r.snapshots.back().correction.overall, 0.0);
}

TEST(TrainerRun, TruthNeverDrivesTraining) {
    // scrambling labels_true changes only the metrics, never the trajectory of labels_train
    auto d = data(300);
    d.train = inject(d.train, {NoiseKind::sym, 0.3, 1});
    auto scrambled = d.train;
    std::reverse(scrambled.labels_true.begin(), scrambled.labels_true.end());
    const auto a = Trainer<float>(config(Method::mmr, 3), d.train, d.test).run();
    const auto b = Trainer<float>(config(Method::mmr, 3), scrambled, d.test).run();
    EXPECT_EQ(a.final_train.labels_train, b.final_train.labels_train);
    for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(a.snapshots[t].accuracy, b.snapshots[t].accuracy);
}

TEST(TrainerRun, AnnotatedLabelsArePinnedAndWeighted) {
    auto d = data(600);
    d.train = inject(d.train, {NoiseKind::sym, 0.3, 1});
    auto c = config(Method::mmr_hil, 7);
    c.hil.rho = 0.02;
    OracleAnnotator oracle;
    Trainer<float> tr(c, d.train, d.test, &oracle);
    std::map<std::size_t, SoftLabel> pinned;
    int violations = 0;
    tr.on_status = [&](const TrainerStatus& s) {
        if (s.phase != "epoch-end") return;
        const auto& ds = tr.train_set();
        for (auto& [i, l] : pinned)
            if (!(ds.labels_train[i] == l)) ++violations;
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (ds.annotated[i] && !pinned.count(i)) pinned[i] = ds.labels_train[i];
    };
    const auto r = tr.run();
    EXPECT_EQ(violations, 0);
    ASSERT_FALSE(pinned.empty());
    for (auto& [i, l] : pinned) {
        EXPECT_EQ(l, SoftLabel::one_hot(d.train.labels_true[i]));
        EXPECT_EQ(tr.weights()[i], 3.0f);
    }
    // rounds at epochs 0, 3, 6
    std::set<int> rounds, epochs;
    for (const auto& q : r.queries) {
        rounds.insert(q.round);
        epochs.insert(q.issued_epoch);
        EXPECT_EQ(q.source, "oracle");
    }
    EXPECT_EQ(epochs, (std::set<int>{0, 3, 6}));
    EXPECT_EQ(rounds, (std::set<int>{1, 2, 3}));
    std::set<std::size_t> ids;
    for (const auto& q : r.queries) ids.insert(q.id);
    EXPECT_EQ(ids.size(), r.queries.size());
    EXPECT_EQ(r.annotator, "oracle");
    const auto& last = r.snapshots.back();
    EXPECT_EQ(last.queries_total, r.queries.size());
    EXPECT_DOUBLE_EQ(last.dup_ratio, double(last.n_dq) / double(last.queries_total));
}

TEST(TrainerRun, DivergenceAbortsWithDiagnostics) {
    auto d = data(200);
    auto c = config(Method::mmr, 2);
    c.model.learning_rate = 1e30;
    try {
        Trainer<float>(c, d.train, d.test).run();
        FAIL() << "expected NonFiniteError";
    } catch (const NonFiniteError& e) {
        EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
    }
}

TEST(ScalingProbe, EqualSizesAndGrowth) {
    auto d = data(1100);
    const std::vector<std::size_t> same{200, 200};
    auto pts = scaling_probe<float>(d.train, d.test, same, config(Method::mmr, 1), 2);
    ASSERT_EQ(pts.size(), 2u);
    EXPECT_NEAR(pts[1].seconds / pts[0].seconds, 1.0, 0.35);
    const std::vector<std::size_t> grow{200, 400, 800};
    pts = scaling_probe<float>(d.train, d.test, grow, config(Method::mmr, 1), 2);
    EXPECT_LE(pts[0].seconds, pts[1].seconds);
    EXPECT_LE(pts[1].seconds, pts[2].seconds);
    const std::vector<std::size_t> too_big{5000};
    EXPECT_THROW(scaling_probe<float>(d.train, d.test, too_big, config(Method::mmr, 1)), std::invalid_argument);
}
