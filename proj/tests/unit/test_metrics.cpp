#include <gtest/gtest.h>

#include "mpox/eval/cross_validation.hpp"
#include "oracles.hpp"

using namespace mpox;

namespace {

void random_labels(Rng& rng, int classes, std::vector<int>& truth, std::vector<int>& pred) {
    const int n = rng.uniform_int(1, 60);
    truth.resize(static_cast<std::size_t>(n));
    pred.resize(static_cast<std::size_t>(n));
    const double skill = rng.uniform01();
    for (int i = 0; i < n; ++i) {
        truth[static_cast<std::size_t>(i)] = rng.uniform_int(0, classes - 1);
        pred[static_cast<std::size_t>(i)] =
            rng.uniform01() < skill ? truth[static_cast<std::size_t>(i)] : rng.uniform_int(0, classes - 1);
    }
}

}  // namespace

TEST(Metrics, MatchBruteForceOracle) {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const TaskKind task = trial % 2 ? TaskKind::multiclass : TaskKind::binary;
        const int k = class_count(task);
        std::vector<int> truth, pred;
        random_labels(rng, k, truth, pred);
        const auto m = compute_metrics(confusion(truth, pred, k), task);
        const auto o = mpoxtest::brute_force_metrics(truth, pred, k);
        ASSERT_NEAR(m.accuracy, o.accuracy, 1e-12) << trial;
        ASSERT_NEAR(m.sensitivity, o.sensitivity, 1e-12) << trial;
        ASSERT_NEAR(m.specificity, o.specificity, 1e-12) << trial;
        ASSERT_NEAR(m.precision, o.precision, 1e-12) << trial;
        ASSERT_NEAR(m.f1, o.f1, 1e-12) << trial;
    }
}

TEST(Metrics, HandWorkedBinaryExample) {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = 8;  // tp
    cm.at(0, 1) = 2;  // fn
    cm.at(1, 0) = 1;  // fp
    cm.at(1, 1) = 29;
    const auto m = compute_metrics(cm, TaskKind::binary);
    EXPECT_DOUBLE_EQ(m.accuracy, 37.0 / 40.0);
    EXPECT_DOUBLE_EQ(m.sensitivity, 0.8);
    EXPECT_DOUBLE_EQ(m.specificity, 29.0 / 30.0);
    EXPECT_DOUBLE_EQ(m.precision, 8.0 / 9.0);
    EXPECT_NEAR(m.f1, 2 * 0.8 * (8.0 / 9.0) / (0.8 + 8.0 / 9.0), 1e-15);
    EXPECT_TRUE(m.degenerate.empty());
}

TEST(Metrics, ZeroDenominatorsAreFlagged) {
    // nothing predicted as Mpox and no Mpox present
    ConfusionMatrix cm(2);
    cm.at(1, 1) = 5;
    const auto m = compute_metrics(cm, TaskKind::binary);
    EXPECT_EQ(m.sensitivity, 0.0);
    EXPECT_EQ(m.precision, 0.0);
    EXPECT_FALSE(m.degenerate.empty());
    EXPECT_THROW(compute_metrics(ConfusionMatrix(2), TaskKind::binary), Error);
    EXPECT_THROW(compute_metrics(ConfusionMatrix(4), TaskKind::binary), Error);
}

TEST(Metrics, ConfusionValidatesInput) {
    EXPECT_THROW(confusion({0, 1}, {0}, 2), Error);
    EXPECT_THROW(confusion({0, 2}, {0, 1}, 2), Error);
    const auto cm = confusion({0, 1, 1, 0}, {0, 1, 0, 0}, 2);
    EXPECT_EQ(cm.at(0, 0), 2);
    EXPECT_EQ(cm.at(1, 0), 1);
    EXPECT_EQ(cm.total(), 4);
}

TEST(Metrics, AggregateUsesSampleStd) {
    MetricSet a, b, c;
    a.accuracy = 0.8;
    b.accuracy = 0.9;
    c.accuracy = 1.0;
    const auto s = aggregate({a, b, c});
    EXPECT_NEAR(s.mean.accuracy, 0.9, 1e-15);
    EXPECT_NEAR(s.std.accuracy, 0.1, 1e-12);
    const auto one = aggregate({a});
    EXPECT_TRUE(one.single_fold);
    EXPECT_EQ(one.std.accuracy, 0.0);
}

TEST(Metrics, ReportRoundTripKeepsConfusionMatrices) {
    CVReport r;
    r.task = TaskKind::multiclass;
    r.backbone = "MobileNetV3Small";
    r.k = 2;
    r.pooled = ConfusionMatrix(4);
    Rng rng(8);
    for (int f = 0; f < 2; ++f) {
        FoldResult fr;
        fr.fold = f;
        std::vector<int> truth, pred;
        random_labels(rng, 4, truth, pred);
        fr.confusion = confusion(truth, pred, 4);
        fr.metrics = compute_metrics(fr.confusion, r.task);
        r.pooled += fr.confusion;
        r.folds.push_back(fr);
    }
    const auto back = cv_report_from_json(to_json(r));
    EXPECT_EQ(back.pooled, r.pooled);
    ASSERT_EQ(back.folds.size(), 2u);
    EXPECT_EQ(back.folds[1].confusion, r.folds[1].confusion);
    EXPECT_DOUBLE_EQ(back.folds[0].metrics.f1, r.folds[0].metrics.f1);
    EXPECT_THROW(confusion_from_json(nlohmann::json::parse("[[1,2],[3]]")), Error);
}
