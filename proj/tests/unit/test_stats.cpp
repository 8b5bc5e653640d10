#include <gtest/gtest.h>

#include "mpox/stats/compare.hpp"
#include "oracles.hpp"

using namespace mpox;
using namespace mpox::stats;

namespace {

const nlohmann::json& oracle() {
    static const nlohmann::json j = mpoxtest::load_stats_oracle(MPOX_TEST_DATA);
    return j;
}

std::vector<double> vec(const nlohmann::json& j) { return j.get<std::vector<double>>(); }

double rel(double ref) { return std::max(1.0, std::abs(ref)); }

SampleVector sample(const std::string& label, std::vector<double> scores) { return {label, std::move(scores), {}}; }

}  // namespace

TEST(StatsOracle, ShapiroWilk) {
    ASSERT_EQ(oracle()["shapiro_wilk"].size(), 20u);
    for (const auto& c : oracle()["shapiro_wilk"]) {
        const auto r = shapiro_wilk(vec(c["x"]));
        EXPECT_NEAR(r.statistic, c["statistic"].get<double>(), 1e-4) << c["x"].size();
        EXPECT_NEAR(r.p_value, c["p_value"].get<double>(), 1e-3) << c["x"].size();
    }
}

TEST(StatsOracle, AnovaRmAndTukey) {
    ASSERT_EQ(oracle()["anova_rm"].size(), 20u);
    for (const auto& c : oracle()["anova_rm"]) {
        const auto groups = c["groups"].get<std::vector<std::vector<double>>>();
        const auto r = anova_rm(groups);
        EXPECT_NEAR(r.statistic, c["F"].get<double>(), 1e-6 * rel(c["F"].get<double>()));
        EXPECT_NEAR(r.p_value, c["p_value"].get<double>(), 1e-6);
        EXPECT_EQ(r.df1, c["df1"].get<double>());
        EXPECT_EQ(r.df2, c["df2"].get<double>());
        const auto pairs = tukey_hsd(groups);
        ASSERT_EQ(pairs.size(), c["tukey"].size());
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto& t = c["tukey"][i];
            EXPECT_EQ(pairs[i].a, t["a"].get<std::size_t>());
            EXPECT_EQ(pairs[i].b, t["b"].get<std::size_t>());
            EXPECT_NEAR(pairs[i].result.statistic, t["q"].get<double>(), 1e-6 * rel(t["q"].get<double>()));
            EXPECT_NEAR(pairs[i].result.p_value, t["p_value"].get<double>(), 1e-3);
        }
    }
}

TEST(StatsOracle, TwoSampleTests) {
    ASSERT_EQ(oracle()["two_sample"].size(), 20u);
    for (const auto& c : oracle()["two_sample"]) {
        const auto x = vec(c["x"]), y = vec(c["y"]);
        const auto t = t_test_independent(x, y, true);
        EXPECT_NEAR(t.statistic, c["t"]["statistic"].get<double>(), 1e-6 * rel(c["t"]["statistic"].get<double>()));
        EXPECT_NEAR(t.p_value, c["t"]["p_value"].get<double>(), 1e-6);
        const auto w = t_test_independent(x, y, false);
        EXPECT_NEAR(w.statistic, c["welch"]["statistic"].get<double>(), 1e-6 * rel(c["welch"]["statistic"].get<double>()));
        EXPECT_NEAR(w.p_value, c["welch"]["p_value"].get<double>(), 1e-6);
        const auto b = bartlett(x, y);
        EXPECT_NEAR(b.statistic, c["bartlett"]["statistic"].get<double>(), 1e-6 * rel(c["bartlett"]["statistic"].get<double>()));
        EXPECT_NEAR(b.p_value, c["bartlett"]["p_value"].get<double>(), 1e-6);
        if (c.contains("wilcoxon")) {
            const auto r = wilcoxon_rank_sum(x, y);
            EXPECT_NEAR(r.statistic, c["wilcoxon"]["statistic"].get<double>(), 1e-9);
            EXPECT_NEAR(r.p_value, c["wilcoxon"]["p_value"].get<double>(), 1e-6);
        }
    }
}

TEST(StatsOracle, RankSumExactAgainstScipy) {
    for (const auto& c : oracle()["rank_sum_exact"]) {
        const auto r = wilcoxon_rank_sum(vec(c["x"]), vec(c["y"]));
        EXPECT_EQ(r.notes, "exact");
        EXPECT_NEAR(r.statistic, c["statistic"].get<double>(), 1e-12);
        EXPECT_NEAR(r.p_value, c["p_value"].get<double>(), 1e-12) << c["x"].size() << "+" << c["y"].size();
    }
}

TEST(Stats, RankSumExactEqualsEnumerationForAllSmallSizes) {
    Rng rng(5);
    for (int nx = 1; nx <= 11; ++nx)
        for (int ny = 1; nx + ny <= 12; ++ny)
            for (int rep = 0; rep < 3; ++rep) {
                std::vector<double> x, y;
                // coarse grid so ties are common
                for (int i = 0; i < nx; ++i) x.push_back(rng.uniform_int(0, 6) / 4.0);
                for (int i = 0; i < ny; ++i) y.push_back(rng.uniform_int(0, 6) / 4.0);
                const auto r = wilcoxon_rank_sum(x, y);
                EXPECT_DOUBLE_EQ(r.p_value, mpoxtest::rank_sum_p_bitmask(x, y)) << nx << "+" << ny;
            }
}

TEST(Stats, KnownSmallValues) {
    EXPECT_NEAR(wilcoxon_rank_sum({1, 2, 3}, {4, 5, 6}).p_value, 0.1, 1e-12);
    const auto sw = shapiro_wilk({0, 0, 0, 0, 0, 1, 1, 1, 1, 1});
    EXPECT_NEAR(sw.statistic, 0.655271, 1e-6);
    EXPECT_NEAR(sw.p_value, 0.000253963, 1e-8);
    EXPECT_NEAR(studentized_range_sf(3.5, 3, 18), 0.0582247, 1e-6);
}

TEST(Stats, DegenerateInputs) {
    const auto sw = shapiro_wilk({0.9, 0.9, 0.9, 0.9});
    EXPECT_TRUE(sw.degenerate);
    EXPECT_TRUE(std::isnan(sw.p_value) || sw.degenerate);
    EXPECT_THROW(shapiro_wilk({1.0, 2.0}), Error);
    EXPECT_THROW(bartlett({1, 1, 1}, {1, 2, 3}), Error);
    const auto t = t_test_independent({1, 1, 1}, {1, 1, 1}, true);
    EXPECT_TRUE(t.degenerate);
    EXPECT_EQ(t.p_value, 1.0);
    const auto same = anova_rm({{0.9, 0.8, 0.7}, {0.9, 0.8, 0.7}, {0.9, 0.8, 0.7}});
    EXPECT_EQ(same.statistic, 0.0);
    EXPECT_EQ(same.p_value, 1.0);
    EXPECT_THROW(anova_rm({{1, 2}, {1, 2}}), Error);
    EXPECT_THROW(anova_rm({{1, 2}, {1, 2, 3}, {1, 2}}), Error);
    EXPECT_THROW(wilcoxon_rank_sum({1.0, std::nan("")}, {2.0}), Error);
}

TEST(Compare, PlantedBetterModelIsTheOnlySignificantPair) {
    Rng rng(11);
    std::vector<SampleVector> samples;
    std::vector<double> fold_effect(10);
    for (auto& f : fold_effect) f = rng.normal(0, 0.02);
    for (int m = 0; m < 5; ++m) {
        std::vector<double> s;
        for (int f = 0; f < 10; ++f) s.push_back(0.85 + (m == 2 ? 0.08 : 0.0) + fold_effect[static_cast<std::size_t>(f)] + rng.normal(0, 0.01));
        samples.push_back(sample("M" + std::to_string(m), s));
    }
    const auto rep = compare_models(samples);
    ASSERT_TRUE(rep.omnibus);
    EXPECT_TRUE(rep.omnibus->significant);
    for (const auto& p : rep.pairwise) {
        const bool involves = p.model_a == "M2" || p.model_b == "M2";
        EXPECT_EQ(p.result.significant, involves) << p.model_a << " vs " << p.model_b << " p=" << p.result.p_value;
    }
    EXPECT_NE(narrative(rep).find("M2"), std::string::npos);
    EXPECT_TRUE(to_json(rep).contains("pairwise"));
}

TEST(Compare, AugmentationDecisionTree) {
    Rng rng(4);
    std::vector<double> a, b, wide;
    for (int i = 0; i < 10; ++i) {
        a.push_back(0.85 + rng.normal(0, 0.02));
        b.push_back(0.88 + rng.normal(0, 0.02));
        wide.push_back(0.88 + rng.normal(0, 0.12));
    }
    const auto eq = compare_augmentation(sample("X", a), sample("X", b));
    ASSERT_TRUE(eq.normality_no_aug.p_value > 0.05 && eq.normality_aug.p_value > 0.05);
    EXPECT_EQ(eq.branch, Branch::t_test);
    ASSERT_TRUE(eq.variance);
    EXPECT_GT(eq.variance->p_value, 0.05);

    const auto uneq = compare_augmentation(sample("X", a), sample("X", wide));
    if (uneq.normality_no_aug.p_value > 0.05 && uneq.normality_aug.p_value > 0.05) {
        EXPECT_EQ(uneq.branch, Branch::welch);
        EXPECT_EQ(uneq.result.test, "welch");
    }

    std::vector<double> skewed{0.95, 0.95, 0.95, 0.95, 0.95, 0.95, 0.95, 0.95, 0.95, 0.5};
    const auto nonnormal = compare_augmentation(sample("X", a), sample("X", skewed));
    EXPECT_EQ(nonnormal.branch, Branch::wilcoxon);
    EXPECT_EQ(nonnormal.result.test, "wilcoxon_rank_sum");

    const auto constant = compare_augmentation(sample("X", a), sample("X", std::vector<double>(10, 0.9)));
    EXPECT_EQ(constant.branch, Branch::wilcoxon);
    EXPECT_NE(constant.reason.find("degenerate"), std::string::npos);
}

TEST(Compare, MisalignedFoldsRejected) {
    auto a = sample("A", {0.8, 0.9, 0.85});
    auto b = sample("B", {0.8, 0.9});
    EXPECT_THROW(compare_models({a, b}), Error);
    b.scores.push_back(0.7);
    a.fold_test_ids = {{"1"}, {"2"}, {"3"}};
    b.fold_test_ids = {{"1"}, {"3"}, {"2"}};
    EXPECT_THROW(compare_models({a, b}), Error);
}
