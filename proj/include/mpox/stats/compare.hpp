#pragma once

#include <cmath>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpox/core/error.hpp"
#include "mpox/eval/cross_validation.hpp"
#include "mpox/stats/tests.hpp"

namespace mpox::stats {

/// Per-fold scores of one model/config; provenance names it in reports.
struct SampleVector {
    std::string label;
    std::vector<double> scores;
    std::vector<std::vector<std::string>> fold_test_ids;  ///< optional, for alignment checks
};

inline SampleVector sample_from_report(const CVReport& r, const std::string& label = {}) {
    SampleVector s;
    s.label = label.empty() ? r.backbone + (r.augmentation ? "+aug" : "") : label;
    for (const auto& f : r.folds) {
        s.scores.push_back(f.metrics.accuracy);
        auto ids = f.test_ids;
        std::sort(ids.begin(), ids.end());
        s.fold_test_ids.push_back(std::move(ids));
    }
    return s;
}

inline void require_aligned(const std::vector<SampleVector>& samples) {
    require(!samples.empty(), ErrorCode::invalid_argument, "no samples to compare");
    const auto& ref = samples.front();
    for (const auto& s : samples) {
        require(s.scores.size() == ref.scores.size(), ErrorCode::invalid_argument,
                "misaligned folds: " + s.label + " has " + std::to_string(s.scores.size()) + " scores, " + ref.label +
                    " has " + std::to_string(ref.scores.size()));
        if (!s.fold_test_ids.empty() && !ref.fold_test_ids.empty())
            require(s.fold_test_ids == ref.fold_test_ids, ErrorCode::invalid_argument,
                    "misaligned folds: " + s.label + " and " + ref.label + " were evaluated on different fold plans");
    }
}

enum class Branch { t_test, welch, wilcoxon };

inline const char* to_string(Branch b) {
    switch (b) {
        case Branch::t_test: return "t_test";
        case Branch::welch: return "welch";
        case Branch::wilcoxon: return "wilcoxon";
    }
    return "unknown";
}

struct AugmentationResult {
    std::string label;
    Branch branch = Branch::t_test;
    std::string reason;
    TestResult normality_no_aug, normality_aug;
    std::optional<TestResult> variance;
    TestResult result;
    double mean_delta_pp = 0.0;  ///< mean(aug) - mean(no_aug), percentage points
};

namespace detail {
inline bool passes_normality(const TestResult& r) { return !r.degenerate && r.p_value > kAlpha; }
}  // namespace detail

/// Shapiro-Wilk on both; both p > 0.05 goes to Bartlett and then the pooled t-test
/// (Bartlett p > 0.05) or Welch; otherwise the rank-sum test. A zero-variance sample
/// has no normality p and counts as failing.
inline AugmentationResult compare_augmentation(const SampleVector& no_aug, const SampleVector& aug) {
    require_aligned({no_aug, aug});
    AugmentationResult out;
    out.label = no_aug.label;
    out.normality_no_aug = shapiro_wilk(no_aug.scores);
    out.normality_aug = shapiro_wilk(aug.scores);
    out.mean_delta_pp = 100.0 * (mean(aug.scores) - mean(no_aug.scores));
    std::ostringstream why;
    if (detail::passes_normality(out.normality_no_aug) && detail::passes_normality(out.normality_aug)) {
        out.variance = bartlett(no_aug.scores, aug.scores);
        if (out.variance->p_value > kAlpha) {
            out.branch = Branch::t_test;
            why << "both normal; Bartlett p=" << out.variance->p_value << " > 0.05";
        } else {
            out.branch = Branch::welch;
            why << "both normal; Bartlett p=" << out.variance->p_value << " <= 0.05";
        }
        out.result = t_test_independent(no_aug.scores, aug.scores, out.branch == Branch::t_test);
    } else {
        out.branch = Branch::wilcoxon;
        why << "normality rejected or undefined (Shapiro-Wilk p: ";
        for (const auto* r : {&out.normality_no_aug, &out.normality_aug}) {
            if (r != &out.normality_no_aug) why << ", ";
            if (r->degenerate) why << "degenerate";
            else why << r->p_value;
        }
        why << ")";
        out.result = wilcoxon_rank_sum(no_aug.scores, aug.scores);
    }
    out.reason = why.str();
    return out;
}

struct PairwiseComparison {
    std::string model_a, model_b;
    double mean_delta_pp = 0.0;  ///< mean(a) - mean(b), percentage points
    TestResult result;
};

struct ComparisonReport {
    std::vector<std::string> models;
    std::vector<double> means;
    std::vector<TestResult> normality;  ///< advisory only
    std::optional<TestResult> omnibus;  ///< absent with fewer than 3 models
    std::vector<PairwiseComparison> pairwise;
    std::vector<AugmentationResult> augmentation;

    const PairwiseComparison& pair(const std::string& a, const std::string& b) const {
        for (const auto& p : pairwise)
            if ((p.model_a == a && p.model_b == b) || (p.model_a == b && p.model_b == a)) return p;
        fail(ErrorCode::not_found, "no pairwise comparison " + a + " vs " + b);
    }
};

inline ComparisonReport compare_models(const std::vector<SampleVector>& samples) {
    require(samples.size() >= 2, ErrorCode::invalid_argument, "need at least 2 models to compare");
    require_aligned(samples);
    ComparisonReport rep;
    std::vector<std::vector<double>> groups;
    for (const auto& s : samples) {
        rep.models.push_back(s.label);
        rep.means.push_back(mean(s.scores));
        groups.push_back(s.scores);
        if (s.scores.size() >= 3 && s.scores.size() <= 50) rep.normality.push_back(shapiro_wilk(s.scores));
    }
    if (samples.size() >= 3) rep.omnibus = anova_rm(groups);
    for (auto& p : tukey_hsd(groups))
        rep.pairwise.push_back({rep.models[p.a], rep.models[p.b], 100.0 * p.mean_delta, p.result});
    return rep;
}

inline ComparisonReport compare_models(const std::vector<CVReport>& reports) {
    std::vector<SampleVector> samples;
    for (const auto& r : reports) samples.push_back(sample_from_report(r));
    return compare_models(samples);
}

inline nlohmann::json to_json(const AugmentationResult& a) {
    nlohmann::json j{{"model", a.label},
                     {"branch", to_string(a.branch)},
                     {"reason", a.reason},
                     {"p_value", a.result.p_value},
                     {"significant", a.result.significant},
                     {"mean_delta_pp", a.mean_delta_pp},
                     {"normality", {to_json(a.normality_no_aug), to_json(a.normality_aug)}},
                     {"test", to_json(a.result)}};
    if (a.variance) j["variance"] = to_json(*a.variance);
    return j;
}

inline nlohmann::json to_json(const ComparisonReport& r) {
    nlohmann::json j;
    j["models"] = nlohmann::json::array();
    for (std::size_t i = 0; i < r.models.size(); ++i) j["models"].push_back({{"model", r.models[i]}, {"mean", r.means[i]}});
    j["normality"] = nlohmann::json::array();
    for (const auto& n : r.normality) j["normality"].push_back(to_json(n));
    j["omnibus"] = r.omnibus ? to_json(*r.omnibus) : nlohmann::json();
    j["pairwise"] = nlohmann::json::array();
    for (const auto& p : r.pairwise)
        j["pairwise"].push_back({{"model_a", p.model_a},
                                 {"model_b", p.model_b},
                                 {"mean_delta_pp", p.mean_delta_pp},
                                 {"p_value", p.result.p_value},
                                 {"significant", p.result.significant},
                                 {"q", p.result.statistic}});
    j["augmentation"] = nlohmann::json::array();
    for (const auto& a : r.augmentation) j["augmentation"].push_back(to_json(a));
    return j;
}

/// Short text in the style of a results narrative, e.g.
/// "MobileNetV3Small vs VGG16: -16.5 pp (p=0.012, significant)".
inline std::string narrative(const ComparisonReport& r) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    if (r.omnibus)
        os << "ANOVA-RM: F(" << std::setprecision(0) << r.omnibus->df1 << ", " << r.omnibus->df2 << ") = " << std::setprecision(3)
           << r.omnibus->statistic << ", p = " << r.omnibus->p_value << '\n';
    for (const auto& p : r.pairwise)
        os << p.model_a << " vs " << p.model_b << ": " << std::showpos << std::setprecision(1) << p.mean_delta_pp
           << std::noshowpos << " pp (p=" << std::setprecision(3) << p.result.p_value
           << (p.result.significant ? ", significant)" : ", not significant)") << '\n';
    for (const auto& a : r.augmentation)
        os << a.label << " augmentation: " << std::showpos << std::setprecision(1) << a.mean_delta_pp << std::noshowpos
           << " pp via " << to_string(a.branch) << " (p=" << std::setprecision(3) << a.result.p_value << ")\n";
    return os.str();
}

}  // namespace mpox::stats
