#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpox/core/error.hpp"
#include "mpox/data/labels.hpp"

namespace mpox {

/// counts[true][predicted].
struct ConfusionMatrix {
    int n_classes = 0;
    std::vector<std::vector<long>> counts;

    explicit ConfusionMatrix(int n = 0) : n_classes(n), counts(static_cast<std::size_t>(n), std::vector<long>(static_cast<std::size_t>(n), 0)) {}

    long at(int t, int p) const { return counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]; }
    long& at(int t, int p) { return counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]; }

    long total() const {
        long n = 0;
        for (const auto& row : counts)
            for (long v : row) n += v;
        return n;
    }

    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        require(o.n_classes == n_classes, ErrorCode::invalid_argument, "confusion matrix size mismatch");
        for (int t = 0; t < n_classes; ++t)
            for (int p = 0; p < n_classes; ++p) at(t, p) += o.at(t, p);
        return *this;
    }

    bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& predicted, int n_classes) {
    require(n_classes >= 1, ErrorCode::invalid_argument, "n_classes must be >= 1");
    require(truth.size() == predicted.size(), ErrorCode::invalid_argument, "label sequences differ in length");
    ConfusionMatrix cm(n_classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        require(truth[i] >= 0 && truth[i] < n_classes && predicted[i] >= 0 && predicted[i] < n_classes,
                ErrorCode::out_of_range, "label code out of range at position " + std::to_string(i));
        ++cm.at(truth[i], predicted[i]);
    }
    return cm;
}

inline nlohmann::json to_json(const ConfusionMatrix& cm) { return cm.counts; }

inline ConfusionMatrix confusion_from_json(const nlohmann::json& j) {
    ConfusionMatrix cm(static_cast<int>(j.size()));
    for (int t = 0; t < cm.n_classes; ++t) {
        const auto& row = j.at(static_cast<std::size_t>(t));
        require(row.size() == j.size(), ErrorCode::parse, "confusion matrix is not square");
        for (int p = 0; p < cm.n_classes; ++p) cm.at(t, p) = row.at(static_cast<std::size_t>(p)).get<long>();
    }
    return cm;
}

struct MetricSet {
    double accuracy = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
    /// Metrics whose denominator was zero (reported as 0), e.g. "precision[2]".
    std::vector<std::string> degenerate;
};

inline nlohmann::json to_json(const MetricSet& m) {
    return {{"accuracy", m.accuracy}, {"sensitivity", m.sensitivity}, {"specificity", m.specificity},
            {"precision", m.precision}, {"f1", m.f1}, {"degenerate", m.degenerate}};
}

namespace detail {
inline double safe_ratio(double num, double den, const std::string& name, std::vector<std::string>& flags) {
    if (den == 0.0) {
        flags.push_back(name);
        return 0.0;
    }
    return num / den;
}

struct OneVsAll {
    double sensitivity, specificity, precision, f1;
};

inline OneVsAll one_vs_all(double tp, double fn, double fp, double tn, const std::string& suffix,
                           std::vector<std::string>& flags) {
    OneVsAll r{};
    r.sensitivity = safe_ratio(tp, tp + fn, "sensitivity" + suffix, flags);
    r.specificity = safe_ratio(tn, tn + fp, "specificity" + suffix, flags);
    r.precision = safe_ratio(tp, tp + fp, "precision" + suffix, flags);
    r.f1 = safe_ratio(2.0 * r.precision * r.sensitivity, r.precision + r.sensitivity, "f1" + suffix, flags);
    return r;
}
}  // namespace detail

/// Binary: positive class is Mpox (code 0). Multiclass: one-vs-all per class,
/// macro-averaged.
inline MetricSet compute_metrics(const ConfusionMatrix& cm, TaskKind task) {
    require(cm.n_classes == class_count(task), ErrorCode::invalid_argument, "confusion matrix does not match task");
    const long n = cm.total();
    require(n >= 1, ErrorCode::invalid_argument, "confusion matrix is empty");
    MetricSet m;
    long trace = 0;
    for (int c = 0; c < cm.n_classes; ++c) trace += cm.at(c, c);
    m.accuracy = static_cast<double>(trace) / static_cast<double>(n);
    if (task == TaskKind::binary) {
        const double tp = static_cast<double>(cm.at(0, 0)), fn = static_cast<double>(cm.at(0, 1));
        const double fp = static_cast<double>(cm.at(1, 0)), tn = static_cast<double>(cm.at(1, 1));
        const auto r = detail::one_vs_all(tp, fn, fp, tn, "", m.degenerate);
        m.sensitivity = r.sensitivity;
        m.specificity = r.specificity;
        m.precision = r.precision;
        m.f1 = r.f1;
        return m;
    }
    const int k = cm.n_classes;
    for (int c = 0; c < k; ++c) {
        double row = 0.0, col = 0.0;
        for (int j = 0; j < k; ++j) {
            row += static_cast<double>(cm.at(c, j));
            col += static_cast<double>(cm.at(j, c));
        }
        const double tp = static_cast<double>(cm.at(c, c));
        const double fn = row - tp, fp = col - tp;
        const double tn = static_cast<double>(n) - tp - fn - fp;
        const auto r = detail::one_vs_all(tp, fn, fp, tn, "[" + std::to_string(c) + "]", m.degenerate);
        m.sensitivity += r.sensitivity / k;
        m.specificity += r.specificity / k;
        m.precision += r.precision / k;
        m.f1 += r.f1 / k;
    }
    return m;
}

struct MetricSummary {
    MetricSet mean;
    MetricSet std;
    bool single_fold = false;  ///< std reported as 0 by convention
};

inline MetricSummary aggregate(const std::vector<MetricSet>& folds) {
    require(!folds.empty(), ErrorCode::invalid_argument, "cannot aggregate zero folds");
    MetricSummary s;
    const double n = static_cast<double>(folds.size());
    auto field = [](MetricSet& m, int i) -> double& {
        switch (i) {
            case 0: return m.accuracy;
            case 1: return m.sensitivity;
            case 2: return m.specificity;
            case 3: return m.precision;
            default: return m.f1;
        }
    };
    for (int i = 0; i < 5; ++i) {
        double sum = 0.0;
        for (auto f : folds) sum += field(f, i);
        const double mean = sum / n;
        double ss = 0.0;
        for (auto f : folds) ss += (field(f, i) - mean) * (field(f, i) - mean);
        field(s.mean, i) = mean;
        field(s.std, i) = folds.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    }
    s.single_fold = folds.size() == 1;
    if (s.single_fold) s.std.degenerate.push_back("single_fold");
    return s;
}

}  // namespace mpox
