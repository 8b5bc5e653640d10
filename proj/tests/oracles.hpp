#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance binary. Nothing here calls the library routine it checks.

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mpox/hpo/search_space.hpp"
#include "mpox/model/model.hpp"

namespace mpoxtest {
using namespace mpox;

// --- metrics ----------------------------------------------------------------------

struct BruteMetrics {
    double accuracy = 0, sensitivity = 0, specificity = 0, precision = 0, f1 = 0;
};

/// Count outcomes straight from the label lists, one class at a time.
inline BruteMetrics brute_force_metrics(const std::vector<int>& truth, const std::vector<int>& pred, int classes) {
    auto ratio = [](double a, double b) { return b == 0 ? 0.0 : a / b; };
    BruteMetrics m;
    int hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == pred[i];
    m.accuracy = static_cast<double>(hits) / static_cast<double>(truth.size());
    const std::vector<int> positives = classes == 2 ? std::vector<int>{0} : [&] {
        std::vector<int> v(static_cast<std::size_t>(classes));
        std::iota(v.begin(), v.end(), 0);
        return v;
    }();
    for (int c : positives) {
        double tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            const bool t = truth[i] == c, p = pred[i] == c;
            tp += t && p;
            fn += t && !p;
            fp += !t && p;
            tn += !t && !p;
        }
        const double sens = ratio(tp, tp + fn), spec = ratio(tn, tn + fp), prec = ratio(tp, tp + fp);
        const double f1 = ratio(2 * prec * sens, prec + sens);
        const double w = 1.0 / static_cast<double>(positives.size());
        m.sensitivity += w * sens;
        m.specificity += w * spec;
        m.precision += w * prec;
        m.f1 += w * f1;
    }
    return m;
}

// --- Hyperband --------------------------------------------------------------------

/// (n_i, r_i) per bracket, derived by hand from n = ceil((s_max+1)/(s+1) * eta^s),
/// n_i = floor(n * eta^-i), r_i = R * eta^(i-s).
using RungTable = std::vector<std::vector<std::pair<long, double>>>;

inline const std::map<std::pair<long, long>, RungTable>& hand_hyperband_tables() {
    static const std::map<std::pair<long, long>, RungTable> tables{
        {{9, 3}, {{{9, 1}, {3, 3}, {1, 9}}, {{5, 3}, {1, 9}}, {{3, 9}}}},
        {{27, 3}, {{{27, 1}, {9, 3}, {3, 9}, {1, 27}}, {{12, 3}, {4, 9}, {1, 27}}, {{6, 9}, {2, 27}}, {{4, 27}}}},
        {{81, 3},
         {{{81, 1}, {27, 3}, {9, 9}, {3, 27}, {1, 81}},
          {{34, 3}, {11, 9}, {3, 27}, {1, 81}},
          {{15, 9}, {5, 27}, {1, 81}},
          {{8, 27}, {2, 81}},
          {{5, 81}}}},
    };
    return tables;
}

/// Deterministic quality surface over the head search space, peaking at
/// lr = 1e-4, two layers of 1024 units and dropout 0.2.
inline double toy_quality(const TrialConfig& c) {
    const double lr_term = std::exp(-std::pow(std::log10(c.head.learning_rate) + 4.0, 2));
    const double layer_term = c.head.n_layers == 2 ? 1.0 : 0.85;
    double unit_term = 0.0, drop_term = 0.0;
    for (int i = 0; i < c.head.n_layers; ++i) {
        const auto k = static_cast<std::size_t>(i);
        unit_term += std::exp(-std::pow(std::log2(c.head.dense[k] / 1024.0), 2) / 4.0);
        drop_term += 1.0 - std::pow(c.head.dropout[k] - 0.2, 2);
    }
    unit_term /= c.head.n_layers;
    drop_term /= c.head.n_layers;
    return lr_term * layer_term * unit_term * drop_term;
}

/// Budget-dependent score with the same ranking as toy_quality at every budget.
inline double toy_score(const TrialConfig& c, int epochs) { return toy_quality(c) * (1.0 - std::exp(-epochs / 20.0)); }

// --- PCA --------------------------------------------------------------------------

/// Cyclic Jacobi eigen-decomposition, kept deliberately naive so it shares
/// nothing with the library's solver.
inline void jacobi_eigen(Eigen::MatrixXd a, Eigen::VectorXd& values, Eigen::MatrixXd& vectors) {
    const auto n = a.rows();
    vectors = Eigen::MatrixXd::Identity(n, n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-30) break;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
                const double c = 1 / std::sqrt(t * t + 1), s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = vectors(k, p), vkq = vectors(k, q);
                    vectors(k, p) = c * vkp - s * vkq;
                    vectors(k, q) = s * vkp + c * vkq;
                }
            }
    }
    values = a.diagonal();
}

// --- Grad-CAM ---------------------------------------------------------------------

/// Four parameters: a 1x1 convolution with kernel (w1, w2) and ReLU, global
/// average pooling, and a head whose target column is (v1, v2).
struct HandCam {
    float w1, w2, v1, v2;
    int size = 4;

    TrainedModel model() const {
        nn::Graph g;
        g.add_layer("input", "InputLayer", {}, {{"shape", {size, size, 1}}});
        g.add_layer("conv", "Conv2D", {"input"},
                    {{"kernel", {1, 1}}, {"filters", 2}, {"padding", "valid"}, {"activation", "relu"}},
                    {{"kernel", {{1, 1, 1, 2}, {w1, w2}}}});
        g.set_backbone_name("hand");
        TrainedModel m;
        m.backbone = make_backbone(BackboneId::mobilenet_v3_small, std::move(g));
        DenseLayer L;
        L.weight.resize(2, 2);
        L.weight << v1, 0.0f, v2, 0.0f;  // column 0 is the target class
        L.bias = RowVectorF::Zero(2);
        m.head = Head({L}, {});
        m.task = TaskKind::binary;
        return m;
    }

    /// d score / d A_k = v_k / (H W) everywhere, so alpha_k = v_k / (H W) and
    /// cam = ReLU(sum_k alpha_k ReLU(w_k x)).
    std::vector<double> alpha() const {
        const double area = static_cast<double>(size) * size;
        return {v1 / area, v2 / area};
    }
    std::vector<double> raw(const std::vector<double>& x) const {
        const auto a = alpha();
        std::vector<double> out;
        for (double v : x) {
            const double s = a[0] * std::max(0.0, static_cast<double>(w1) * v) + a[1] * std::max(0.0, static_cast<double>(w2) * v);
            out.push_back(std::max(0.0, s));
        }
        return out;
    }
    std::vector<double> heatmap(const std::vector<double>& x) const {
        auto r = raw(x);
        const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
        const double mn = *lo, mx = *hi;
        for (auto& v : r) v = mx > mn ? (v - mn) / (mx - mn) : 0.0;
        return r;
    }
};

// --- statistics -------------------------------------------------------------------

inline nlohmann::json load_stats_oracle(const std::string& dir) {
    std::ifstream in(dir + "/stats_oracle.json");
    if (!in) throw std::runtime_error("stats oracle not found in " + dir);
    return nlohmann::json::parse(in);
}

/// Two-sided rank-sum p by brute force over subsets encoded as bitmasks.
inline double rank_sum_p_bitmask(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> all = x;
    all.insert(all.end(), y.begin(), y.end());
    const int n = static_cast<int>(all.size());
    std::vector<double> rank(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        double less = 0, equal = 0;
        for (int j = 0; j < n; ++j) {
            less += all[static_cast<std::size_t>(j)] < all[static_cast<std::size_t>(i)];
            equal += all[static_cast<std::size_t>(j)] == all[static_cast<std::size_t>(i)];
        }
        rank[static_cast<std::size_t>(i)] = less + (equal + 1) / 2.0;
    }
    const int nx = static_cast<int>(x.size());
    double w = 0;
    for (int i = 0; i < nx; ++i) w += rank[static_cast<std::size_t>(i)];
    const double mu = nx * (n + 1) / 2.0;
    long hit = 0, total = 0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        if (__builtin_popcount(mask) != nx) continue;
        double s = 0;
        for (int i = 0; i < n; ++i)
            if (mask & (1u << i)) s += rank[static_cast<std::size_t>(i)];
        ++total;
        hit += std::abs(s - mu) >= std::abs(w - mu) - 1e-9;
    }
    return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace mpoxtest
