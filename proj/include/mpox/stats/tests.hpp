#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mpox/core/error.hpp"
#include "mpox/stats/distributions.hpp"

namespace mpox::stats {

inline constexpr double kAlpha = 0.05;

struct TestResult {
    std::string test;
    double statistic = 0.0;
    double p_value = 1.0;
    double alpha = kAlpha;
    bool significant = false;
    double df1 = 0.0;
    double df2 = 0.0;
    bool degenerate = false;  ///< p undefined or set by convention; see notes
    std::string notes;
};

inline TestResult finish(TestResult r) {
    r.p_value = std::clamp(r.p_value, 0.0, 1.0);
    r.significant = r.p_value < r.alpha;
    return r;
}

inline nlohmann::json to_json(const TestResult& r) {
    nlohmann::json j{{"test", r.test},         {"statistic", r.statistic}, {"p_value", r.p_value},
                     {"alpha", r.alpha},       {"significant", r.significant}, {"degenerate", r.degenerate}};
    if (r.df1 != 0.0) j["df1"] = r.df1;
    if (r.df2 != 0.0) j["df2"] = r.df2;
    if (!r.notes.empty()) j["notes"] = r.notes;
    if (std::isinf(r.statistic)) j["statistic"] = r.statistic > 0 ? "inf" : "-inf";
    return j;
}

inline double mean(const std::vector<double>& x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample variance (n - 1 denominator).
inline double variance(const std::vector<double>& x) {
    const double m = mean(x);
    double ss = 0.0;
    for (double v : x) ss += (v - m) * (v - m);
    return ss / static_cast<double>(x.size() - 1);
}

inline void require_finite(const std::vector<double>& x, const char* what) {
    for (double v : x) require(std::isfinite(v), ErrorCode::invalid_argument, std::string(what) + " contains non-finite values");
}

// --- Shapiro-Wilk -------------------------------------------------------------

namespace detail {
inline double poly(const double* c, int n, double x) {
    double r = c[n - 1];
    for (int i = n - 2; i >= 0; --i) r = r * x + c[i];
    return r;
}
}  // namespace detail

/// Royston's approximation for the coefficients and the p-value (n in [3, 50]).
/// A zero-range sample yields a degenerate result with no p-value.
inline TestResult shapiro_wilk(std::vector<double> x) {
    TestResult r;
    r.test = "shapiro_wilk";
    const int n = static_cast<int>(x.size());
    require(n >= 3 && n <= 50, ErrorCode::invalid_argument, "Shapiro-Wilk needs 3 <= n <= 50");
    require_finite(x, "sample");
    std::sort(x.begin(), x.end());
    const double range = x.back() - x.front();
    if (!(range > 1e-19 * std::max(1.0, std::abs(x.front())))) {
        r.degenerate = true;
        r.statistic = std::numeric_limits<double>::quiet_NaN();
        r.p_value = std::numeric_limits<double>::quiet_NaN();
        r.notes = "zero variance: W and p undefined";
        r.significant = false;
        return r;
    }
    const int nn2 = n / 2;
    std::vector<double> a(static_cast<std::size_t>(nn2 + 1), 0.0);  // 1-based
    static constexpr double c1[6] = {0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056};
    static constexpr double c2[6] = {0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633};
    const double an = n;
    if (n == 3) {
        a[1] = std::sqrt(0.5);
    } else {
        const double an25 = an + 0.25;
        std::vector<double> m(static_cast<std::size_t>(nn2 + 1));
        double summ2 = 0.0;
        for (int i = 1; i <= nn2; ++i) {
            m[static_cast<std::size_t>(i)] = normal_quantile((i - 0.375) / an25);
            summ2 += m[static_cast<std::size_t>(i)] * m[static_cast<std::size_t>(i)];
        }
        summ2 *= 2.0;
        const double ssumm2 = std::sqrt(summ2);
        const double rsn = 1.0 / std::sqrt(an);
        const double a1 = detail::poly(c1, 6, rsn) - m[1] / ssumm2;
        int i1;
        double fac;
        if (n > 5) {
            i1 = 3;
            const double a2 = -m[2] / ssumm2 + detail::poly(c2, 6, rsn);
            fac = std::sqrt((summ2 - 2.0 * m[1] * m[1] - 2.0 * m[2] * m[2]) / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
            a[2] = a2;
        } else {
            i1 = 2;
            fac = std::sqrt((summ2 - 2.0 * m[1] * m[1]) / (1.0 - 2.0 * a1 * a1));
        }
        a[1] = a1;
        for (int i = i1; i <= nn2; ++i) a[static_cast<std::size_t>(i)] = -m[static_cast<std::size_t>(i)] / fac;
    }
    // Full antisymmetric coefficient vector against the ordered sample.
    std::vector<double> coef(static_cast<std::size_t>(n), 0.0);
    for (int i = 1; i <= nn2; ++i) {
        coef[static_cast<std::size_t>(i - 1)] = -a[static_cast<std::size_t>(i)];
        coef[static_cast<std::size_t>(n - i)] = a[static_cast<std::size_t>(i)];
    }
    const double xm = mean(x);
    const double cm = mean(coef);
    double sax = 0.0, ssa = 0.0, ssx = 0.0;
    for (int i = 0; i < n; ++i) {
        const double xi = (x[static_cast<std::size_t>(i)] - xm) / range;
        const double ai = coef[static_cast<std::size_t>(i)] - cm;
        sax += ai * xi;
        ssa += ai * ai;
        ssx += xi * xi;
    }
    const double ssassx = std::sqrt(ssa * ssx);
    const double w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx);
    const double w = 1.0 - w1;
    r.statistic = w;

    if (n == 3) {
        constexpr double pi6 = 1.90985931710274, stqr = 1.04719755119660;
        r.p_value = std::max(pi6 * (std::asin(std::sqrt(w)) - stqr), 0.0);
        return finish(r);
    }
    static constexpr double g[2] = {-2.273, 0.459};
    static constexpr double c3[4] = {0.544, -0.39978, 0.025054, -6.714e-4};
    static constexpr double c4[4] = {1.3822, -0.77857, 0.062767, -0.0020322};
    static constexpr double c5[4] = {-1.5861, -0.31082, -0.083751, 0.0038915};
    static constexpr double c6[3] = {-0.4803, -0.082676, 0.0030302};
    double y = std::log(w1);
    const double xx = std::log(an);
    double m, s;
    if (n <= 11) {
        const double gamma = detail::poly(g, 2, an);
        if (y >= gamma) {
            r.p_value = 1e-99;
            return finish(r);
        }
        y = -std::log(gamma - y);
        m = detail::poly(c3, 4, an);
        s = std::exp(detail::poly(c4, 4, an));
    } else {
        m = detail::poly(c5, 4, xx);
        s = std::exp(detail::poly(c6, 3, xx));
    }
    r.p_value = normal_sf((y - m) / s);
    return finish(r);
}

// --- repeated-measures ANOVA and Tukey ----------------------------------------

/// groups[g][i]: score of model g on fold i.
struct RmDecomposition {
    std::size_t k = 0, n = 0;
    double ss_groups = 0.0, ss_subjects = 0.0, ss_error = 0.0;
    double df_groups = 0.0, df_error = 0.0;
    double ms_error() const { return df_error > 0 ? ss_error / df_error : 0.0; }
};

inline RmDecomposition rm_decompose(const std::vector<std::vector<double>>& groups, std::size_t min_groups) {
    require(groups.size() >= min_groups, ErrorCode::invalid_argument,
            "need at least " + std::to_string(min_groups) + " groups");
    const std::size_t n = groups.front().size();
    require(n >= 2, ErrorCode::invalid_argument, "need at least 2 folds per group");
    for (const auto& g : groups) {
        require(g.size() == n, ErrorCode::invalid_argument, "groups have unequal lengths");
        require_finite(g, "group");
    }
    RmDecomposition d;
    d.k = groups.size();
    d.n = n;
    double grand = 0.0;
    for (const auto& g : groups) grand += std::accumulate(g.begin(), g.end(), 0.0);
    grand /= static_cast<double>(d.k * n);
    double ss_total = 0.0;
    for (const auto& g : groups) {
        const double gm = mean(g);
        d.ss_groups += static_cast<double>(n) * (gm - grand) * (gm - grand);
        for (double v : g) ss_total += (v - grand) * (v - grand);
    }
    for (std::size_t i = 0; i < n; ++i) {
        double sm = 0.0;
        for (const auto& g : groups) sm += g[i];
        sm /= static_cast<double>(d.k);
        d.ss_subjects += static_cast<double>(d.k) * (sm - grand) * (sm - grand);
    }
    d.ss_error = std::max(ss_total - d.ss_groups - d.ss_subjects, 0.0);
    d.df_groups = static_cast<double>(d.k - 1);
    d.df_error = static_cast<double>((d.k - 1) * (n - 1));
    return d;
}

inline TestResult anova_rm(const std::vector<std::vector<double>>& groups) {
    const auto d = rm_decompose(groups, 3);
    TestResult r;
    r.test = "anova_rm";
    r.df1 = d.df_groups;
    r.df2 = d.df_error;
    const double ms_g = d.ss_groups / d.df_groups;
    const double tiny = 1e-12 * std::max(1.0, d.ss_groups + d.ss_subjects + d.ss_error);
    if (d.ss_groups <= tiny) {
        r.statistic = 0.0;
        r.p_value = 1.0;
        if (d.ss_error <= tiny) {
            r.degenerate = true;
            r.notes = "no variation between or within groups";
        }
    } else if (d.ss_error <= tiny) {
        r.statistic = std::numeric_limits<double>::infinity();
        r.p_value = 0.0;
        r.notes = "zero residual variance";
    } else {
        r.statistic = ms_g / d.ms_error();
        r.p_value = f_sf(r.statistic, d.df_groups, d.df_error);
    }
    if (r.notes.empty()) r.notes = "no sphericity correction applied";
    return finish(r);
}

struct PairwiseResult {
    std::size_t a = 0, b = 0;
    double mean_delta = 0.0;  ///< mean(a) - mean(b)
    TestResult result;
};

/// Tukey HSD with the repeated-measures error term: q = |delta| / sqrt(MSE / n)
/// on (k, (k-1)(n-1)) degrees of freedom.
inline std::vector<PairwiseResult> tukey_hsd(const std::vector<std::vector<double>>& groups) {
    const auto d = rm_decompose(groups, 2);
    const double se = std::sqrt(d.ms_error() / static_cast<double>(d.n));
    std::vector<PairwiseResult> out;
    for (std::size_t a = 0; a < d.k; ++a)
        for (std::size_t b = a + 1; b < d.k; ++b) {
            PairwiseResult p;
            p.a = a;
            p.b = b;
            p.mean_delta = mean(groups[a]) - mean(groups[b]);
            TestResult& r = p.result;
            r.test = "tukey_hsd";
            r.df1 = static_cast<double>(d.k);
            r.df2 = d.df_error;
            const double diff = std::abs(p.mean_delta);
            if (diff <= 1e-12 * std::max(1.0, std::abs(mean(groups[a])))) {
                r.statistic = 0.0;
                r.p_value = 1.0;
            } else if (se <= 0.0) {
                r.statistic = std::numeric_limits<double>::infinity();
                r.p_value = 0.0;
                r.notes = "zero residual variance";
            } else {
                r.statistic = diff / se;
                r.p_value = studentized_range_sf(r.statistic, static_cast<double>(d.k), d.df_error);
            }
            p.result = finish(r);
            out.push_back(std::move(p));
        }
    return out;
}

// --- two-sample tests -----------------------------------------------------------

inline TestResult bartlett(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() >= 2 && y.size() >= 2, ErrorCode::invalid_argument, "Bartlett needs n >= 2 per sample");
    require_finite(x, "x");
    require_finite(y, "y");
    const double vx = variance(x), vy = variance(y);
    require(vx > 0.0 && vy > 0.0, ErrorCode::degenerate, "Bartlett's test is undefined for a zero-variance sample");
    const double nx = static_cast<double>(x.size()) - 1.0, ny = static_cast<double>(y.size()) - 1.0;
    const double N = nx + ny;
    const double sp = (nx * vx + ny * vy) / N;
    const double num = N * std::log(sp) - nx * std::log(vx) - ny * std::log(vy);
    const double den = 1.0 + (1.0 / nx + 1.0 / ny - 1.0 / N) / 3.0;
    TestResult r;
    r.test = "bartlett";
    r.statistic = std::max(num / den, 0.0);
    r.df1 = 1.0;
    r.p_value = chi2_sf(r.statistic, 1.0);
    return finish(r);
}

inline TestResult t_test_independent(const std::vector<double>& x, const std::vector<double>& y, bool equal_variance) {
    require(x.size() >= 2 && y.size() >= 2, ErrorCode::invalid_argument, "t-test needs n >= 2 per sample");
    require_finite(x, "x");
    require_finite(y, "y");
    const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
    const double mx = mean(x), my = mean(y), vx = variance(x), vy = variance(y);
    TestResult r;
    r.test = equal_variance ? "t_test" : "welch";
    double se2, df;
    if (equal_variance) {
        df = nx + ny - 2.0;
        const double sp = ((nx - 1.0) * vx + (ny - 1.0) * vy) / df;
        se2 = sp * (1.0 / nx + 1.0 / ny);
    } else {
        const double a = vx / nx, b = vy / ny;
        se2 = a + b;
        df = se2 > 0.0 ? se2 * se2 / (a * a / (nx - 1.0) + b * b / (ny - 1.0)) : nx + ny - 2.0;
    }
    r.df1 = df;
    const double diff = mx - my;
    if (se2 <= 0.0) {
        r.degenerate = true;
        if (diff == 0.0) {
            r.statistic = 0.0;
            r.p_value = 1.0;
            r.notes = "both samples constant and equal";
        } else {
            r.statistic = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
            r.p_value = 0.0;
            r.notes = "both samples constant";
        }
        return finish(r);
    }
    r.statistic = diff / std::sqrt(se2);
    r.p_value = std::min(1.0, 2.0 * t_sf(std::abs(r.statistic), df));
    return finish(r);
}

/// Mid-ranks (1-based) of the pooled sample, plus the tie term sum(t^3 - t).
inline std::vector<double> midranks(const std::vector<double>& pooled, double* tie_term = nullptr) {
    std::vector<std::size_t> idx(pooled.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
    std::vector<double> ranks(pooled.size());
    double ties = 0.0;
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && pooled[idx[j + 1]] == pooled[idx[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        const double t = static_cast<double>(j - i + 1);
        ties += t * t * t - t;
        i = j + 1;
    }
    if (tie_term) *tie_term = ties;
    return ranks;
}

inline constexpr std::size_t kWilcoxonExactMax = 12;

/// Rank-sum test. Statistic: sum of the mid-ranks of x. Two-sided p is exact
/// (enumeration of all rank assignments) when n_x + n_y <= 12, otherwise the
/// normal approximation with tie and continuity correction.
inline TestResult wilcoxon_rank_sum(const std::vector<double>& x, const std::vector<double>& y) {
    require(!x.empty() && !y.empty(), ErrorCode::invalid_argument, "rank-sum test needs n >= 1 per sample");
    require_finite(x, "x");
    require_finite(y, "y");
    std::vector<double> pooled = x;
    pooled.insert(pooled.end(), y.begin(), y.end());
    double ties = 0.0;
    const auto ranks = midranks(pooled, &ties);
    const std::size_t nx = x.size(), N = pooled.size();
    const double w = std::accumulate(ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(nx), 0.0);
    const double expected = static_cast<double>(nx) * (static_cast<double>(N) + 1.0) / 2.0;
    const double observed = std::abs(w - expected);
    TestResult r;
    r.test = "wilcoxon_rank_sum";
    r.statistic = w;
    if (N <= kWilcoxonExactMax) {
        // Enumerate every choice of nx positions (combinations in lexicographic order).
        const double tol = 1e-9;
        std::vector<std::size_t> pick(nx);
        std::iota(pick.begin(), pick.end(), std::size_t{0});
        long extreme = 0, total = 0;
        while (true) {
            double s = 0.0;
            for (auto p : pick) s += ranks[p];
            ++total;
            if (std::abs(s - expected) >= observed - tol) ++extreme;
            std::size_t i = nx;
            while (i > 0 && pick[i - 1] == N - nx + (i - 1)) --i;
            if (i == 0) break;
            ++pick[i - 1];
            for (std::size_t j = i; j < nx; ++j) pick[j] = pick[j - 1] + 1;
        }
        r.p_value = static_cast<double>(extreme) / static_cast<double>(total);
        r.notes = "exact";
        return finish(r);
    }
    const double n1 = static_cast<double>(nx), n2 = static_cast<double>(y.size()), n = static_cast<double>(N);
    const double var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    r.notes = "normal approximation (tie and continuity corrected)";
    if (var <= 0.0) {
        r.p_value = 1.0;
        r.degenerate = true;
        return finish(r);
    }
    const double z = std::max(observed - 0.5, 0.0) / std::sqrt(var);
    r.p_value = std::min(1.0, 2.0 * normal_sf(z));
    return finish(r);
}

}  // namespace mpox::stats
