#!/usr/bin/env python3
"""Freeze reference values for the statistics suite.

Every value here comes from scipy / statsmodels, not from the C++ code. Run
once and commit the JSON; the unit and acceptance tests only read it.

    python3 tests/oracles/gen_stats_oracle.py tests/data/stats_oracle.json
"""
import itertools
import json
import sys

import numpy as np
import pandas as pd
from scipy import stats
from statsmodels.stats.anova import AnovaRM

N_DATASETS = 20


def fold_scores(rng, n, base, spread):
    # accuracy-like values on a 1/40 grid, the resolution of a 40-image fold
    v = np.clip(rng.normal(base, spread, n), 0.5, 1.0)
    return np.round(v * 40) / 40


def continuous(rng, n):
    kind = rng.integers(0, 3)
    if kind == 0:
        return rng.normal(0.9, 0.04, n)
    if kind == 1:
        return rng.uniform(0.7, 1.0, n)
    return rng.exponential(0.05, n) + 0.8


def shapiro_cases(rng):
    out = []
    for i in range(N_DATASETS):
        n = int(rng.integers(3, 51))
        x = continuous(rng, n) if i % 2 == 0 else fold_scores(rng, n, 0.9, 0.05)
        if np.ptp(x) == 0:
            x = x + rng.normal(0, 1e-3, n)
        w, p = stats.shapiro(x)
        out.append({"x": x.tolist(), "statistic": float(w), "p_value": float(p)})
    return out


def rm_cases(rng):
    out = []
    for _ in range(N_DATASETS):
        k = int(rng.integers(3, 6))
        n = int(rng.integers(5, 13))
        subject = rng.normal(0, 0.03, n)
        groups = [np.clip(0.85 + rng.normal(0, 0.03) + subject + rng.normal(0, 0.04, n), 0, 1) for _ in range(k)]
        g = np.array(groups)
        df = pd.DataFrame({
            "subject": np.tile(np.arange(n), k),
            "cond": np.repeat(np.arange(k), n),
            "y": g.reshape(-1),
        })
        res = AnovaRM(df, "y", "subject", within=["cond"]).fit().anova_table
        F = float(res["F Value"].iloc[0])
        p = float(res["Pr > F"].iloc[0])
        df1 = float(res["Num DF"].iloc[0])
        df2 = float(res["Den DF"].iloc[0])
        # Tukey with the repeated-measures error term
        grand = g.mean()
        ss_total = ((g - grand) ** 2).sum()
        ss_cond = n * ((g.mean(axis=1) - grand) ** 2).sum()
        ss_subj = k * ((g.mean(axis=0) - grand) ** 2).sum()
        ss_err = ss_total - ss_cond - ss_subj
        mse = ss_err / df2
        pairs = []
        for a, b in itertools.combinations(range(k), 2):
            q = abs(g[a].mean() - g[b].mean()) / np.sqrt(mse / n)
            pairs.append({"a": a, "b": b, "q": float(q),
                          "p_value": float(stats.studentized_range.sf(q, k, df2))})
        out.append({"groups": g.tolist(), "F": F, "p_value": p, "df1": df1, "df2": df2, "tukey": pairs})
    return out


def two_sample_cases(rng):
    out = []
    for i in range(N_DATASETS):
        nx = int(rng.integers(5, 16))
        ny = int(rng.integers(5, 16))
        shift = rng.normal(0, 0.03)
        if i % 2 == 0:
            x = rng.normal(0.88, 0.04, nx)
            y = rng.normal(0.88 + shift, rng.uniform(0.01, 0.08), ny)
        else:
            x = fold_scores(rng, nx, 0.88, 0.04)
            y = fold_scores(rng, ny, 0.88 + shift, 0.05)
        t, tp = stats.ttest_ind(x, y, equal_var=True)
        wt, wp = stats.ttest_ind(x, y, equal_var=False)
        b, bp = stats.bartlett(x, y)
        case = {"x": x.tolist(), "y": y.tolist(),
                "t": {"statistic": float(t), "p_value": float(tp)},
                "welch": {"statistic": float(wt), "p_value": float(wp)},
                "bartlett": {"statistic": float(b), "p_value": float(bp)}}
        if nx + ny > 12:
            u, up = stats.mannwhitneyu(x, y, alternative="two-sided", use_continuity=True, method="asymptotic")
            case["wilcoxon"] = {"statistic": float(u + nx * (nx + 1) / 2), "p_value": float(up)}
        out.append(case)
    return out


def exact_rank_sum_cases(rng):
    # tie-free small samples, where scipy's exact distribution applies
    out = []
    for nx in range(1, 12):
        for ny in range(1, 13 - nx):
            v = rng.permutation(nx + ny).astype(float) + rng.uniform(0, 0.5)
            x, y = v[:nx], v[nx:]
            u, p = stats.mannwhitneyu(x, y, alternative="two-sided", method="exact")
            out.append({"x": x.tolist(), "y": y.tolist(), "statistic": float(u + nx * (nx + 1) / 2),
                        "p_value": float(p)})
    return out


def main():
    path = sys.argv[1] if len(sys.argv) > 1 else "stats_oracle.json"
    rng = np.random.default_rng(20240611)
    doc = {
        "generator": "scipy %s, statsmodels AnovaRM" % __import__("scipy").__version__,
        "shapiro_wilk": shapiro_cases(rng),
        "anova_rm": rm_cases(rng),
        "two_sample": two_sample_cases(rng),
        "rank_sum_exact": exact_rank_sum_cases(rng),
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
    print("wrote", path)


if __name__ == "__main__":
    main()
