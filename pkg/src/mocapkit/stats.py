"""Nonparametric comparison protocol: Kruskal-Wallis, Mann-Whitney U, Holm.

The omnibus test runs across all methods; when it is significant at alpha,
all pairwise Mann-Whitney U tests are performed and Holm-adjusted. Tests are
two-sided; the Mann-Whitney p-value uses the normal approximation with tie
correction and a 0.5 continuity correction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc

DEFAULT_ALPHA = 0.05


@dataclass
class PairwiseComparison:
    method_a: str
    method_b: str
    u_statistic: float
    p_raw: float
    p_adjusted: float
    significant: bool


@dataclass
class StatReport:
    omnibus_h: float
    omnibus_p: float
    pairwise: list[PairwiseComparison] = field(default_factory=list)
    alpha: float = DEFAULT_ALPHA


def _ranks(values: np.ndarray) -> tuple[np.ndarray, float]:
    """Average ranks (ties shared) and the tie term sum(t^3 - t)."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    tie_term = 0.0
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        avg = 0.5 * (i + j) + 1.0
        ranks[order[i : j + 1]] = avg
        t = j - i + 1
        if t > 1:
            tie_term += t**3 - t
        i = j + 1
    return ranks, tie_term


def _chi2_sf(x: float, df: int) -> float:
    return float(gammaincc(df / 2.0, x / 2.0))


def _norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def kruskal_wallis(groups) -> tuple[float, float]:
    """Rank-based H statistic with tie correction; p from chi-squared (k-1 df)."""
    groups = [np.asarray(g, dtype=np.float64).reshape(-1) for g in groups]
    if len(groups) < 2:
        raise ValueError("kruskal_wallis needs >= 2 groups")
    if any(len(g) == 0 for g in groups):
        raise ValueError("kruskal_wallis groups must be non-empty")
    n_total = sum(len(g) for g in groups)
    if n_total < 3:
        raise ValueError("kruskal_wallis needs >= 3 observations in total")

    pooled = np.concatenate(groups)
    ranks, tie_term = _ranks(pooled)
    h = 0.0
    start = 0
    for g in groups:
        r = ranks[start : start + len(g)]
        h += r.sum() ** 2 / len(g)
        start += len(g)
    h = 12.0 / (n_total * (n_total + 1)) * h - 3.0 * (n_total + 1)

    correction = 1.0 - tie_term / (n_total**3 - n_total)
    if correction <= 0.0:
        return 0.0, 1.0
    h /= correction
    return float(h), _chi2_sf(h, len(groups) - 1)


def mann_whitney_u(a, b) -> tuple[float, float]:
    """Two-sided Mann-Whitney U test; U = min(U_a, U_b)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("mann_whitney_u samples must be non-empty")
    n1, n2 = len(a), len(b)
    n = n1 + n2
    ranks, tie_term = _ranks(np.concatenate([a, b]))
    r1 = ranks[:n1].sum()
    u1 = r1 - n1 * (n1 + 1) / 2.0
    u2 = n1 * n2 - u1
    u = min(u1, u2)

    mu = n1 * n2 / 2.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0.0:
        return float(u), 1.0
    z = (u - mu + 0.5) / math.sqrt(var)
    p = min(1.0, 2.0 * _norm_cdf(z))
    return float(u), float(p)


def holm_correction(raw_p) -> np.ndarray:
    """Holm step-down adjustment, returned in the input order."""
    raw_p = np.asarray(raw_p, dtype=np.float64).reshape(-1)
    if np.any((raw_p < 0) | (raw_p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(raw_p)
    order = np.argsort(raw_p, kind="stable")
    adjusted = np.empty(m)
    running = 0.0
    for rank, idx in enumerate(order):
        candidate = min(1.0, (m - rank) * raw_p[idx])
        running = max(running, candidate)
        adjusted[idx] = running
    return adjusted


def compare_methods(samples: dict[str, np.ndarray], alpha: float = DEFAULT_ALPHA) -> StatReport:
    """Omnibus test across methods, with Holm-corrected post hoc pairs.

    ``samples`` maps method name -> per-trial observations. Pairwise tests
    run only when the omnibus test is significant at alpha, mirroring the
    step-down protocol.
    """
    names = list(samples.keys())
    if len(names) < 2:
        raise ValueError("compare_methods needs >= 2 methods")
    h, p = kruskal_wallis([samples[n] for n in names])
    report = StatReport(omnibus_h=h, omnibus_p=p, alpha=alpha)
    if p >= alpha:
        return report

    pairs = list(itertools.combinations(names, 2))
    stats = [mann_whitney_u(samples[a], samples[b]) for a, b in pairs]
    adjusted = holm_correction([s[1] for s in stats])
    for (a, b), (u, raw), adj in zip(pairs, stats, adjusted):
        report.pairwise.append(
            PairwiseComparison(
                method_a=a,
                method_b=b,
                u_statistic=u,
                p_raw=raw,
                p_adjusted=float(adj),
                significant=bool(adj < alpha),
            )
        )
    return report
