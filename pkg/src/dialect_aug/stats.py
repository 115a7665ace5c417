"""Weighted F1 and the two-sided Mann-Whitney U test."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

EXACT_MAX_PRODUCT = 400


class Method(str, enum.Enum):
    EXACT = "exact"
    NORMAL = "normal"


@dataclass(frozen=True)
class UTestResult:
    u_statistic: float
    p_value: float
    method: Method
    degenerate: bool = False


def confusion_matrix(truth: Sequence, pred: Sequence, labels: Sequence | None = None) -> tuple[np.ndarray, list]:
    if len(truth) != len(pred):
        raise ValueError(f"length mismatch: {len(truth)} truth vs {len(pred)} predictions")
    if labels is None:
        labels = sorted(set(truth) | set(pred), key=repr)
    index = {lab: i for i, lab in enumerate(labels)}
    cm = np.zeros((len(labels), len(labels)), dtype=np.int64)
    np.add.at(cm, ([index[t] for t in truth], [index[p] for p in pred]), 1)
    return cm, list(labels)


def weighted_f1(truth: Sequence, pred: Sequence) -> float:
    """Per-class F1 weighted by true-class support.

    A class with no true positives scores 0, including when it is never
    predicted. Classes that only appear among predictions carry zero weight.
    """
    if len(truth) != len(pred):
        raise ValueError(f"length mismatch: {len(truth)} truth vs {len(pred)} predictions")
    if len(truth) == 0:
        raise ValueError("weighted_f1 needs at least one label")
    cm, _ = confusion_matrix(truth, pred)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    denom = support + predicted
    f1 = np.divide(2.0 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(np.sum(f1 * support) / support.sum())


def rankdata(a: np.ndarray) -> np.ndarray:
    """1-based ranks with ties given their midrank."""
    a = np.asarray(a, dtype=np.float64)
    order = np.argsort(a, kind="mergesort")
    s = a[order]
    ranks = np.empty(len(a))
    # boundaries of runs of equal values in sorted order
    edges = np.flatnonzero(np.diff(s) != 0) + 1
    starts = np.concatenate(([0], edges))
    ends = np.concatenate((edges, [len(a)]))
    for i, j in zip(starts, ends):
        ranks[order[i:j]] = 0.5 * (i + j + 1)
    return ranks


def _exact_pvalue(ranks: np.ndarray, n1: int, u: float) -> float:
    """Permutation distribution of U over all n1-subsets of the pooled midranks.

    Counts subsets by (doubled) rank sum with a knapsack recursion, which is
    equivalent to enumerating every arrangement but runs in O(n * n1 * sum).
    """
    doubled = np.rint(2 * ranks).astype(np.int64)
    total = int(doubled.sum())
    # counts[j, s]: number of j-element subsets with doubled rank sum s
    counts = np.zeros((n1 + 1, total + 1), dtype=np.float64)
    counts[0, 0] = 1.0
    for r in doubled:
        counts[1:, r:] += counts[:-1, :total + 1 - r].copy()
    dist = counts[n1]
    sums = np.nonzero(dist)[0]
    probs = dist[sums] / dist.sum()
    u_vals = sums / 2.0 - n1 * (n1 + 1) / 2.0
    eps = 1e-9
    lower = probs[u_vals <= u + eps].sum()
    upper = probs[u_vals >= u - eps].sum()
    return float(min(1.0, 2.0 * min(lower, upper)))


def mann_whitney_u(x: Sequence[float], y: Sequence[float], method: str = "auto") -> UTestResult:
    """Two-sided Mann-Whitney U test; U is reported for ``x``.

    ``method="auto"`` uses the exact permutation distribution when
    n1 * n2 <= 400 and the tie-corrected normal approximation with continuity
    correction otherwise. If every value is identical the variance is zero and
    the result is p = 1 with ``degenerate`` set.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be nonempty")
    if method == "auto":
        method = Method.EXACT if n1 * n2 <= EXACT_MAX_PRODUCT else Method.NORMAL
    method = Method(method)
    ranks = rankdata(np.concatenate([x, y]))
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    n = n1 + n2
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(tie_counts ** 3 - tie_counts))
    if len(tie_counts) == 1:
        return UTestResult(u, 1.0, method, degenerate=True)
    if method is Method.EXACT:
        # the two-sided p is symmetric under swapping samples; enumerate the smaller one
        if n1 <= n2:
            p = _exact_pvalue(ranks, n1, u)
        else:
            p = _exact_pvalue(ranks[::-1], n2, n1 * n2 - u)
        return UTestResult(u, p, method)
    mu = n1 * n2 / 2.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var)
    # Edgeworth term with the untied excess kurtosis of U; without it the
    # continuity-corrected normal tail is off by up to 0.011 at n1 = n2 = 8
    kurt = -1.2 * (n1 * n1 + n2 * n2 + n1 * n2 + n) / (n1 * n2 * (n + 1))
    pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    tail = 0.5 * math.erfc(z / math.sqrt(2.0)) + pdf * kurt / 24.0 * (z ** 3 - 3.0 * z)
    return UTestResult(u, float(min(1.0, max(0.0, 2.0 * tail))), method)


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""
