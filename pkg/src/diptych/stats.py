"""Wilcoxon signed-rank test for paired scores.

Zero differences are dropped; ties in |difference| receive average ranks.
For n <= 20 nonzero pairs the p-value is exact over all 2^n equally likely
sign assignments (computed by subset-sum counting over doubled ranks, which
are integers even with average ranks); above that, a normal approximation
with tie correction and a 0.5 continuity correction is used.

The two-sided p-value is P(|W+ - mu| >= |w_obs - mu|) under the null, with
mu = n(n+1)/4; the statistic reported is min(W+, W-).
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import DegenerateInputError

EXACT_LIMIT = 20


class WilcoxonResult(NamedTuple):
    statistic: float
    pvalue: float
    n: int


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    sorted_vals = values[order]
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_pvalue(doubled_ranks: np.ndarray, w_plus_doubled: int) -> float:
    total = int(doubled_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)  # counts < 2^20 are exact
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: counts.size - r]
        counts = counts + shifted
    mu2 = total / 2.0
    d = abs(w_plus_doubled - mu2)
    sums = np.arange(counts.size, dtype=np.float64)
    extreme = np.abs(sums - mu2) >= d - 1e-12
    return float(counts[extreme].sum() / counts.sum())


def wilcoxon_signed_rank(pairs) -> WilcoxonResult:
    """Two-sided signed-rank test over (score_a, score_b) pairs."""
    arr = np.asarray(list(pairs), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DegenerateInputError(f"expected pairs of scores, got shape {arr.shape}")
    diffs = arr[:, 0] - arr[:, 1]
    diffs = diffs[diffs != 0.0]
    if diffs.size == 0:
        raise DegenerateInputError("all paired differences are zero")
    if diffs.size < 5:
        raise DegenerateInputError(
            f"need at least 5 non-zero differences, got {diffs.size}"
        )
    n = int(diffs.size)
    ranks = _average_ranks(np.abs(diffs))
    w_plus = float(ranks[diffs > 0].sum())
    w_minus = float(ranks[diffs < 0].sum())
    statistic = min(w_plus, w_minus)

    if n <= EXACT_LIMIT:
        doubled = np.round(2.0 * ranks).astype(np.int64)
        pvalue = _exact_pvalue(doubled, int(round(2.0 * w_plus)))
        return WilcoxonResult(statistic, pvalue, n)

    mu = n * (n + 1) / 4.0
    variance = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(np.abs(diffs), return_counts=True)
    variance -= float((tie_counts**3 - tie_counts).sum()) / 48.0
    dev = max(0.0, abs(w_plus - mu) - 0.5)  # continuity correction
    z = dev / math.sqrt(variance)
    pvalue = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return WilcoxonResult(statistic, pvalue, n)
