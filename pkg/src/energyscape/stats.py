"""Paired tests, false-discovery control and bootstrap intervals."""
from __future__ import annotations

import numpy as np
from scipy.stats import norm, rankdata

from .core import make_rng
from .exceptions import TooFewSamples

EXACT_MAX_N = 25
MIN_NONZERO = 6


def _exact_tail(r2: np.ndarray, w2: int) -> tuple[float, float]:
    """P(W <= w) and P(W >= w) under the sign-flip null, on doubled ranks.

    ``r2`` are the doubled (hence integer) midranks; the distribution of the
    doubled positive-rank sum is built by convolution over ranks.
    """
    total = int(r2.sum())
    dist = np.zeros(total + 1)
    dist[0] = 1.0
    for r in r2:
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[: dist.size - r]
        dist = 0.5 * (dist + shifted)
    return float(dist[: w2 + 1].sum()), float(dist[w2:].sum())


def wilcoxon_signed_rank(differences, return_details: bool = False):
    """Two-sided Wilcoxon signed-rank test on paired differences.

    Zeros are dropped and tied magnitudes get midranks. The null
    distribution is exact for up to 25 nonzero differences; beyond that a
    normal approximation with continuity and tie corrections is used.

    Raises
    ------
    TooFewSamples
        Fewer than 6 nonzero differences remain.
    """
    d = np.asarray(differences, dtype=float).ravel()
    d = d[d != 0]
    n = d.size
    if n < MIN_NONZERO:
        raise TooFewSamples(f"{n} nonzero differences; need at least {MIN_NONZERO}")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    if n <= EXACT_MAX_N:
        r2 = np.rint(2 * ranks).astype(int)
        lower, upper = _exact_tail(r2, int(round(2 * w_plus)))
        p = 2.0 * min(lower, upper)
        method = "exact"
    else:
        _, tie_counts = np.unique(np.abs(d), return_counts=True)
        mean = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - (tie_counts ** 3 - tie_counts).sum() / 48.0
        zstat = max(abs(w_plus - mean) - 0.5, 0.0) / np.sqrt(var)
        p = 2.0 * norm.sf(zstat)
        method = "normal"
    p = min(1.0, p)
    if return_details:
        return {"p_value": p, "w_plus": w_plus, "n": n, "method": method}
    return p


def benjamini_hochberg(p_values, q: float = 0.05):
    """Step-up false-discovery control.

    Returns
    -------
    reject : bool array
    p_adjusted : array
        ``min_{j >= i} m p_(j) / j`` mapped back to input order, capped at 1.
    """
    p = np.asarray(p_values, dtype=float).ravel()
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool), np.zeros(0)
    order = np.argsort(p, kind="stable")
    ps = p[order]
    i = np.arange(1, m + 1)
    below = np.flatnonzero(ps <= i / m * q)
    reject = np.zeros(m, dtype=bool)
    if below.size:
        reject[order[: below[-1] + 1]] = True
    adj_sorted = np.minimum.accumulate((ps * m / i)[::-1])[::-1]
    adj = np.empty(m)
    adj[order] = np.minimum(adj_sorted, 1.0)
    return reject, adj


def bootstrap_ci(values, level: float = 0.95, n_boot: int = 2000, seed=0) -> tuple[float, float]:
    """Percentile bootstrap interval for the mean."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 2:
        raise TooFewSamples("bootstrap needs at least two values")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    rng = make_rng(seed)
    idx = rng.integers(0, v.size, size=(n_boot, v.size))
    means = v[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    # clamp to the observed range so constant data gives exactly [c, c]
    return float(max(lo, v.min())), float(min(hi, v.max()))
