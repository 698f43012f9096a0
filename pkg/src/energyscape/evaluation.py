"""Scoring recovered basins against ground truth.

Recovered basins are centroided in data space, matched one-to-one to the
true centers by minimum total Euclidean cost, and scored by basin recovery
(BR), transition-matrix agreement (TMA) and state-distribution agreement (SDA).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .exceptions import EmptyBasin, SingleState, TooShort


@dataclass
class Matching:
    """``perm[b]`` is the true state matched to recovered basin b, or -1."""
    perm: np.ndarray
    cost: np.ndarray

    @property
    def n_true(self) -> int:
        return self.cost.shape[1]

    @property
    def true_to_recovered(self) -> np.ndarray:
        inv = np.full(self.n_true, -1, dtype=int)
        for b, k in enumerate(self.perm):
            if k >= 0:
                inv[k] = b
        return inv

    @property
    def total_cost(self) -> float:
        return float(sum(self.cost[b, k] for b, k in enumerate(self.perm) if k >= 0))


@dataclass
class MetricReport:
    br: float
    tma: float
    sda: float
    kappa: float
    n_recovered: int = 0
    unvisited_rows: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"BR": self.br, "TMA": self.tma, "SDA": self.sda, "kappa": self.kappa,
                "n_recovered": self.n_recovered, "unvisited_rows": list(self.unvisited_rows)}


def basin_centroids(X, labels, n_basins: int | None = None) -> np.ndarray:
    """Mean of the rows of X carrying each label 0..n_basins-1 (negative labels ignored)."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if labels.shape[0] != X.shape[0]:
        raise ValueError("labels and X disagree on T")
    if n_basins is None:
        n_basins = int(labels.max()) + 1 if labels.size else 0
    valid = labels >= 0
    counts = np.bincount(labels[valid], minlength=n_basins)[:n_basins]
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise EmptyBasin(f"basins {empty.tolist()} have no assigned points")
    sums = np.zeros((n_basins, X.shape[1]))
    np.add.at(sums, labels[valid], X[valid])
    return sums / counts[:, None]


def hungarian_match(centroids, true_centers) -> Matching:
    """Minimum-cost one-to-one matching under Euclidean distance.

    Unequal counts are allowed: surplus recovered basins or true states stay
    unmatched, which is the same as padding with infinite-cost dummies.
    """
    centroids = np.atleast_2d(np.asarray(centroids, dtype=float))
    true_centers = np.atleast_2d(np.asarray(true_centers, dtype=float))
    cost = cdist(centroids, true_centers)
    rows, cols = linear_sum_assignment(cost)
    perm = np.full(centroids.shape[0], -1, dtype=int)
    perm[rows] = cols
    return Matching(perm=perm, cost=cost)


def basin_recovery(matching: Matching, centroids, true_centers, kappa: float) -> float:
    """Fraction of true states whose matched centroid lies within ``kappa``."""
    centroids = np.atleast_2d(np.asarray(centroids, dtype=float))
    true_centers = np.atleast_2d(np.asarray(true_centers, dtype=float))
    hits = 0
    for k, b in enumerate(matching.true_to_recovered):
        if b >= 0 and np.linalg.norm(centroids[b] - true_centers[k]) <= kappa:
            hits += 1
    return hits / true_centers.shape[0]


def align_labels(labels, matching: Matching) -> np.ndarray:
    """Map recovered labels onto true state indices; unmatched basins become -1."""
    labels = np.asarray(labels, dtype=int)
    out = np.full(labels.shape, -1, dtype=int)
    ok = labels >= 0
    out[ok] = matching.perm[labels[ok]]
    return out


def transition_matrix(labels, K: int, return_unvisited: bool = False):
    """Row-normalized transition counts between consecutive labelled steps.

    Pairs involving a negative label are skipped. Rows with no outgoing
    transitions are set uniform so the matrix stays stochastic.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.size < 2:
        raise TooShort("need at least two time points")
    a, b = labels[:-1], labels[1:]
    ok = (a >= 0) & (b >= 0) & (a < K) & (b < K)
    counts = np.zeros((K, K))
    np.add.at(counts, (a[ok], b[ok]), 1.0)
    rows = counts.sum(axis=1)
    unvisited = np.flatnonzero(rows == 0)
    P = np.where(rows[:, None] > 0, counts / np.where(rows > 0, rows, 1.0)[:, None], 1.0 / K)
    return (P, unvisited.tolist()) if return_unvisited else P


def tma(P_hat, P_star) -> float:
    """One minus the mean row-wise total variation distance."""
    P_hat = np.asarray(P_hat, dtype=float)
    P_star = np.asarray(P_star, dtype=float)
    if P_hat.shape != P_star.shape:
        raise ValueError("transition matrices differ in shape")
    K = P_star.shape[0]
    return float(1.0 - np.abs(P_hat - P_star).sum() / (2.0 * K))


def occupancy(labels, K: int) -> np.ndarray:
    """Fraction of all T steps spent in each of states 0..K-1."""
    labels = np.asarray(labels, dtype=int)
    ok = (labels >= 0) & (labels < K)
    return np.bincount(labels[ok], minlength=K)[:K] / labels.size


def sda(labels_aligned, z_true, K: int) -> float:
    """One minus the total variation between recovered and true occupancy."""
    return float(1.0 - 0.5 * np.abs(occupancy(labels_aligned, K) - occupancy(z_true, K)).sum())


def default_kappa(true_centers) -> float:
    """Half the smallest distance between true centers."""
    c = np.atleast_2d(np.asarray(true_centers, dtype=float))
    if c.shape[0] < 2:
        raise SingleState("kappa default needs at least two true centers")
    d = cdist(c, c)[np.triu_indices(c.shape[0], 1)]
    return 0.5 * float(d.min())


def score_recovery(X, labels, true_centers, z_true, P_star, kappa=None) -> MetricReport:
    """Full scoring of one recovered labelling against the ground truth."""
    labels = np.asarray(labels, dtype=int)
    true_centers = np.atleast_2d(np.asarray(true_centers, dtype=float))
    K = true_centers.shape[0]
    if kappa is None:
        kappa = default_kappa(true_centers)
    uniq = np.unique(labels[labels >= 0])
    relabel = np.full(int(labels.max()) + 1 if labels.size else 0, -1, dtype=int)
    relabel[uniq] = np.arange(uniq.size)
    compact = np.where(labels >= 0, relabel[np.maximum(labels, 0)], -1)
    cents = basin_centroids(X, compact, uniq.size)
    m = hungarian_match(cents, true_centers)
    br = basin_recovery(m, cents, true_centers, kappa)
    aligned = align_labels(compact, m)
    P_hat, unvisited = transition_matrix(aligned, K, return_unvisited=True)
    return MetricReport(br=br, tma=tma(P_hat, P_star), sda=sda(aligned, z_true, K),
                        kappa=float(kappa), n_recovered=int(uniq.size), unvisited_rows=unvisited)
