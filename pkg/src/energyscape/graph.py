"""Subject-level functional graph: thresholded correlations and the
self-loop-augmented symmetric normalization consumed by the GCN."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .core import as_timeseries, standardize

DEFAULT_DENSITY = 0.10


@dataclass(frozen=True)
class FunctionalGraph:
    R: np.ndarray
    tau: float
    A: np.ndarray
    B: np.ndarray
    Bnorm: np.ndarray
    delta: float

    @property
    def N(self) -> int:
        return self.R.shape[0]

    @property
    def density(self) -> float:
        """Achieved off-diagonal edge density of ``A``."""
        iu = np.triu_indices(self.N, 1)
        return float(self.A[iu].mean())


def pearson_correlation(X) -> np.ndarray:
    """Sample Pearson correlation of the columns of X."""
    Xs = standardize(X)
    T = Xs.shape[0]
    R = Xs.T @ Xs / (T - 1)
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return np.clip(R, -1.0, 1.0)


def threshold_graph(R, delta: float = DEFAULT_DENSITY):
    """Keep edges whose |R_ij| reaches the (1 - delta)-quantile of the
    off-diagonal absolute correlations.

    Returns
    -------
    tau : float
        The threshold (linear interpolation between order statistics).
    A : ndarray
        Binary symmetric adjacency with zero diagonal; ties at ``tau`` kept.
    B : ndarray
        Weighted adjacency ``|R| * A``.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"edge density must lie in (0, 1), got {delta}")
    R = np.asarray(R, dtype=float)
    absR = np.abs(R)
    iu = np.triu_indices(R.shape[0], 1)
    tau = float(np.quantile(absR[iu], 1.0 - delta))
    A = (absR >= tau).astype(float)
    np.fill_diagonal(A, 0.0)
    A = np.maximum(A, A.T)
    B = absR * A
    return tau, A, B


def normalize_weights(B) -> np.ndarray:
    """D^{-1/2} (I + B) D^{-1/2} with D the row sums of I + B."""
    B = np.asarray(B, dtype=float)
    M = np.eye(B.shape[0]) + B
    dinv = 1.0 / np.sqrt(M.sum(axis=1))
    Bn = dinv[:, None] * M * dinv[None, :]
    return 0.5 * (Bn + Bn.T)


def build_graph(X, delta: float = DEFAULT_DENSITY) -> FunctionalGraph:
    X = as_timeseries(X)
    R = pearson_correlation(X)
    tau, A, B = threshold_graph(R, delta)
    return FunctionalGraph(R=R, tau=tau, A=A, B=B, Bnorm=normalize_weights(B), delta=delta)


def export_graph(graph: FunctionalGraph, edges_path, sidecar_path) -> None:
    """Edge list CSV (i, j, |R_ij|) for i < j plus a JSON sidecar."""
    with open(edges_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j", "weight"])
        for i, j in zip(*np.nonzero(np.triu(graph.A, 1))):
            writer.writerow([int(i), int(j), repr(float(abs(graph.R[i, j])))])
    with open(sidecar_path, "w") as fh:
        json.dump({"tau": graph.tau, "delta": graph.delta, "N": graph.N}, fh, indent=2)
