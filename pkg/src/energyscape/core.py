"""Shared numeric helpers: validation, standardization, binarization, seeding."""
from __future__ import annotations

import hashlib

import numpy as np

from .exceptions import ConstantColumn, DimensionMismatch

__all__ = [
    "as_timeseries",
    "as_binary",
    "standardize",
    "median_binarize",
    "derive_seed",
    "make_rng",
]

_SEED_MASK = (1 << 64) - 1


def as_timeseries(X, min_T: int = 2, min_N: int = 2) -> np.ndarray:
    """Validate a T x N observation matrix and return it as a float array."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D (T, N) array, got shape {X.shape}")
    T, N = X.shape
    if T < min_T or N < min_N:
        raise DimensionMismatch(f"need T >= {min_T} and N >= {min_N}, got T={T}, N={N}")
    if not np.all(np.isfinite(X)):
        raise ValueError("time series contains non-finite entries")
    return X


def as_binary(Q) -> np.ndarray:
    """Validate a matrix of +-1 states; returns an int8 copy."""
    Q = np.asarray(Q)
    if Q.ndim == 1:
        Q = Q[None, :]
    if Q.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D (T, N) array, got shape {Q.shape}")
    if not np.all((Q == 1) | (Q == -1)):
        raise ValueError("binary states must be exactly -1 or +1")
    return Q.astype(np.int8)


def _column_std(X: np.ndarray) -> np.ndarray:
    sd = X.std(axis=0, ddof=1)
    scale = np.maximum(np.abs(X).max(axis=0), 1.0)
    bad = np.flatnonzero(sd <= 1e-14 * scale)
    if bad.size:
        raise ConstantColumn(f"columns {bad.tolist()} have zero standard deviation")
    return sd


def standardize(X) -> np.ndarray:
    """Zero-mean, unit-variance columns (unbiased T-1 standard deviation).

    Raises
    ------
    ConstantColumn
        If any column has zero sample standard deviation.
    """
    X = as_timeseries(X)
    _column_std(X)
    Xc = X - X.mean(axis=0)
    # second centering pass removes the rounding residue of the first
    Xc -= Xc.mean(axis=0)
    Xs = Xc / Xc.std(axis=0, ddof=1)
    Xs -= Xs.mean(axis=0)
    return Xs


def median_binarize(X) -> np.ndarray:
    """Map each column to +1 where strictly above its median, -1 otherwise.

    Even-length columns use the midpoint of the two central order statistics,
    so ties at the median (and constant columns) go to -1.
    """
    X = as_timeseries(X, min_N=1)
    med = np.median(X, axis=0)
    return np.where(X > med, 1, -1).astype(np.int8)


def derive_seed(base_seed: int, *keys) -> int:
    """Deterministic 64-bit seed: ``base_seed`` XOR a stable hash of ``keys``."""
    digest = hashlib.blake2b(repr(keys).encode("utf-8"), digest_size=8).digest()
    return (int(base_seed) ^ int.from_bytes(digest, "little")) & _SEED_MASK


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(None if seed is None else int(seed) & _SEED_MASK)
