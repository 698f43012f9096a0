"""Unimodal continuous energy landscape.

``E(x) = 1/2 (x - mu)^T S (x - mu) - h^T x`` with S symmetric positive
definite. Completing the square gives the minimizer ``x* = mu + S^{-1} h``,
the floor ``E_min = -h^T mu - 1/2 h^T S^{-1} h`` and the Gaussian
``p(x) = N(x*, S^{-1})``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .core import as_timeseries
from .exceptions import (
    DegenerateScale,
    DimensionMismatch,
    NotPositiveDefinite,
    SingularCovariance,
)

LOG_2PI = np.log(2.0 * np.pi)
DEFAULT_RIDGE_SCALE = 1e-6
PD_RTOL = 1e-10


def check_positive_definite(S, rtol: float = PD_RTOL) -> np.ndarray:
    """Return S as a symmetric float array or raise NotPositiveDefinite.

    The smallest eigenvalue must exceed ``rtol`` times the largest.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"precision must be square, got {S.shape}")
    if not np.all(np.isfinite(S)):
        raise NotPositiveDefinite("precision has non-finite entries")
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise NotPositiveDefinite("precision is not symmetric")
    S = 0.5 * (S + S.T)
    ev = np.linalg.eigvalsh(S)
    if ev[0] <= rtol * max(ev[-1], 0.0) or ev[-1] <= 0:
        raise NotPositiveDefinite(f"eigenvalues span [{ev[0]:.3g}, {ev[-1]:.3g}]")
    return S


@dataclass(frozen=True)
class GaussianEnergyModel:
    mu: np.ndarray
    S: np.ndarray
    h: np.ndarray
    pd_rtol: float = PD_RTOL
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        h = np.asarray(self.h, dtype=float).ravel()
        S = check_positive_definite(self.S, self.pd_rtol)
        if S.shape != (mu.size, mu.size) or h.size != mu.size:
            raise DimensionMismatch(
                f"mu ({mu.size}), S {S.shape} and h ({h.size}) disagree")
        chol = linalg.cho_factor(S, lower=True)
        Sinv_h = linalg.cho_solve(chol, h)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_L", np.tril(chol[0]))
        object.__setattr__(self, "x_star", mu + Sinv_h)
        object.__setattr__(self, "E_min", float(-h @ mu - 0.5 * h @ Sinv_h))

    @property
    def N(self) -> int:
        return self.mu.size

    @property
    def covariance(self) -> np.ndarray:
        return linalg.cho_solve(self._chol, np.eye(self.N))

    @property
    def logdet_S(self) -> float:
        return float(2.0 * np.log(np.diag(self._chol[0])).sum())

    @property
    def sigma_E(self) -> float:
        """Energy scale sqrt(tr(S^{-1}) / N)."""
        return float(np.sqrt(np.trace(self.covariance) / self.N))

    def solve(self, v) -> np.ndarray:
        return linalg.cho_solve(self._chol, np.asarray(v, dtype=float))

    def to_dict(self) -> dict:
        return {
            "kind": "gaussian",
            "N": self.N,
            "mu": self.mu.tolist(),
            "h": self.h.tolist(),
            "S": self.S.ravel().tolist(),
            "E_min": self.E_min,
            "sigma_E": self.sigma_E,
            **({"meta": self.meta} if self.meta else {}),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianEnergyModel":
        N = int(d["N"])
        return cls(mu=np.asarray(d["mu"], dtype=float),
                   S=np.asarray(d["S"], dtype=float).reshape(N, N),
                   h=np.asarray(d["h"], dtype=float),
                   meta=d.get("meta", {}))


def _rows(x, N):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != N:
        raise DimensionMismatch(f"state length {x.shape[-1]} != N={N}")
    return x


def quadratic_energy(x, m: GaussianEnergyModel):
    """``1/2 (x - mu)^T S (x - mu) - h^T x`` for one state or each row."""
    x = _rows(x, m.N)
    d = x - m.mu
    return 0.5 * np.einsum("...i,ij,...j->...", d, m.S, d) - x @ m.h


def completed_square_energy(x, m: GaussianEnergyModel):
    """The same energy written as ``1/2 (x - x*)^T S (x - x*) + E_min``."""
    return excess_energy(x, m) + m.E_min


def excess_energy(x, m: GaussianEnergyModel):
    """``E(x) - E_min``, computed through the Cholesky factor so it is never negative."""
    x = _rows(x, m.N)
    d = x - m.x_star
    u = d @ m._L          # rows of L^T d
    return 0.5 * np.einsum("...i,...i->...", u, u)


def energy_minimum(m: GaussianEnergyModel) -> tuple[np.ndarray, float]:
    return m.x_star.copy(), m.E_min


def energy_gradient(x, m: GaussianEnergyModel):
    x = _rows(x, m.N)
    return (x - m.mu) @ m.S - m.h


def log_density(x, m: GaussianEnergyModel):
    """Gaussian log-density with mean ``mu + S^{-1} h`` and precision S."""
    return 0.5 * m.logdet_S - 0.5 * m.N * LOG_2PI - excess_energy(x, m)


def default_ridge(cov: np.ndarray) -> float:
    return DEFAULT_RIDGE_SCALE * float(np.trace(cov)) / cov.shape[0]


def fit_gaussian_mle(X, ridge="auto", pd_rtol: float = PD_RTOL) -> GaussianEnergyModel:
    """Closed-form Gaussian fit: sample mean, inverse ridged MLE covariance, h = 0.

    Parameters
    ----------
    X : array, shape (T, N)
    ridge : "auto", float or None
        Added to the diagonal of the (1/T) sample covariance before
        inversion. ``"auto"`` uses ``1e-6 * tr(cov) / N``; ``None`` disables it.

    Raises
    ------
    SingularCovariance
        When the (ridged) covariance cannot be inverted, e.g. T <= N without
        ridge or a single repeated row.
    """
    X = as_timeseries(X, min_N=1)
    T, N = X.shape
    mu = X.mean(axis=0)
    D = X - mu
    cov = D.T @ D / T
    if ridge is None:
        if T <= N:
            raise SingularCovariance(f"T={T} <= N={N} with ridge disabled")
        r = 0.0
    elif ridge == "auto":
        r = default_ridge(cov)
    else:
        r = float(ridge)
    cov_r = cov + r * np.eye(N)
    try:
        check_positive_definite(cov_r, pd_rtol)
    except NotPositiveDefinite as exc:
        raise SingularCovariance(f"sample covariance is singular: {exc}") from None
    S = linalg.cho_solve(linalg.cho_factor(cov_r, lower=True), np.eye(N))
    S = 0.5 * (S + S.T)
    return GaussianEnergyModel(mu=mu, S=S, h=np.zeros(N), pd_rtol=pd_rtol,
                               meta={"ridge": r, "T": T})


def gaussian_loglik(X, m: GaussianEnergyModel) -> float:
    return float(np.sum(log_density(X, m)))


def normalize_energy(E_series, m) -> np.ndarray:
    """Per-subject rescaling ``(E_t - E_min) / sigma_E``.

    ``m`` is any model exposing ``E_min`` and ``sigma_E``. Rounding noise
    below ``E_min`` is clipped to zero; a genuine undershoot raises.
    """
    E = np.asarray(E_series, dtype=float)
    sigma = float(m.sigma_E)
    if not sigma > 0:
        raise DegenerateScale(f"energy scale sigma_E={sigma} is not positive")
    excess = E - m.E_min
    tol = 1e-9 * max(1.0, abs(m.E_min), float(np.max(np.abs(E), initial=0.0)))
    if np.any(excess < -tol):
        raise ValueError(f"energies fall {-excess.min():.3g} below the model minimum")
    return np.maximum(excess, 0.0) / sigma


def normalized_energy(x, m: GaussianEnergyModel) -> np.ndarray:
    """``(E(x) - E_min) / sigma_E`` evaluated through the completed square,
    so it is exactly zero at the minimizer."""
    return excess_energy(x, m) / m.sigma_E
