"""Gaussian-mixture energy landscape (multi-basin continuous model).

The energy is the negative log mixture density
``E(x) = -log sum_m eta_m phi(x; mu_m, S_m)`` with per-component precisions.
Fitting is plain EM with k-means++ seeding and restarts; the number of
components can be chosen by BIC.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.special import logsumexp

from .continuous import LOG_2PI, check_positive_definite
from .core import as_timeseries, derive_seed, make_rng
from .exceptions import DegenerateComponent, DimensionMismatch, NotConvergedWarning, TooShort

RIDGE_SCALE = 1e-6


@dataclass
class MixtureEnergyModel:
    eta: np.ndarray
    mus: np.ndarray
    Ss: np.ndarray
    loglik: float = float("nan")
    n_iter: int = 0
    converged: bool = True
    trace: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=float).ravel()
        self.mus = np.atleast_2d(np.asarray(self.mus, dtype=float))
        self.Ss = np.asarray(self.Ss, dtype=float)
        if self.Ss.ndim == 2:
            self.Ss = self.Ss[None]
        M, N = self.mus.shape
        if self.eta.size != M or self.Ss.shape != (M, N, N):
            raise DimensionMismatch("eta, mus and Ss disagree on M or N")
        if np.any(self.eta < 0) or abs(self.eta.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        self.Ss = np.stack([check_positive_definite(S) for S in self.Ss])
        self._L = np.stack([np.linalg.cholesky(S) for S in self.Ss])
        self._half_logdet = np.log(np.diagonal(self._L, axis1=1, axis2=2)).sum(axis=1)
        self._min = None

    @property
    def M(self) -> int:
        return self.eta.size

    @property
    def N(self) -> int:
        return self.mus.shape[1]

    @property
    def n_params(self) -> int:
        M, N = self.M, self.N
        return (M - 1) + M * N + M * N * (N + 1) // 2

    def bic(self, T: int) -> float:
        return -2.0 * self.loglik + self.n_params * np.log(T)

    @property
    def covariances(self) -> np.ndarray:
        return np.stack([linalg.cho_solve((L, True), np.eye(self.N)) for L in self._L])

    @property
    def sigma_E(self) -> float:
        """sqrt(tr(pooled covariance) / N), pooling with the mixture weights."""
        pooled = np.einsum("m,mij->ij", self.eta, self.covariances)
        return float(np.sqrt(np.trace(pooled) / self.N))

    def component_logpdf(self, x) -> np.ndarray:
        """log phi(x; mu_m, S_m) for each row of x and each component: (..., M)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.N:
            raise DimensionMismatch(f"state length {x.shape[-1]} != N={self.N}")
        d = x[..., None, :] - self.mus                     # (..., M, N)
        u = np.einsum("...mi,mij->...mj", d, self._L)      # rows of L_m^T d
        quad = np.einsum("...mj,...mj->...m", u, u)
        return self._half_logdet - 0.5 * self.N * LOG_2PI - 0.5 * quad

    def joint_log(self, x) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.eta) + self.component_logpdf(x)

    def minimum(self, extra_starts=None) -> tuple[np.ndarray, float]:
        """Lowest energy found by local descents from every component mean
        (and any extra start points)."""
        if self._min is not None and extra_starts is None:
            return self._min
        starts = list(self.mus)
        if extra_starts is not None:
            starts += list(np.atleast_2d(extra_starts))
        best_x, best_E = None, np.inf
        for x0 in starts:
            res = optimize.minimize(lambda z: float(mixture_energy(z, self)), x0,
                                    jac=lambda z: mixture_energy_gradient(z, self),
                                    method="BFGS", options={"gtol": 1e-10, "maxiter": 2000})
            cand = [(res.x, float(res.fun)), (np.asarray(x0, float), float(mixture_energy(x0, self)))]
            for xc, Ec in cand:
                if Ec < best_E:
                    best_x, best_E = xc, Ec
        result = (best_x, best_E)
        if extra_starts is None:
            self._min = result
        return result

    @property
    def E_min(self) -> float:
        return self.minimum()[1]

    def to_dict(self, T: int | None = None) -> dict:
        d = {
            "kind": "mixture",
            "M": self.M,
            "N": self.N,
            "eta": self.eta.tolist(),
            "mus": self.mus.tolist(),
            "Ss": [S.ravel().tolist() for S in self.Ss],
            "loglik": self.loglik,
            "converged": self.converged,
            "n_iter": self.n_iter,
        }
        if T is not None:
            d["T"] = T
            d["BIC"] = self.bic(T)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureEnergyModel":
        M, N = int(d["M"]), int(d["N"])
        return cls(eta=d["eta"], mus=np.asarray(d["mus"], dtype=float).reshape(M, N),
                   Ss=np.asarray(d["Ss"], dtype=float).reshape(M, N, N),
                   loglik=float(d.get("loglik", np.nan)),
                   n_iter=int(d.get("n_iter", 0)), converged=bool(d.get("converged", True)))


def mixture_energy(x, m: MixtureEnergyModel):
    """Negative log mixture density, stabilized with log-sum-exp."""
    return -logsumexp(m.joint_log(x), axis=-1)


def responsibilities(x, m: MixtureEnergyModel) -> np.ndarray:
    lj = m.joint_log(x)
    return np.exp(lj - logsumexp(lj, axis=-1, keepdims=True))


def mixture_energy_gradient(x, m: MixtureEnergyModel) -> np.ndarray:
    """``sum_m gamma_m(x) S_m (x - mu_m)``."""
    x = np.asarray(x, dtype=float)
    g = responsibilities(x, m)
    d = x[..., None, :] - m.mus
    return np.einsum("...m,mij,...mj->...i", g, m.Ss, d)


def map_labels(X, m: MixtureEnergyModel) -> np.ndarray:
    """Most responsible component per row; ties go to the lowest index."""
    return np.argmax(m.joint_log(np.atleast_2d(X)), axis=-1)


# --------------------------------------------------------------------------
# EM

def kmeanspp_centers(X, M: int, rng) -> np.ndarray:
    T = X.shape[0]
    idx = [int(rng.integers(T))]
    d2 = ((X - X[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, M):
        total = d2.sum()
        if total <= 0:
            nxt = int(rng.integers(T))
        else:
            nxt = int(rng.choice(T, p=d2 / total))
        idx.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[idx].copy()


def _m_step(X, resp):
    T, N = X.shape
    Nk = resp.sum(axis=0)
    eta = Nk / T
    mus = (resp.T @ X) / Nk[:, None]
    covs = np.empty((resp.shape[1], N, N))
    for k in range(resp.shape[1]):
        D = X - mus[k]
        C = (resp[:, k, None] * D).T @ D / Nk[k]
        C = 0.5 * (C + C.T)
        covs[k] = C + RIDGE_SCALE * np.trace(C) / N * np.eye(N)
    return eta, mus, covs


def _log_gauss(X, mus, covs):
    M, N = mus.shape
    out = np.empty((X.shape[0], M))
    for k in range(M):
        L = np.linalg.cholesky(covs[k])
        sol = linalg.solve_triangular(L, (X - mus[k]).T, lower=True)
        out[:, k] = (-np.log(np.diag(L)).sum() - 0.5 * N * LOG_2PI
                     - 0.5 * (sol ** 2).sum(axis=0))
    return out


def _em_run(X, M, rng, tol, max_iter):
    T, N = X.shape
    mus = kmeanspp_centers(X, M, rng)
    D = X - X.mean(axis=0)
    base = D.T @ D / T
    base += RIDGE_SCALE * np.trace(base) / N * np.eye(N)
    covs = np.repeat(base[None], M, axis=0)
    eta = np.full(M, 1.0 / M)
    reinitialized = set()
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        lj = np.log(eta) + _log_gauss(X, mus, covs)
        norm = logsumexp(lj, axis=1)
        ll = float(norm.sum())
        trace.append(ll)
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            converged = True
            break
        resp = np.exp(lj - norm[:, None])
        eta, mus, covs = _m_step(X, resp)
        weak = np.flatnonzero(eta < 1.0 / (10 * T))
        for k in weak:
            if k in reinitialized:
                raise DegenerateComponent(f"component {k} collapsed twice")
            reinitialized.add(k)
            d2 = np.min([((X - mus[j]) ** 2).sum(axis=1) for j in range(M) if j != k], axis=0)
            mus[k] = X[int(rng.choice(T, p=d2 / d2.sum()))] if d2.sum() > 0 else X[int(rng.integers(T))]
            covs[k] = base
            eta[k] = 1.0 / M
            eta /= eta.sum()
            trace = []          # monotonicity restarts after a re-seed
    return eta, mus, covs, trace, it, converged


def fit_gmm(X, M: int, seed=0, n_restarts: int = 5, tol: float = 1e-6,
            max_iter: int = 500) -> MixtureEnergyModel:
    """EM fit of an M-component Gaussian mixture; best of ``n_restarts``.

    Each restart seeds the means by k-means++ and starts from the pooled
    covariance with equal weights. Component covariances get a
    ``1e-6 * tr(C_k) / N`` ridge before inversion.
    """
    X = as_timeseries(X, min_N=1)
    T, N = X.shape
    if M < 1:
        raise ValueError("need at least one component")
    if T < M * (N + 1):
        raise TooShort(f"T={T} < M(N+1)={M * (N + 1)}")
    best = None
    failures = []
    for r in range(n_restarts):
        rng = make_rng(derive_seed(seed, "gmm-restart", r))
        try:
            eta, mus, covs, trace, it, conv = _em_run(X, M, rng, tol, max_iter)
        except (DegenerateComponent, np.linalg.LinAlgError) as exc:
            failures.append(str(exc))
            continue
        if best is None or trace[-1] > best[3][-1]:
            best = (eta, mus, covs, trace, it, conv)
    if best is None:
        raise DegenerateComponent(f"all {n_restarts} EM restarts failed: {failures}")
    eta, mus, covs, trace, it, conv = best
    if not conv:
        warnings.warn(f"EM hit max_iter={max_iter}", NotConvergedWarning, stacklevel=2)
    Ss = np.stack([0.5 * (P + P.T) for P in (np.linalg.inv(C) for C in covs)])
    eta = eta / eta.sum()
    return MixtureEnergyModel(eta=eta, mus=mus, Ss=Ss, loglik=trace[-1], n_iter=it,
                              converged=conv, trace=trace)


def select_components_bic(X, M_max: int, seed=0, **fit_kw):
    """Fit M = 1..M_max and return (best M, {M: BIC}, {M: model}).

    ``BIC = -2 loglik + k log T`` with ``k = M-1 + MN + MN(N+1)/2``; ties
    go to the smaller M.
    """
    X = as_timeseries(X, min_N=1)
    if M_max < 1:
        raise ValueError("M_max must be at least 1")
    T = X.shape[0]
    bics, models = {}, {}
    for M in range(1, M_max + 1):
        mdl = fit_gmm(X, M, seed=seed, **fit_kw)
        models[M] = mdl
        bics[M] = mdl.bic(T)
    best = min(bics, key=lambda M: (bics[M], M))
    return best, bics, models
