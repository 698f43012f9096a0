"""Discrete energy landscape on binarized (+-1) states.

Energy convention: ``E(q) = -1/2 q^T W q - h^T q`` with W symmetric and zero
on the diagonal, so ``p(q) ~ exp(-E(q))``.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .core import as_binary
from .exceptions import DimensionMismatch, NotConvergedWarning, TooManyVariables

DEFAULT_LAMBDA = 1e-2
MAX_EXACT_N = 12


@dataclass(frozen=True)
class IsingModel:
    W: np.ndarray
    h: np.ndarray
    lambda_ising: float = 0.0
    converged: bool = True
    n_iter: int = 0
    grad_norm: float = 0.0

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        h = np.asarray(self.h, dtype=float).ravel()
        if W.shape != (h.size, h.size):
            raise DimensionMismatch(f"W {W.shape} does not match h of length {h.size}")
        if not np.allclose(W, W.T, atol=1e-12):
            raise ValueError("coupling matrix must be symmetric")
        if np.any(np.diag(W) != 0):
            raise ValueError("coupling matrix must have a zero diagonal")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "h", h)

    @property
    def N(self) -> int:
        return self.h.size

    def to_dict(self) -> dict:
        return {
            "kind": "ising",
            "N": self.N,
            "W": self.W.ravel().tolist(),
            "h": self.h.tolist(),
            "lambda_ising": self.lambda_ising,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "grad_norm": self.grad_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IsingModel":
        N = int(d["N"])
        return cls(
            W=np.asarray(d["W"], dtype=float).reshape(N, N),
            h=np.asarray(d["h"], dtype=float),
            lambda_ising=float(d.get("lambda_ising", 0.0)),
            converged=bool(d.get("converged", True)),
            n_iter=int(d.get("n_iter", 0)),
            grad_norm=float(d.get("grad_norm", 0.0)),
        )


@dataclass
class BasinAssignment:
    labels: np.ndarray
    modes: list = field(default_factory=list)

    @property
    def n_basins(self) -> int:
        return len(self.modes)


def ising_energy(q, m: IsingModel):
    """Energy of one pattern (shape (N,)) or of each row of a (T, N) array."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != m.N:
        raise DimensionMismatch(f"pattern length {q.shape[-1]} != N={m.N}")
    return -0.5 * np.einsum("...i,ij,...j->...", q, m.W, q) - q @ m.h


def _pseudo_loglik(P, Q, lam):
    """Per-node regularized conditional log-likelihoods and their gradients.

    Row i of P holds (W_i1..W_iN) with the field h_i on the diagonal.
    """
    h = np.diag(P).copy()
    Woff = P - np.diag(h)
    a = Q @ Woff.T + h
    m = 2.0 * Q * a
    obj = -np.logaddexp(0.0, -m).sum(axis=0) - lam * (P ** 2).sum(axis=1)
    r = 2.0 * Q * expit(-m)
    G = r.T @ Q
    G[np.diag_indices_from(G)] = r.sum(axis=0)
    G -= 2.0 * lam * P
    return obj, G


def fit_ising_ple(Q, lambda_ising: float = DEFAULT_LAMBDA, tol: float = 1e-6,
                  max_iter: int = 20000) -> IsingModel:
    """l2-regularized maximum pseudolikelihood fit of an Ising model.

    Each conditional ``P(q_i | q_-i)`` is fit independently by full-batch
    gradient ascent (Barzilai-Borwein step, Armijo backtracking per node);
    the coupling rows are then symmetrized as ``(W + W^T) / 2``.
    """
    Q = as_binary(Q).astype(float)
    T, N = Q.shape
    if T < 10:
        raise ValueError(f"need at least 10 samples, got {T}")
    const = np.flatnonzero(np.all(Q == Q[:1], axis=0))
    if const.size:
        raise ValueError(f"columns {const.tolist()} are constant")

    P = np.zeros((N, N))
    obj, G = _pseudo_loglik(P, Q, lambda_ising)
    step = np.full(N, 1.0 / T)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        gnorm2 = (G ** 2).sum(axis=1)
        if np.sqrt(gnorm2.sum()) < tol:
            converged = True
            it -= 1
            break
        # nodes already below tolerance are frozen
        s = np.where(gnorm2 > tol ** 2 / N, step, 0.0)
        slack = 1e-13 * np.abs(obj)
        for _ in range(60):
            P_new = P + s[:, None] * G
            obj_new, G_new = _pseudo_loglik(P_new, Q, lambda_ising)
            ok = obj_new >= obj + 1e-4 * s * gnorm2 - slack
            if ok.all():
                break
            s = np.where(ok, s, 0.5 * s)
        dP = P_new - P
        dG = G_new - G
        curv = -(dP * dG).sum(axis=1)
        bb = (dP * dP).sum(axis=1) / np.where(curv > 0, curv, 1.0)
        step = np.where(curv > 0, bb, np.where(s > 0, 2.0 * s, step))
        step = np.clip(step, 1e-12, 1e6)
        P, obj, G = P_new, obj_new, G_new

    gnorm = float(np.linalg.norm(G))
    if not converged:
        warnings.warn(f"pseudolikelihood fit stopped at {max_iter} iterations "
                      f"(gradient norm {gnorm:.3g})", NotConvergedWarning, stacklevel=2)
    h = np.diag(P).copy()
    W = P - np.diag(h)
    W = 0.5 * (W + W.T)
    return IsingModel(W=W, h=h, lambda_ising=lambda_ising, converged=converged,
                      n_iter=it, grad_norm=gnorm)


def greedy_descent(q, m: IsingModel, return_path: bool = False):
    """Single-flip descent to a local minimum.

    At each step the flip with the largest energy decrease is taken, ties
    going to the lowest index. Stops when no flip strictly lowers the energy.
    """
    q = np.array(q, dtype=float).ravel()
    if q.size != m.N:
        raise DimensionMismatch(f"pattern length {q.size} != N={m.N}")
    path = [q.copy()] if return_path else None
    while True:
        dE = 2.0 * q * (m.W @ q + m.h)
        i = int(np.argmin(dE))
        if not dE[i] < 0:
            break
        q[i] = -q[i]
        if return_path:
            path.append(q.copy())
    out = q.astype(np.int8)
    return (out, path) if return_path else out


def assign_basins(Q, m: IsingModel) -> BasinAssignment:
    """Label each row of Q by the local minimum its greedy descent reaches.

    Modes are numbered in order of first appearance along the time axis.
    """
    Q = as_binary(Q)
    uniq, inverse = np.unique(Q, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    minima = [greedy_descent(u, m) for u in uniq]
    mode_index: dict[bytes, int] = {}
    modes = []
    labels = np.empty(Q.shape[0], dtype=int)
    for t, u in enumerate(inverse):
        key = minima[u].tobytes()
        if key not in mode_index:
            mode_index[key] = len(modes)
            modes.append(minima[u])
        labels[t] = mode_index[key]
    return BasinAssignment(labels=labels, modes=modes)


def all_states(N: int) -> np.ndarray:
    """All 2^N patterns in {-1, +1}^N as rows."""
    if N > MAX_EXACT_N:
        raise TooManyVariables(f"N={N} exceeds the enumeration limit {MAX_EXACT_N}")
    return np.array(list(itertools.product((-1, 1), repeat=N)), dtype=float)


def boltzmann_probabilities(m: IsingModel) -> tuple[np.ndarray, np.ndarray]:
    """Exact Boltzmann distribution over all 2^N states."""
    states = all_states(m.N)
    logw = -ising_energy(states, m)
    return states, np.exp(logw - logsumexp(logw))


def _sufficient_stats(S: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(S.shape[1], 1)
    pairs = S[:, iu[0]] * S[:, iu[1]]
    return np.hstack([S, pairs])


def exact_ising_fit(Q, fit_field: bool = True, tol: float = 1e-6,
                    max_iter: int = 200) -> IsingModel:
    """Maximum-likelihood Ising fit with the partition function enumerated.

    Newton ascent on the mean log-likelihood, whose gradient is the gap
    between data moments and model moments. Feasible only for N <= 12.
    With ``fit_field=False`` the fields are pinned at zero.
    """
    Q = as_binary(Q).astype(float)
    N = Q.shape[1]
    if N > MAX_EXACT_N:
        raise TooManyVariables(f"N={N} exceeds the enumeration limit {MAX_EXACT_N}")
    states = all_states(N)
    phi = _sufficient_stats(states)
    target = _sufficient_stats(Q).mean(axis=0)
    free = np.ones(phi.shape[1], dtype=bool)
    if not fit_field:
        free[:N] = False
    phi_f, target_f = phi[:, free], target[free]

    def evaluate(theta):
        logw = phi_f @ theta
        logZ = logsumexp(logw)
        p = np.exp(logw - logZ)
        mom = p @ phi_f
        return target_f @ theta - logZ, target_f - mom, p, mom

    theta = np.zeros(free.sum())
    ll, grad, p, mom = evaluate(theta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.linalg.norm(grad) < tol:
            converged = True
            it -= 1
            break
        centered = phi_f - mom
        cov = (centered * p[:, None]).T @ centered
        cov += 1e-12 * np.eye(cov.shape[0])
        direction = np.linalg.lstsq(cov, grad, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            ll_new, grad_new, p_new, mom_new = evaluate(theta + t * direction)
            if ll_new >= ll + 1e-4 * t * (grad @ direction):
                break
            t *= 0.5
        theta = theta + t * direction
        ll, grad, p, mom = ll_new, grad_new, p_new, mom_new

    gnorm = float(np.linalg.norm(grad))
    if not converged:
        warnings.warn(f"exact Ising fit stopped at {max_iter} iterations "
                      f"(gradient norm {gnorm:.3g})", NotConvergedWarning, stacklevel=2)
    full = np.zeros(phi.shape[1])
    full[free] = theta
    h = full[:N]
    W = np.zeros((N, N))
    iu = np.triu_indices(N, 1)
    W[iu] = full[N:]
    W = W + W.T
    return IsingModel(W=W, h=h, converged=converged, n_iter=it, grad_norm=gnorm)
