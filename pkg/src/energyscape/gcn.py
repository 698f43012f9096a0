"""Graph-convolutional parametrization of a low-rank-plus-jitter precision.

A small GCN maps per-node features over the normalized graph to embeddings
``H`` (N x d). The precision and field are read out as::

    Z = H @ Wz                 (N x r)
    S = Z Z^T + eps I
    h = H @ field_map          (N,)

and trained by minimizing the Gaussian negative log-likelihood plus a
Frobenius penalty on S. Gradients are derived by hand; ``nll_loss`` is
checked against central differences in the test-suite.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, stats

from .continuous import GaussianEnergyModel, log_density
from .core import as_timeseries, derive_seed, make_rng, standardize
from .exceptions import DimensionMismatch, NonFinite, NotConvergedWarning, TooShort
from .graph import FunctionalGraph

EPSILON = 1e-5
HIDDEN_WIDTH = 16
FEATURE_DIM = 8
RANK_CANDIDATES = (8, 12, 16)

_ACTIVATIONS = {
    "relu": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(float)),
    "identity": (lambda x: x, lambda x: np.ones_like(x)),
}


@dataclass
class GcnParams:
    layer_weights: list
    Wz: np.ndarray
    field_map: np.ndarray
    epsilon: float = EPSILON
    activations: tuple | None = None

    def __post_init__(self):
        self.layer_weights = [np.asarray(w, dtype=float) for w in self.layer_weights]
        self.Wz = np.asarray(self.Wz, dtype=float)
        self.field_map = np.asarray(self.field_map, dtype=float).ravel()
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.activations is None:
            n = len(self.layer_weights)
            self.activations = ("relu",) * (n - 1) + ("identity",)
        self.activations = tuple(self.activations)
        if len(self.activations) != len(self.layer_weights):
            raise ValueError("one activation per layer is required")
        d = self.layer_weights[-1].shape[1]
        if self.Wz.shape[0] != d or self.field_map.size != d:
            raise DimensionMismatch("Wz / field_map do not match the embedding width")

    @property
    def rank(self) -> int:
        return self.Wz.shape[1]

    def blocks(self) -> dict:
        out = {f"layer_{i}": w for i, w in enumerate(self.layer_weights)}
        out["Wz"] = self.Wz
        out["field_map"] = self.field_map
        return out

    def with_blocks(self, blocks: dict) -> "GcnParams":
        n = len(self.layer_weights)
        return replace(self,
                       layer_weights=[blocks[f"layer_{i}"] for i in range(n)],
                       Wz=blocks["Wz"], field_map=blocks["field_map"])

    def to_dict(self) -> dict:
        return {
            "layer_shapes": [list(w.shape) for w in self.layer_weights],
            "Wz_shape": list(self.Wz.shape),
            "epsilon": self.epsilon,
            "activations": list(self.activations),
        }


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    clip_threshold: float = 0.1
    lambda_frob: float = 1e-3
    convergence_tol: float = 1e-4
    patience_epochs: int = 5
    max_epochs: int = 5000
    clip_mode: str = "global"        # or "block"
    hidden_width: int = HIDDEN_WIDTH

    def __post_init__(self):
        for name in ("learning_rate", "clip_threshold", "lambda_frob",
                     "convergence_tol", "patience_epochs", "max_epochs"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.clip_mode not in ("global", "block"):
            raise ValueError("clip_mode must be 'global' or 'block'")


@dataclass
class TrainResult:
    params: GcnParams
    trace: list = field(default_factory=list)     # (epoch, loss, grad_norm)
    converged: bool = False
    initial_loss: float = np.nan
    best_loss: float = np.nan
    best_epoch: int = 0


# --------------------------------------------------------------------------
# features and initialization

def node_features(X, graph: FunctionalGraph) -> np.ndarray:
    """Per-node summaries of the standardized series, zero-padded to 8 columns.

    Columns: mean, std, skewness, excess kurtosis, lag-1 autocorrelation,
    degree in A, mean |R| over graph neighbours, 0.
    """
    Xs = standardize(X)
    N = Xs.shape[1]
    lag1 = np.array([np.corrcoef(Xs[:-1, i], Xs[1:, i])[0, 1] for i in range(N)])
    deg = graph.A.sum(axis=1)
    nbr = np.where(deg > 0, (np.abs(graph.R) * graph.A).sum(axis=1) / np.maximum(deg, 1), 0.0)
    F = np.column_stack([
        Xs.mean(axis=0), Xs.std(axis=0, ddof=1),
        stats.skew(Xs, axis=0), stats.kurtosis(Xs, axis=0),
        np.nan_to_num(lag1), deg, nbr, np.zeros(N),
    ])
    return F


def init_params(in_dim: int, rank: int, hidden: int = HIDDEN_WIDTH, n_layers: int = 2,
                epsilon: float = EPSILON, seed=None) -> GcnParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights; field readout starts at 0."""
    rng = make_rng(seed)
    dims = [in_dim] + [hidden] * n_layers
    layers = []
    for a, b in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(a)
        layers.append(rng.uniform(-bound, bound, size=(a, b)))
    bound = 1.0 / np.sqrt(hidden)
    Wz = rng.uniform(-bound, bound, size=(hidden, rank))
    return GcnParams(layer_weights=layers, Wz=Wz, field_map=np.zeros(hidden), epsilon=epsilon)


# --------------------------------------------------------------------------
# forward pass and low-rank algebra

def _forward(Bnorm, features, params: GcnParams):
    Bnorm = np.asarray(Bnorm, dtype=float)
    A = np.asarray(features, dtype=float)
    if Bnorm.shape != (A.shape[0], A.shape[0]):
        raise DimensionMismatch(f"graph {Bnorm.shape} vs features {A.shape}")
    cache = []
    for W, act in zip(params.layer_weights, params.activations):
        if W.shape[0] != A.shape[1]:
            raise DimensionMismatch(f"layer expects {W.shape[0]} inputs, got {A.shape[1]}")
        BA = Bnorm @ A
        P = BA @ W
        cache.append((BA, P, act))
        A = _ACTIVATIONS[act][0](P)
    return A, cache


def gcn_forward(Bnorm, features, params: GcnParams) -> np.ndarray:
    """Stacked graph convolutions ``A_{l+1} = act_l(Bnorm A_l W_l)``."""
    H, _ = _forward(Bnorm, features, params)
    if not np.all(np.isfinite(H)):
        raise NonFinite("GCN embeddings are not finite")
    return H


def build_precision(H, Wz, epsilon: float = EPSILON):
    """``Z = H Wz`` and ``S = Z Z^T + eps I``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    Z = np.asarray(H, dtype=float) @ np.asarray(Wz, dtype=float)
    S = Z @ Z.T + epsilon * np.eye(Z.shape[0])
    return Z, 0.5 * (S + S.T)


def _capacitance_factor(Z, epsilon):
    """Cholesky factor of ``eps I_r + Z^T Z``."""
    r = Z.shape[1]
    return linalg.cho_factor(epsilon * np.eye(r) + Z.T @ Z, lower=True)


def logdet_lowrank(Z, epsilon: float = EPSILON) -> float:
    """``log det(Z Z^T + eps I)`` via the determinant lemma:
    ``N log eps + log det(I_r + Z^T Z / eps)``."""
    Z = np.asarray(Z, dtype=float)
    N, r = Z.shape
    M = np.eye(r) + (Z.T @ Z) / epsilon
    L = linalg.cholesky(M, lower=True)
    return float(N * np.log(epsilon) + 2.0 * np.log(np.diag(L)).sum())


def woodbury_solve(Z, epsilon: float, v) -> np.ndarray:
    """``(Z Z^T + eps I)^{-1} v`` by the Woodbury identity.

    Uses ``(I_r + Z^T Z / eps)^{-1} = eps (eps I_r + Z^T Z)^{-1}`` so the
    result is ``(v - Z (eps I_r + Z^T Z)^{-1} Z^T v) / eps``. ``v`` may be a
    vector or an (N, k) matrix.
    """
    Z = np.asarray(Z, dtype=float)
    v = np.asarray(v, dtype=float)
    cf = _capacitance_factor(Z, epsilon)
    return (v - Z @ linalg.cho_solve(cf, Z.T @ v)) / epsilon


def woodbury_inverse(Z, epsilon: float = EPSILON) -> np.ndarray:
    Sinv = woodbury_solve(Z, epsilon, np.eye(np.asarray(Z).shape[0]))
    return 0.5 * (Sinv + Sinv.T)


# --------------------------------------------------------------------------
# objective

def nll_loss(X, Bnorm, features, params: GcnParams, lambda_frob: float, mu=None):
    """Penalized Gaussian negative log-likelihood and its gradients.

    ``J' = 1/2 sum_t (x_t - mu_T)^T S (x_t - mu_T) - T/2 log det S
    + lambda ||S||_F^2`` with ``mu_T = mu + S^{-1} h`` and the constant
    ``TN/2 log 2 pi`` dropped. ``mu`` defaults to the column means of X.

    Returns
    -------
    loss : float
    grads : dict
        Same keys as ``params.blocks()``.
    """
    X = np.asarray(X, dtype=float)
    T, N = X.shape
    mu = X.mean(axis=0) if mu is None else np.asarray(mu, dtype=float)
    eps = params.epsilon

    H, cache = _forward(Bnorm, features, params)
    if H.shape[0] != N:
        raise DimensionMismatch(f"graph has {H.shape[0]} nodes, data has {N} columns")
    Z = H @ params.Wz
    h = H @ params.field_map
    S = Z @ Z.T + eps * np.eye(N)
    # S^{-1} h split along col(Z) and its complement avoids the 1/eps cancellation
    Qz, Rz = np.linalg.qr(Z)
    cap_col = linalg.cho_factor(Rz @ Rz.T + eps * np.eye(Rz.shape[0]), lower=True)
    c = Qz.T @ h
    h_perp = h - Qz @ c
    u = linalg.cho_solve(cap_col, c)
    m = h_perp / eps + Qz @ u
    hSh = (h_perp @ h_perp) / eps + c @ u
    # push-through identity: S^{-1} Z = Z (eps I + Z^T Z)^{-1}
    SigmaZ = Z @ linalg.cho_solve(_capacitance_factor(Z, eps), np.eye(Z.shape[1]))

    D = X - mu
    C = D.T @ D
    s = D.sum(axis=0)
    logdet = logdet_lowrank(Z, eps)
    quad = 0.5 * np.sum(S * C) - h @ s + 0.5 * T * hSh
    loss = quad - 0.5 * T * logdet + lambda_frob * np.sum(S * S)

    G_S_Z = (0.5 * C @ Z - 0.5 * T * np.outer(m, m @ Z) - 0.5 * T * SigmaZ
             + 2.0 * lambda_frob * (Z @ (Z.T @ Z) + eps * Z))
    dZ = 2.0 * G_S_Z
    dh = T * m - s

    grads = {"Wz": H.T @ dZ, "field_map": H.T @ dh}
    dA = dZ @ params.Wz.T + np.outer(dh, params.field_map)
    Bnorm = np.asarray(Bnorm, dtype=float)
    for i in range(len(cache) - 1, -1, -1):
        BA, P, act = cache[i]
        dP = dA * _ACTIVATIONS[act][1](P)
        W = params.layer_weights[i]
        grads[f"layer_{i}"] = BA.T @ dP
        dA = Bnorm.T @ (dP @ W.T)

    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise NonFinite("loss or gradient is not finite")
    return float(loss), grads


def gaussian_model(X, Bnorm, features, params: GcnParams, mu=None) -> GaussianEnergyModel:
    """The continuous energy model defined by trained GCN parameters."""
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0) if mu is None else np.asarray(mu, dtype=float)
    H = gcn_forward(Bnorm, features, params)
    _, S = build_precision(H, params.Wz, params.epsilon)
    return GaussianEnergyModel(mu=mu, S=S, h=H @ params.field_map,
                               meta={"rank": params.rank, "epsilon": params.epsilon})


# --------------------------------------------------------------------------
# training

def _global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))


def _clip(grads: dict, threshold: float, mode: str) -> dict:
    if mode == "block":
        out = {}
        for k, g in grads.items():
            n = np.linalg.norm(g)
            out[k] = g * (threshold / n) if n > threshold else g
        return out
    n = _global_norm(grads)
    if n > threshold:
        return {k: g * (threshold / n) for k, g in grads.items()}
    return grads


def train(X, graph: FunctionalGraph, features, config: TrainConfig = TrainConfig(),
          seed=0, rank: int = RANK_CANDIDATES[0], params: GcnParams | None = None,
          epsilon: float = EPSILON) -> TrainResult:
    """Fit GCN parameters with Adam on the penalized NLL.

    One epoch is one full-batch step. Training stops once the change in
    loss and the change in gradient norm both stay below
    ``config.convergence_tol`` for ``config.patience_epochs`` consecutive
    epochs; otherwise it runs ``max_epochs`` and warns. The lowest-loss
    iterate is returned.
    """
    X = as_timeseries(X)
    features = np.asarray(features, dtype=float)
    if params is None:
        params = init_params(features.shape[1], min(rank, X.shape[1]),
                             hidden=config.hidden_width, epsilon=epsilon, seed=seed)
    Bnorm = graph.Bnorm
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    blocks = {k: v.copy() for k, v in params.blocks().items()}
    m1 = {k: np.zeros_like(v) for k, v in blocks.items()}
    m2 = {k: np.zeros_like(v) for k, v in blocks.items()}

    loss, grads = nll_loss(X, Bnorm, features, params, config.lambda_frob)
    result = TrainResult(params=params, initial_loss=loss, best_loss=loss)
    gnorm = _global_norm(grads)
    result.trace.append((0, loss, gnorm))
    calm = 0
    current = params
    for epoch in range(1, config.max_epochs + 1):
        g = _clip(grads, config.clip_threshold, config.clip_mode)
        for k in blocks:
            m1[k] = beta1 * m1[k] + (1 - beta1) * g[k]
            m2[k] = beta2 * m2[k] + (1 - beta2) * g[k] ** 2
            mhat = m1[k] / (1 - beta1 ** epoch)
            vhat = m2[k] / (1 - beta2 ** epoch)
            blocks[k] = blocks[k] - config.learning_rate * mhat / (np.sqrt(vhat) + adam_eps)
        current = current.with_blocks({k: v.copy() for k, v in blocks.items()})
        new_loss, grads = nll_loss(X, Bnorm, features, current, config.lambda_frob)
        new_gnorm = _global_norm(grads)
        result.trace.append((epoch, new_loss, new_gnorm))
        if new_loss < result.best_loss:
            result.best_loss, result.best_epoch, result.params = new_loss, epoch, current
        if (abs(new_loss - loss) < config.convergence_tol
                and abs(new_gnorm - gnorm) < config.convergence_tol):
            calm += 1
        else:
            calm = 0
        loss, gnorm = new_loss, new_gnorm
        if calm >= config.patience_epochs:
            result.converged = True
            break
    if not result.converged:
        warnings.warn(f"GCN training hit max_epochs={config.max_epochs}; "
                      f"returning best iterate (epoch {result.best_epoch})",
                      NotConvergedWarning, stacklevel=2)
    return result


def heldout_nll(X_test, X_train, graph, features, params: GcnParams) -> float:
    """Mean exact Gaussian NLL (with the log 2 pi constant) of held-out rows."""
    model = gaussian_model(X_train, graph.Bnorm, features, params)
    return float(-np.mean(log_density(X_test, model)))


def time_blocks(T: int, n_folds: int = 3) -> list:
    """Contiguous index blocks covering 0..T-1."""
    return [np.asarray(b) for b in np.array_split(np.arange(T), n_folds)]


def select_rank(X, graph: FunctionalGraph, features, candidates=RANK_CANDIDATES,
                config: TrainConfig = TrainConfig(), seed=0, n_folds: int = 3,
                epsilon: float = EPSILON) -> tuple[int, dict]:
    """Time-blocked cross-validated choice of the precision rank.

    Candidates above N are clipped to N. Returns the rank with the lowest
    mean held-out NLL (ties to the smaller rank) and the per-rank scores.
    """
    X = as_timeseries(X)
    T, N = X.shape
    cands = sorted({min(int(r), N) for r in candidates})
    if not cands:
        raise ValueError("no rank candidates given")
    if T < n_folds * (N + 1):
        raise TooShort(f"T={T} is too short for {n_folds}-fold CV at N={N}")
    if len(cands) == 1:
        return cands[0], {cands[0]: float("nan")}

    blocks = time_blocks(T, n_folds)
    scores = {}
    for r in cands:
        fold_scores = []
        for f, test_idx in enumerate(blocks):
            train_idx = np.concatenate([b for j, b in enumerate(blocks) if j != f])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", NotConvergedWarning)
                res = train(X[train_idx], graph, features, config,
                            seed=derive_seed(seed, "fold", f), rank=r, epsilon=epsilon)
            fold_scores.append(heldout_nll(X[test_idx], X[train_idx], graph, features,
                                           res.params))
        scores[r] = float(np.mean(fold_scores))
    best = min(cands, key=lambda r: (scores[r], r))
    return best, scores
